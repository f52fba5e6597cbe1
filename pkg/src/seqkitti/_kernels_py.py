"""Pure-Python/numpy implementations of the compiled kernels.

Used when the extension is not built. Results match ``_kernels`` exactly
for voxel assignment and point counting, and to rounding for areas.
"""

import math

import numpy as np

BACKEND = "python"


def voxel_assign(xyz, lo, hi, size, grid, max_points, max_voxels):
    xyz = np.asarray(xyz, dtype=np.float64)
    n = len(xyz)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    size = np.asarray(size, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.int64)
    vop = np.full(n, -1, dtype=np.int64)
    rank = np.full(n, -1, dtype=np.int64)
    valid = np.all((xyz >= lo) & (xyz <= hi), axis=1)
    pidx = np.flatnonzero(valid)
    if len(pidx) == 0 or max_voxels <= 0:
        return vop, rank, np.zeros((0, 3), dtype=np.int32), np.zeros(0, dtype=np.int32)
    ijk = np.floor((xyz[pidx] - lo) / size).astype(np.int64)
    ijk = np.clip(ijk, 0, grid - 1)
    keys = (ijk[:, 0] * grid[1] + ijk[:, 1]) * grid[2] + ijk[:, 2]
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    vid_of_unique = np.empty(len(first), dtype=np.int64)
    vid_of_unique[order] = np.arange(len(first))
    vid = vid_of_unique[inverse.reshape(-1)]

    keep = vid < max_voxels
    pidx, vid = pidx[keep], vid[keep]
    m = min(len(first), max_voxels)
    coords = ijk[first[order[:m]]].astype(np.int32)

    srt = np.argsort(vid, kind="stable")
    vs = vid[srt]
    starts = np.searchsorted(vs, np.arange(m))
    r = np.empty(len(vid), dtype=np.int64)
    r[srt] = np.arange(len(vid)) - starts[vs]
    ok = r < max_points
    vop[pidx[ok]] = vid[ok]
    rank[pidx[ok]] = r[ok]
    counts = np.minimum(np.bincount(vid, minlength=m), max_points).astype(np.int32)
    return vop, rank, coords, counts


def points_in_boxes(xyz, boxes, mask=None):
    xyz = np.asarray(xyz, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    if mask is not None:
        xyz = xyz[np.asarray(mask, dtype=bool)]
    out = np.zeros(len(boxes), dtype=np.int64)
    for b, (cx, cy, cz, l, w, h, th) in enumerate(boxes):
        c, s = math.cos(th), math.sin(th)
        dx = xyz[:, 0] - cx
        dy = xyz[:, 1] - cy
        dz = xyz[:, 2] - cz
        u = dx * c + dy * s
        v = -dx * s + dy * c
        inside = (np.abs(u) <= 0.5 * l) & (np.abs(v) <= 0.5 * w) & (np.abs(dz) <= 0.5 * h)
        out[b] = int(np.count_nonzero(inside))
    return out


def _corners(x, y, l, w, th):
    c, s = math.cos(th), math.sin(th)
    hl, hw = 0.5 * l, 0.5 * w
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    return [(x + lx * c - ly * s, y + lx * s + ly * c) for lx, ly in local]


def _clip_area(poly, clip):
    """Sutherland-Hodgman: clip convex ``poly`` by the CCW convex ``clip``."""
    for e in range(len(clip)):
        x0, y0 = clip[e]
        x1, y1 = clip[(e + 1) % len(clip)]
        ex, ey = x1 - x0, y1 - y0
        dist = [ex * (py - y0) - ey * (px - x0) for px, py in poly]
        out = []
        n = len(poly)
        for k in range(n):
            j = (k + 1) % n
            if dist[k] >= 0:
                out.append(poly[k])
            if (dist[k] >= 0) != (dist[j] >= 0):
                t = dist[k] / (dist[k] - dist[j])
                px, py = poly[k]
                qx, qy = poly[j]
                out.append((px + t * (qx - px), py + t * (qy - py)))
        poly = out
        if len(poly) < 3:
            return 0.0
    area = 0.0
    for k in range(len(poly)):
        j = (k + 1) % len(poly)
        area += poly[k][0] * poly[j][1] - poly[j][0] * poly[k][1]
    return abs(area) * 0.5


def bev_intersection(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 5)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 5)
    out = np.zeros((len(a), len(b)))
    b_corners = [_corners(*row) for row in b.tolist()]
    rb = [0.5 * math.sqrt(row[2] ** 2 + row[3] ** 2) for row in b.tolist()]
    for i, ra_row in enumerate(a.tolist()):
        ax, ay, al, aw, _ = ra_row
        ca = _corners(*ra_row)
        ra = 0.5 * math.sqrt(al * al + aw * aw)
        for j, rb_row in enumerate(b.tolist()):
            if ra_row == rb_row:
                out[i, j] = al * aw
                continue
            dx, dy = ax - rb_row[0], ay - rb_row[1]
            if dx * dx + dy * dy > (ra + rb[j]) ** 2:
                continue
            out[i, j] = _clip_area(ca, b_corners[j])
    return out
