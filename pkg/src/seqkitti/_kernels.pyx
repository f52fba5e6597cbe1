# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled inner loops. Semantics must match ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, cos, sin, fabs, sqrt
from libcpp.unordered_map cimport unordered_map
from cython.operator cimport dereference as deref

cnp.import_array()

BACKEND = "cython"


def _f64(a, cols):
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, cols))


def voxel_assign(xyz, lo, hi, size, grid, max_points, max_voxels):
    return _voxel_assign(_f64(xyz, 3), lo, hi, size, grid, max_points, max_voxels)


def points_in_boxes(xyz, boxes, mask=None):
    return _points_in_boxes(_f64(xyz, 3), _f64(boxes, 7), mask)


def bev_intersection(a, b):
    return _bev_intersection(_f64(a, 5), _f64(b, 5))


def _voxel_assign(const double[:, ::1] xyz, lo, hi, size, grid, Py_ssize_t max_points, Py_ssize_t max_voxels):
    """Assign each point a voxel slot and a rank within that voxel.

    Returns ``(voxel_of_point, rank, coords, counts)``; dropped points get -1.
    """
    cdef Py_ssize_t n = xyz.shape[0]
    cdef double lx = lo[0], ly = lo[1], lz = lo[2]
    cdef double hx = hi[0], hy = hi[1], hz = hi[2]
    cdef double sx = size[0], sy = size[1], sz = size[2]
    cdef long long gx = grid[0], gy = grid[1], gz = grid[2]
    cdef cnp.int64_t[::1] vop = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] rank = np.full(n, -1, dtype=np.int64)
    cdef Py_ssize_t cap = min(max_voxels, n)
    coords_arr = np.empty((cap, 3), dtype=np.int32)
    counts_arr = np.zeros(cap, dtype=np.int32)
    cdef cnp.int32_t[:, ::1] coords = coords_arr
    cdef cnp.int32_t[::1] counts = counts_arr
    cdef unordered_map[long long, Py_ssize_t] table
    cdef unordered_map[long long, Py_ssize_t].iterator it
    cdef Py_ssize_t i, vid, m = 0
    cdef double x, y, z
    cdef long long ix, iy, iz, key
    with nogil:
        for i in range(n):
            x = xyz[i, 0]
            y = xyz[i, 1]
            z = xyz[i, 2]
            if not (x >= lx and x <= hx and y >= ly and y <= hy and z >= lz and z <= hz):
                continue
            ix = <long long>floor((x - lx) / sx)
            iy = <long long>floor((y - ly) / sy)
            iz = <long long>floor((z - lz) / sz)
            if ix >= gx:
                ix = gx - 1
            if iy >= gy:
                iy = gy - 1
            if iz >= gz:
                iz = gz - 1
            if ix < 0:
                ix = 0
            if iy < 0:
                iy = 0
            if iz < 0:
                iz = 0
            key = (ix * gy + iy) * gz + iz
            it = table.find(key)
            if it == table.end():
                if m >= cap:
                    continue
                vid = m
                table[key] = vid
                coords[vid, 0] = <cnp.int32_t>ix
                coords[vid, 1] = <cnp.int32_t>iy
                coords[vid, 2] = <cnp.int32_t>iz
                m += 1
            else:
                vid = deref(it).second
            if counts[vid] >= max_points:
                continue
            vop[i] = vid
            rank[i] = counts[vid]
            counts[vid] += 1
    return np.asarray(vop), np.asarray(rank), coords_arr[:m].copy(), counts_arr[:m].copy()


def _points_in_boxes(const double[:, ::1] xyz, const double[:, ::1] boxes, mask=None):
    """Per-box count of points inside (closed faces). ``boxes`` rows are ``cx cy cz l w h heading``."""
    cdef Py_ssize_t n = xyz.shape[0], nb = boxes.shape[0]
    cdef const cnp.uint8_t[::1] keep
    cdef bint use_mask = mask is not None
    if use_mask:
        keep = np.ascontiguousarray(mask, dtype=np.uint8)
    out_arr = np.zeros(nb, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t b, i
    cdef double cx, cy, cz, hl, hw, hh, c, s, dx, dy, dz, u, v, r2
    cdef cnp.int64_t cnt
    with nogil:
        for b in range(nb):
            cx = boxes[b, 0]
            cy = boxes[b, 1]
            cz = boxes[b, 2]
            hl = boxes[b, 3] * 0.5
            hw = boxes[b, 4] * 0.5
            hh = boxes[b, 5] * 0.5
            c = cos(boxes[b, 6])
            s = sin(boxes[b, 6])
            r2 = (hl * hl + hw * hw) * 1.0000001 + 1e-12
            cnt = 0
            for i in range(n):
                if use_mask and not keep[i]:
                    continue
                dz = xyz[i, 2] - cz
                if fabs(dz) > hh:
                    continue
                dx = xyz[i, 0] - cx
                dy = xyz[i, 1] - cy
                if dx * dx + dy * dy > r2:
                    continue
                u = dx * c + dy * s
                v = -dx * s + dy * c
                if fabs(u) <= hl and fabs(v) <= hw:
                    cnt += 1
            out[b] = cnt
    return out_arr


cdef inline void _corners(double x, double y, double l, double w, double th, double* px, double* py) noexcept nogil:
    cdef double c = cos(th), s = sin(th)
    cdef double hl = 0.5 * l, hw = 0.5 * w
    cdef double lx[4]
    cdef double ly[4]
    cdef int k
    lx[0] = hl
    ly[0] = hw
    lx[1] = -hl
    ly[1] = hw
    lx[2] = -hl
    ly[2] = -hw
    lx[3] = hl
    ly[3] = -hw
    for k in range(4):
        px[k] = x + lx[k] * c - ly[k] * s
        py[k] = y + lx[k] * s + ly[k] * c


cdef double _clip_area(double* ax, double* ay, double* bx, double* by) noexcept nogil:
    cdef double px[16]
    cdef double py[16]
    cdef double qx[16]
    cdef double qy[16]
    cdef double dist[16]
    cdef int n = 4, m, e, k, j
    cdef double ex, ey, x0, y0, t, area
    for k in range(4):
        px[k] = ax[k]
        py[k] = ay[k]
    for e in range(4):
        x0 = bx[e]
        y0 = by[e]
        ex = bx[(e + 1) % 4] - x0
        ey = by[(e + 1) % 4] - y0
        for k in range(n):
            dist[k] = ex * (py[k] - y0) - ey * (px[k] - x0)
        m = 0
        for k in range(n):
            j = (k + 1) % n
            if dist[k] >= 0:
                qx[m] = px[k]
                qy[m] = py[k]
                m += 1
            if (dist[k] >= 0) != (dist[j] >= 0):
                t = dist[k] / (dist[k] - dist[j])
                qx[m] = px[k] + t * (px[j] - px[k])
                qy[m] = py[k] + t * (py[j] - py[k])
                m += 1
        n = m
        if n < 3:
            return 0.0
        for k in range(n):
            px[k] = qx[k]
            py[k] = qy[k]
    area = 0.0
    for k in range(n):
        j = (k + 1) % n
        area += px[k] * py[j] - px[j] * py[k]
    return fabs(area) * 0.5


def _bev_intersection(const double[:, ::1] a, const double[:, ::1] b):
    """Pairwise BEV intersection areas; rows are ``x y l w heading``."""
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], i, j
    out_arr = np.zeros((na, nb), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double ax[4]
    cdef double ay[4]
    cdef double bx[4]
    cdef double by[4]
    cdef double ra, rb, dx, dy
    with nogil:
        for i in range(na):
            _corners(a[i, 0], a[i, 1], a[i, 2], a[i, 3], a[i, 4], ax, ay)
            ra = 0.5 * sqrt(a[i, 2] * a[i, 2] + a[i, 3] * a[i, 3])
            for j in range(nb):
                if (a[i, 0] == b[j, 0] and a[i, 1] == b[j, 1] and a[i, 2] == b[j, 2]
                        and a[i, 3] == b[j, 3] and a[i, 4] == b[j, 4]):
                    out[i, j] = a[i, 2] * a[i, 3]
                    continue
                rb = 0.5 * sqrt(b[j, 2] * b[j, 2] + b[j, 3] * b[j, 3])
                dx = a[i, 0] - b[j, 0]
                dy = a[i, 1] - b[j, 1]
                if dx * dx + dy * dy > (ra + rb) * (ra + rb):
                    continue
                _corners(b[j, 0], b[j, 1], b[j, 2], b[j, 3], b[j, 4], bx, by)
                out[i, j] = _clip_area(ax, ay, bx, by)
    return out_arr
