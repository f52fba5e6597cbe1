"""Ego-motion-compensated multi-frame accumulation and voxel preprocessing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .datamodel import PointCloud, Sequence, timestamp_ns
from .errors import IndexOutOfRange, InvariantViolation
from .geometry import invert

DEFAULT_N_PREV = 3
DEFAULT_VOXEL_SIZE = (0.1, 0.1, 0.1)
DEFAULT_MAX_POINTS_PER_VOXEL = 10
DEFAULT_MAX_VOXELS = 160_000


class PointRange(NamedTuple):
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float

    @classmethod
    def coerce(cls, value) -> PointRange:
        r = value if isinstance(value, cls) else cls(*(float(v) for v in value))
        if not all(math.isfinite(v) for v in r):
            raise InvariantViolation(f"range bounds must be finite, got {tuple(r)}")
        if not (r.x_min < r.x_max and r.y_min < r.y_max and r.z_min < r.z_max):
            raise InvariantViolation(f"range minimums must be below maximums, got {tuple(r)}")
        return r

    @property
    def lo(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.z_min])

    @property
    def hi(self) -> np.ndarray:
        return np.array([self.x_max, self.y_max, self.z_max])


DEFAULT_RANGE = PointRange(-102.4, 102.4, -102.4, 102.4, -10.0, 15.0)


@dataclass(frozen=True)
class AccumulationConfig:
    n_prev: int = DEFAULT_N_PREV
    range: Optional[PointRange] = None

    def __post_init__(self):
        if int(self.n_prev) != self.n_prev or self.n_prev < 0:
            raise InvariantViolation(f"n_prev must be a non-negative integer, got {self.n_prev!r}")
        if self.range is not None:
            object.__setattr__(self, "range", PointRange.coerce(self.range))


@dataclass(frozen=True)
class VoxelGridConfig:
    voxel_size: tuple[float, float, float] = DEFAULT_VOXEL_SIZE
    max_points_per_voxel: int = DEFAULT_MAX_POINTS_PER_VOXEL
    max_voxels: int = DEFAULT_MAX_VOXELS

    def __post_init__(self):
        size = tuple(float(v) for v in self.voxel_size)
        if len(size) != 3 or not all(v > 0 and math.isfinite(v) for v in size):
            raise InvariantViolation(f"voxel_size must be three positive values, got {self.voxel_size!r}")
        object.__setattr__(self, "voxel_size", size)
        for name in ("max_points_per_voxel", "max_voxels"):
            v = getattr(self, name)
            if int(v) != v or v <= 0:
                raise InvariantViolation(f"{name} must be a positive integer, got {v!r}")


def window(anchor_idx: int, n_prev: int) -> range:
    """Frame indices contributing to ``anchor_idx``, oldest first."""
    return range(max(0, anchor_idx - n_prev), anchor_idx + 1)


def accumulate(seq: Sequence, anchor_idx: int, cfg: AccumulationConfig = AccumulationConfig()) -> PointCloud:
    """Stack the anchor frame with up to ``cfg.n_prev`` preceding frames.

    Each frame's points are carried into the anchor's SDC frame through
    ``inv(T_anchor) @ T_i`` and tagged with ``rel_time = t_i - t_anchor``
    (seconds, nanosecond-exact, so anchor points are exactly 0). Frames are
    concatenated oldest first; the optional range crop runs afterwards.
    """
    n = len(seq.frames)
    if not (0 <= anchor_idx < n):
        raise IndexOutOfRange(f"anchor index {anchor_idx} outside sequence of {n} frames")
    anchor = seq.frames[anchor_idx]
    to_anchor = invert(anchor.pose)
    anchor_ns = timestamp_ns(anchor.timestamp)

    idx = window(anchor_idx, cfg.n_prev)
    sizes = [len(seq.frames[i].cloud) for i in idx]
    total = sum(sizes)
    xyz = np.empty((total, 3))
    intensity = np.empty(total)
    rel_time = np.empty(total)
    start = 0
    for i, size in zip(idx, sizes):
        frame = seq.frames[i]
        stop = start + size
        t = (to_anchor @ frame.pose).matrix
        np.matmul(frame.cloud.xyz, t[:3, :3].T, out=xyz[start:stop])
        xyz[start:stop] += t[:3, 3]
        intensity[start:stop] = frame.cloud.intensity
        rel_time[start:stop] = (timestamp_ns(frame.timestamp) - anchor_ns) / 1e9
        start = stop
    if cfg.range is not None:
        keep = _in_range(xyz, cfg.range)
        xyz, intensity, rel_time = xyz[keep], intensity[keep], rel_time[keep]
    return PointCloud(xyz, intensity, rel_time, validate=False)


def _in_range(xyz: np.ndarray, r: PointRange) -> np.ndarray:
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    return (x >= r.x_min) & (x <= r.x_max) & (y >= r.y_min) & (y <= r.y_max) & (z >= r.z_min) & (z <= r.z_max)


def crop_range(pc: PointCloud, range) -> PointCloud:
    """Keep points inside the closed box ``range``, preserving order."""
    r = PointRange.coerce(range)
    return pc.select(_in_range(pc.xyz, r))


def grid_shape(range, voxel_size) -> tuple[int, int, int]:
    r = PointRange.coerce(range)
    ext = r.hi - r.lo
    # tolerate 204.8 / 0.1 == 2047.9999999999998
    return tuple(max(1, math.ceil(e / s - 1e-6)) for e, s in zip(ext, voxel_size))


@dataclass(frozen=True, eq=False)
class Voxels:
    """Voxelization result.

    ``coords`` (M, 3) holds ``(i, j, k)`` grid indices in first-occurrence
    order, ``points`` (M, max_points, F) the zero-padded point features
    ``x y z intensity [rel_time]`` and ``num_points`` (M,) the fill counts.
    """

    coords: np.ndarray
    points: np.ndarray
    num_points: np.ndarray
    grid: tuple[int, int, int]

    def __len__(self):
        return len(self.coords)

    def as_list(self) -> list[tuple[tuple[int, int, int], np.ndarray]]:
        return [
            (tuple(int(v) for v in c), self.points[m, : self.num_points[m]])
            for m, c in enumerate(self.coords)
        ]


def voxelize(pc: PointCloud, cfg: VoxelGridConfig = VoxelGridConfig(), range=DEFAULT_RANGE, impl=None) -> Voxels:
    """Bin points into ``floor((p - range_min) / voxel_size)`` cells.

    Points outside the closed range are dropped; points on the upper faces
    fall into the last cell. Both caps keep the earliest points/voxels in
    input order. ``impl`` selects a kernel module (defaults to the fastest
    available).
    """
    impl = impl or kernels
    r = PointRange.coerce(range)
    grid = grid_shape(r, cfg.voxel_size)
    vop, rank, coords, counts = impl.voxel_assign(
        np.ascontiguousarray(pc.xyz), r.lo, r.hi, cfg.voxel_size, grid, cfg.max_points_per_voxel, cfg.max_voxels
    )
    feats = pc.records(np.float64)
    pts = np.zeros((len(coords), cfg.max_points_per_voxel, feats.shape[1]))
    kept = vop >= 0
    pts[vop[kept], rank[kept]] = feats[kept]
    return Voxels(coords=coords, points=pts, num_points=counts, grid=grid)
