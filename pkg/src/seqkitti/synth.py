"""Deterministic synthetic sequences with known ego motion and box-surface points.

Randomness comes from numpy's ``PCG64`` bit generator seeded with
``SceneSpec.seed`` (``numpy.random.Generator(numpy.random.PCG64(seed))``).
Draw order per frame, per object: face indices (``choice`` over the six
faces weighted by area), face coordinates (``random((n, 2))``), intensities
(``random(n)``) and, when ``jitter > 0``, Gaussian offsets
(``normal(0, jitter, (n, 3))``). Static landmarks consume no draws.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .datamodel import Box3D, BoxClass, CalibrationSet, Frame, PointCloud, Sequence
from .errors import InvariantViolation
from .geometry import Transform, invert, transform_points, wrap_heading

# Points sit this far inside the faces so rounding never pushes them out of their box.
SURFACE_INSET = 1e-10


@dataclass(frozen=True)
class EgoPath:
    """Constant speed along the SDC +x axis with constant yaw rate, starting at the origin."""

    speed: float = 0.0
    yaw_rate: float = 0.0

    def pose(self, t: float) -> Transform:
        yaw = self.yaw_rate * t
        if abs(self.yaw_rate) < 1e-12:
            x, y = self.speed * t, 0.0
        else:
            r = self.speed / self.yaw_rate
            x, y = r * math.sin(yaw), r * (1.0 - math.cos(yaw))
        c, s = math.cos(yaw), math.sin(yaw)
        return Transform(np.array([[c, -s, 0, x], [s, c, 0, y], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float))


@dataclass(frozen=True)
class ObjectSpec:
    cls: BoxClass
    dims: tuple[float, float, float]
    position: tuple[float, float, float]
    heading: float = 0.0
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    points_per_frame: int = 200

    def __post_init__(self):
        object.__setattr__(self, "cls", BoxClass.parse(self.cls))
        dims = tuple(float(v) for v in self.dims)
        if len(dims) != 3 or not all(d > 0 for d in dims):
            raise InvariantViolation(f"object dims must be three positive values, got {self.dims!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        if int(self.points_per_frame) != self.points_per_frame or self.points_per_frame < 0:
            raise InvariantViolation(f"points_per_frame must be a non-negative integer, got {self.points_per_frame!r}")

    def pose(self, t: float) -> Transform:
        """Object -> global transform at time ``t``."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        p = np.asarray(self.position) + t * np.asarray(self.velocity)
        return Transform(np.array([[c, -s, 0, p[0]], [s, c, 0, p[1]], [0, 0, 1, p[2]], [0, 0, 0, 1]], dtype=float))

    @property
    def surface_area(self) -> float:
        l, w, h = self.dims
        return 2.0 * (l * w + l * h + w * h)

    @property
    def sample_spacing(self) -> float:
        """Mean spacing of surface samples, ``sqrt(area / points_per_frame)``."""
        if self.points_per_frame == 0:
            return math.inf
        return math.sqrt(self.surface_area / self.points_per_frame)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_frames: int = 4
    frame_period: float = 0.1
    ego: EgoPath = EgoPath()
    objects: tuple[ObjectSpec, ...] = ()
    jitter: float = 0.0
    sequence_id: str = "synth"
    landmarks: tuple[tuple[float, float, float], ...] = ()
    """Global points seen in every frame, appended after the object points."""
    calib: Optional[CalibrationSet] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.frame_period > 0:
            raise InvariantViolation(f"frame_period must be positive, got {self.frame_period!r}")
        if int(self.n_frames) != self.n_frames or self.n_frames < 1:
            raise InvariantViolation(f"n_frames must be a positive integer, got {self.n_frames!r}")
        if self.jitter < 0:
            raise InvariantViolation("jitter must be non-negative")
        object.__setattr__(self, "objects", tuple(self.objects))
        lms = tuple(tuple(float(v) for v in p) for p in self.landmarks)
        if not all(len(p) == 3 and all(math.isfinite(v) for v in p) for p in lms):
            raise InvariantViolation("landmarks must be finite 3D points")
        object.__setattr__(self, "landmarks", lms)

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        try:
            ego = d.get("ego", {})
            objs = [
                ObjectSpec(
                    cls=o["class"],
                    dims=tuple(o["dims"]),
                    position=tuple(o["position"]),
                    heading=float(o.get("heading", 0.0)),
                    velocity=tuple(o.get("velocity", (0.0, 0.0, 0.0))),
                    points_per_frame=int(o.get("points_per_frame", 200)),
                )
                for o in d.get("objects", [])
            ]
            return cls(
                seed=int(d.get("seed", 0)),
                n_frames=int(d.get("n_frames", 4)),
                frame_period=float(d.get("frame_period", 0.1)),
                ego=EgoPath(float(ego.get("speed", 0.0)), float(ego.get("yaw_rate", 0.0))),
                objects=tuple(objs),
                jitter=float(d.get("jitter", 0.0)),
                sequence_id=str(d.get("id", "synth")),
                landmarks=tuple(tuple(p) for p in d.get("landmarks", [])),
                calib=CalibrationSet.default_front() if d.get("calib", "default") == "default" else None,
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise InvariantViolation(f"bad scene spec: {e!r}") from None

    def timestamp(self, i: int) -> float:
        return i * self.frame_period


def load_scene_spec(path) -> SceneSpec:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise InvariantViolation(f"{path}: invalid JSON ({e})") from None
    if not isinstance(d, dict):
        raise InvariantViolation(f"{path}: scene spec must be a JSON object")
    return SceneSpec.from_dict(d)


@dataclass(frozen=True, eq=False)
class SynthScene:
    sequence: Sequence
    ground_truth: tuple[tuple[Box3D, ...], ...]
    trajectories: tuple[tuple[Transform, ...], ...]
    """``trajectories[k][i]`` is object ``k``'s object->global pose at frame ``i``."""
    object_points: tuple[tuple[np.ndarray, ...], ...]
    """``object_points[i][k]`` indexes frame ``i``'s cloud rows sampled from object ``k``."""
    landmark_points: tuple[np.ndarray, ...] = ()
    """``landmark_points[i]`` indexes frame ``i``'s landmark rows, in landmark order."""


def sample_box_surface(rng: np.random.Generator, dims, n: int, inset: float = SURFACE_INSET) -> np.ndarray:
    """``n`` points uniformly distributed over the faces of a centred box."""
    l, w, h = dims
    hx, hy, hz = l / 2 - inset, w / 2 - inset, h / 2 - inset
    areas = np.array([w * h, w * h, l * h, l * h, l * w, l * w])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.random((n, 2)) * 2.0 - 1.0
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    half = np.array([hx, hy, hz])
    for a in range(3):
        on = axis == a
        other = [k for k in range(3) if k != a]
        pts[on, a] = sign[on] * half[a]
        pts[on, other[0]] = uv[on, 0] * half[other[0]]
        pts[on, other[1]] = uv[on, 1] * half[other[1]]
    return pts


def generate(spec: SceneSpec) -> SynthScene:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    frames, gts, index_sets, landmark_sets = [], [], [], []
    landmarks = np.array(spec.landmarks, dtype=np.float64).reshape(-1, 3)
    trajectories = [[] for _ in spec.objects]
    for i in range(spec.n_frames):
        t = spec.timestamp(i)
        ego = spec.ego.pose(t)
        to_sdc = invert(ego)
        ego_yaw = spec.ego.yaw_rate * t
        chunks, inten, boxes, idx = [], [], [], []
        start = 0
        for k, obj in enumerate(spec.objects):
            obj_pose = obj.pose(t)
            trajectories[k].append(obj_pose)
            n = int(obj.points_per_frame)
            local = sample_box_surface(rng, obj.dims, n)
            intensity = rng.random(n)
            if spec.jitter > 0:
                local = local + rng.normal(0.0, spec.jitter, (n, 3))
            sdc = transform_points(to_sdc @ obj_pose, local) if n else np.zeros((0, 3))
            chunks.append(sdc)
            inten.append(intensity)
            idx.append(np.arange(start, start + n))
            start += n
            center = transform_points(to_sdc, np.asarray(obj_pose.translation))
            boxes.append(
                Box3D(
                    center=tuple(center),
                    length=obj.dims[0],
                    width=obj.dims[1],
                    height=obj.dims[2],
                    heading=wrap_heading(obj.heading - ego_yaw),
                    cls=obj.cls,
                    num_points=0,
                )
            )
        chunks.append(transform_points(to_sdc, landmarks).reshape(-1, 3))
        inten.append(np.ones(len(landmarks)))
        landmark_sets.append(np.arange(start, start + len(landmarks)))
        cloud = PointCloud(np.concatenate(chunks), np.concatenate(inten))
        if boxes:
            counts = kernels.points_in_boxes(np.ascontiguousarray(cloud.xyz), np.stack([b.as_row() for b in boxes]))
            boxes = [b.replace(num_points=int(c)) for b, c in zip(boxes, counts)]
        frames.append(Frame(t, ego, cloud, tuple(boxes)))
        gts.append(tuple(boxes))
        index_sets.append(tuple(idx))
    seq = Sequence(spec.sequence_id, tuple(frames), spec.calib)
    return SynthScene(
        sequence=seq,
        ground_truth=tuple(gts),
        trajectories=tuple(tuple(tr) for tr in trajectories),
        object_points=tuple(index_sets),
        landmark_points=tuple(landmark_sets),
    )
