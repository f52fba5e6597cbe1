"""Readers and writers for KITTI object-benchmark files.

Covers ``label_2`` text, ``calib`` text, ``velodyne`` binaries and a
``poses.txt`` with one 3x4 row-major pose per line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .datamodel import CalibrationSet, PointCloud, Sequence, _read_text, read_points, write_points
from .errors import (
    FieldCountError,
    InvariantViolation,
    MalformedCalib,
    MalformedPose,
    NonRigidPose,
    NumericParseError,
)
from .geometry import ProjectionMatrix, Transform, wrap_heading

DONT_CARE = "DontCare"


@dataclass(frozen=True)
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox2d: tuple[float, float, float, float]
    dims_hwl: tuple[float, float, float]
    location: tuple[float, float, float]
    rotation_y: float
    score: Optional[float] = None

    def __post_init__(self):
        if not self.type or any(ch.isspace() for ch in self.type):
            raise InvariantViolation(f"label type must be a single token, got {self.type!r}")
        bbox = tuple(float(v) for v in self.bbox2d)
        dims = tuple(float(v) for v in self.dims_hwl)
        loc = tuple(float(v) for v in self.location)
        if len(bbox) != 4 or len(dims) != 3 or len(loc) != 3:
            raise InvariantViolation("bbox2d needs 4 values, dims_hwl and location need 3")
        scalars = (self.truncated, self.alpha, self.rotation_y) + bbox + dims + loc
        if not all(math.isfinite(float(v)) for v in scalars):
            raise InvariantViolation("label fields must be finite")
        if self.type != DONT_CARE and not all(d > 0 for d in dims):
            raise InvariantViolation(f"dimensions must be positive, got {dims}")
        if not (-math.pi <= float(self.rotation_y) < math.pi):
            raise InvariantViolation(f"rotation_y {self.rotation_y!r} outside [-pi, pi)")
        if bbox[0] > bbox[2] or bbox[1] > bbox[3]:
            raise InvariantViolation(f"bbox2d must satisfy left<=right, top<=bottom, got {bbox}")
        if self.score is not None and not math.isfinite(float(self.score)):
            raise InvariantViolation("score must be finite")
        object.__setattr__(self, "bbox2d", bbox)
        object.__setattr__(self, "dims_hwl", dims)
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "truncated", float(self.truncated))
        object.__setattr__(self, "occluded", int(self.occluded))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "rotation_y", float(self.rotation_y))
        if self.score is not None:
            object.__setattr__(self, "score", float(self.score))


def _num(tok: str, line=None) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise NumericParseError(f"cannot parse {tok!r} as a number", line=line) from None
    if not math.isfinite(v):
        raise NumericParseError(f"non-finite value {tok!r}", line=line)
    return v


def parse_label_line(line: str, lineno: Optional[int] = None) -> KittiLabel:
    """Parse one label line: 15 fields, or 16 with a trailing score.

    Angles are wrapped into ``[-pi, pi)``; KITTI files use the closed
    interval and the six-decimal text form can land just outside.
    """
    toks = line.split()
    if len(toks) not in (15, 16):
        raise FieldCountError(f"expected 15 or 16 fields, got {len(toks)}", line=lineno)
    v = [_num(t, lineno) for t in toks[1:]]
    occ = v[1]
    if not occ.is_integer():
        raise NumericParseError(f"occluded must be an integer, got {toks[2]!r}", line=lineno)
    try:
        return KittiLabel(
            type=toks[0],
            truncated=v[0],
            occluded=int(occ),
            alpha=wrap_heading(v[2]),
            bbox2d=tuple(v[3:7]),
            dims_hwl=tuple(v[7:10]),
            location=tuple(v[10:13]),
            rotation_y=wrap_heading(v[13]),
            score=v[14] if len(v) == 15 else None,
        )
    except InvariantViolation as e:
        if lineno is not None:
            raise InvariantViolation(f"line {lineno}: {e}") from None
        raise


def serialize_label_line(label: KittiLabel) -> str:
    fields = [
        label.type,
        "%.6f" % label.truncated,
        "%d" % label.occluded,
        "%.6f" % label.alpha,
        *("%.2f" % x for x in label.bbox2d),
        *("%.6f" % x for x in label.dims_hwl),
        *("%.6f" % x for x in label.location),
        "%.6f" % label.rotation_y,
    ]
    if label.score is not None:
        fields.append("%.6f" % label.score)
    return " ".join(fields)


def read_labels(path) -> list[KittiLabel]:
    path = Path(path)
    out = []
    for lineno, line in enumerate(_read_text(path).splitlines(), 1):
        if line.strip():
            try:
                out.append(parse_label_line(line, lineno))
            except (FieldCountError, NumericParseError, InvariantViolation) as e:
                raise type(e)(f"{path}: {e}") from None
    return out


def write_labels(labels, path) -> None:
    Path(path).write_text("".join(serialize_label_line(l) + "\n" for l in labels), encoding="ascii")


# ---------------------------------------------------------------- velodyne


def read_velodyne(path, stride: int = 4) -> PointCloud:
    """Little-endian float32 ``x y z intensity [rel_time]`` records."""
    return read_points(path, stride)


def write_velodyne(pc: PointCloud, path) -> None:
    write_points(pc, path)


# ---------------------------------------------------------------- calibration


def _fmt(vals) -> str:
    # 17 significant digits round-trips every float64
    return " ".join("%.16e" % v for v in vals)


def write_calib(c: CalibrationSet, path) -> None:
    """Front camera goes to P2, with copies in P0, P1 and P3."""
    p = _fmt(c.p_img.matrix.reshape(12))
    lines = [f"P{i}: {p}" for i in range(4)]
    lines.append("R0_rect: " + _fmt(c.r_rect.rotation.reshape(9)))
    lines.append("Tr_velo_to_cam: " + _fmt(c.t_ref.rows()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_calib(path, image_size: tuple[int, int] = (1920, 1280)) -> CalibrationSet:
    """Read a KITTI calib file; KITTI does not store image size, so it is passed in."""
    path = Path(path)
    text = _read_text(path)
    entries: dict[str, tuple[int, list[str]]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise MalformedCalib("line has no 'key:' prefix", path, lineno)
        entries[key.strip()] = (lineno, rest.split())

    def values(key, n):
        if key not in entries:
            raise MalformedCalib(f"missing {key}", path)
        lineno, toks = entries[key]
        if len(toks) != n:
            raise MalformedCalib(f"{key} needs {n} values, got {len(toks)}", path, lineno)
        try:
            out = [float(t) for t in toks]
        except ValueError:
            raise MalformedCalib(f"{key} has a non-numeric value", path, lineno) from None
        if not all(math.isfinite(x) for x in out):
            raise MalformedCalib(f"{key} has a non-finite value", path, lineno)
        return out, lineno

    p2, _ = values("P2", 12)
    r0, r0_line = values("R0_rect", 9)
    tr, tr_line = values("Tr_velo_to_cam", 12)
    m = np.eye(4)
    m[:3, :3] = np.reshape(r0, (3, 3))
    try:
        r_rect = Transform(m)
    except NonRigidPose as e:
        raise MalformedCalib(f"R0_rect: {e}", path, r0_line) from None
    try:
        t_ref = Transform.from_rows(tr)
    except NonRigidPose as e:
        raise MalformedCalib(f"Tr_velo_to_cam: {e}", path, tr_line) from None
    return CalibrationSet(
        p_img=ProjectionMatrix(np.reshape(p2, (3, 4))),
        t_ref=t_ref,
        r_rect=r_rect,
        image_width=image_size[0],
        image_height=image_size[1],
    )


# ---------------------------------------------------------------- poses


def format_pose(t: Transform) -> str:
    return " ".join("%.12e" % v for v in t.rows())


def write_poses(seq_or_poses, path) -> None:
    """One line per frame: 12 reals, the top three rows of the SDC->global pose."""
    if isinstance(seq_or_poses, Sequence):
        poses = [f.pose for f in seq_or_poses.frames]
    else:
        poses = list(seq_or_poses)
    Path(path).write_text("".join(format_pose(p) + "\n" for p in poses), encoding="ascii")


def read_poses(path) -> list[Transform]:
    path = Path(path)
    out = []
    for lineno, line in enumerate(_read_text(path).splitlines(), 1):
        if not line.strip():
            continue
        toks = line.split()
        if len(toks) != 12:
            raise MalformedPose(f"expected 12 values, got {len(toks)}", path, lineno)
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            raise MalformedPose("non-numeric value", path, lineno) from None
        try:
            out.append(Transform.from_rows(vals))
        except NonRigidPose as e:
            raise NonRigidPose(f"{path}:{lineno}: {e}") from None
    return out
