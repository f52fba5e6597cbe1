"""Dataset types and the native sequential on-disk format.

Native layout of a sequence directory::

    manifest.txt          seqformat v1 / id <str> / one ``frame`` line per frame
    points/NNNNNN.bin     little-endian float32 records, stride 4 or 5
    boxes/NNNNNN.txt      one box per line
    calib.txt             optional camera calibration sidecar
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence as Seq

import numpy as np

from . import geometry
from .errors import (
    DataError,
    FormatError,
    InvariantViolation,
    MalformedBoxFile,
    MalformedManifest,
    MissingFile,
    NonMonotonicTimestamps,
    NonRigidPose,
    NumericParseError,
    TruncatedFile,
    UnknownClass,
)
from .geometry import ProjectionMatrix, Transform

MANIFEST_NAME = "manifest.txt"
CALIB_NAME = "calib.txt"
FORMAT_TAG = "seqformat v1"


class BoxClass(enum.Enum):
    VEHICLE = "Vehicle"
    PEDESTRIAN = "Pedestrian"
    CYCLIST = "Cyclist"

    @classmethod
    def parse(cls, name: str) -> BoxClass:
        if isinstance(name, cls):
            return name
        for c in cls:
            if c.value.lower() == str(name).lower() or c.name.lower() == str(name).lower():
                return c
        raise UnknownClass(f"unknown object class {name!r}")

    def __str__(self):
        return self.value


def _ro(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, order="C")
    a.setflags(write=False)
    return a


class PointCloud:
    """Columnar point cloud: ``xyz`` (N, 3), ``intensity`` (N,), optional ``rel_time`` (N,).

    Values are float64 in memory; arrays are read-only once constructed.
    """

    __slots__ = ("_xyz", "_intensity", "_rel_time")

    def __init__(self, xyz, intensity=None, rel_time=None, *, validate: bool = True):
        xyz = np.asarray(xyz, dtype=np.float64)
        if xyz.size == 0:
            xyz = xyz.reshape(0, 3)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise InvariantViolation(f"xyz must have shape (N, 3), got {xyz.shape}")
        n = len(xyz)
        intensity = np.zeros(n) if intensity is None else np.asarray(intensity, dtype=np.float64).reshape(-1)
        if len(intensity) != n:
            raise InvariantViolation(f"intensity has {len(intensity)} entries for {n} points")
        if rel_time is not None:
            rel_time = np.asarray(rel_time, dtype=np.float64).reshape(-1)
            if len(rel_time) != n:
                raise InvariantViolation(f"rel_time has {len(rel_time)} entries for {n} points")
        if validate:
            if not np.all(np.isfinite(xyz)):
                raise InvariantViolation("point coordinates must be finite")
            # comparisons are False for NaN, so this also rejects non-finite values
            if n and not (np.all(intensity >= 0.0) and np.all(intensity <= 1.0)):
                raise InvariantViolation("intensity must lie in [0, 1]")
            if rel_time is not None and n and not np.all(rel_time <= 0.0):
                raise InvariantViolation("rel_time must be <= 0 for every point")
        self._xyz = _ro(xyz)
        self._intensity = _ro(intensity)
        self._rel_time = None if rel_time is None else _ro(rel_time)

    @classmethod
    def empty(cls, timed: bool = False) -> PointCloud:
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0) if timed else None)

    @classmethod
    def from_records(cls, records: np.ndarray) -> PointCloud:
        """From an (N, 4) or (N, 5) array of ``x y z intensity [rel_time]``."""
        records = np.asarray(records)
        if records.ndim != 2 or records.shape[1] not in (4, 5):
            raise InvariantViolation(f"records must be (N, 4) or (N, 5), got {records.shape}")
        rel = records[:, 4] if records.shape[1] == 5 else None
        return cls(records[:, :3], records[:, 3], rel)

    @property
    def xyz(self) -> np.ndarray:
        return self._xyz

    @property
    def intensity(self) -> np.ndarray:
        return self._intensity

    @property
    def rel_time(self) -> Optional[np.ndarray]:
        return self._rel_time

    @property
    def stride(self) -> int:
        return 4 if self._rel_time is None else 5

    def __len__(self):
        return len(self._xyz)

    def records(self, dtype=np.float32) -> np.ndarray:
        out = np.empty((len(self), self.stride), dtype=dtype)
        out[:, :3] = self._xyz
        out[:, 3] = self._intensity
        if self._rel_time is not None:
            out[:, 4] = self._rel_time
        return out

    def select(self, mask_or_index) -> PointCloud:
        rel = None if self._rel_time is None else self._rel_time[mask_or_index]
        return PointCloud(self._xyz[mask_or_index], self._intensity[mask_or_index], rel, validate=False)

    def with_rel_time(self, rel_time) -> PointCloud:
        return PointCloud(self._xyz, self._intensity, rel_time)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        if (self._rel_time is None) != (other._rel_time is None):
            return False
        same = np.array_equal(self._xyz, other._xyz) and np.array_equal(self._intensity, other._intensity)
        if self._rel_time is not None:
            same = same and np.array_equal(self._rel_time, other._rel_time)
        return bool(same)

    def __repr__(self):
        return f"PointCloud(n={len(self)}, stride={self.stride})"


def concat_clouds(clouds: Seq[PointCloud]) -> PointCloud:
    if not clouds:
        return PointCloud.empty()
    timed = [c.rel_time is not None for c in clouds]
    if any(timed) and not all(timed):
        raise InvariantViolation("cannot concatenate timed and untimed clouds")
    rel = np.concatenate([c.rel_time for c in clouds]) if timed[0] else None
    return PointCloud(
        np.concatenate([c.xyz for c in clouds]),
        np.concatenate([c.intensity for c in clouds]),
        rel,
        validate=False,
    )


@dataclass(frozen=True)
class Box3D:
    """Oriented box in SDC coordinates; heading 0 faces the SDC +x axis.

    ``length``/``width``/``height`` run along the box x/y/z axes.
    """

    center: tuple[float, float, float]
    length: float
    width: float
    height: float
    heading: float
    cls: BoxClass = BoxClass.VEHICLE
    score: Optional[float] = None
    num_points: Optional[int] = None

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) != 3 or not all(math.isfinite(v) for v in c):
            raise InvariantViolation(f"box center must be 3 finite values, got {self.center!r}")
        object.__setattr__(self, "center", c)
        for name in ("length", "width", "height"):
            v = float(getattr(self, name))
            if not (v > 0.0 and math.isfinite(v)):
                raise InvariantViolation(f"box {name} must be positive and finite, got {v!r}")
            object.__setattr__(self, name, v)
        h = float(self.heading)
        if not (-math.pi <= h < math.pi):
            raise InvariantViolation(f"box heading {h!r} outside [-pi, pi)")
        object.__setattr__(self, "heading", h)
        object.__setattr__(self, "cls", BoxClass.parse(self.cls))
        if self.score is not None:
            s = float(self.score)
            if not (0.0 <= s <= 1.0):
                raise InvariantViolation(f"box score {s!r} outside [0, 1]")
            object.__setattr__(self, "score", s)
        if self.num_points is not None:
            if isinstance(self.num_points, float) and not self.num_points.is_integer():
                raise InvariantViolation(f"num_points must be an integer, got {self.num_points!r}")
            k = int(self.num_points)
            if k < 0:
                raise InvariantViolation(f"num_points must be non-negative, got {k}")
            object.__setattr__(self, "num_points", k)

    @property
    def dims(self) -> tuple[float, float, float]:
        return (self.length, self.width, self.height)

    def as_row(self) -> np.ndarray:
        """``[cx, cy, cz, l, w, h, heading]``"""
        return np.array([*self.center, self.length, self.width, self.height, self.heading])

    def replace(self, **changes) -> Box3D:
        from dataclasses import replace

        return replace(self, **changes)


def boxes_to_array(boxes: Iterable[Box3D]) -> np.ndarray:
    rows = [b.as_row() for b in boxes]
    if not rows:
        return np.zeros((0, 7))
    return np.stack(rows)


@dataclass(frozen=True, eq=False)
class Frame:
    timestamp: float
    pose: Transform
    cloud: PointCloud
    boxes: tuple[Box3D, ...] = ()

    def __post_init__(self):
        ts = float(self.timestamp)
        if not math.isfinite(ts):
            raise InvariantViolation(f"timestamp must be finite, got {self.timestamp!r}")
        object.__setattr__(self, "timestamp", ts)
        if not isinstance(self.pose, Transform):
            object.__setattr__(self, "pose", Transform(np.asarray(self.pose)))
        if self.cloud.rel_time is not None:
            raise InvariantViolation("single frames must not carry a rel_time column")
        object.__setattr__(self, "boxes", tuple(self.boxes))


def timestamp_ns(ts: float) -> int:
    """Timestamps are compared and differenced at nanosecond resolution."""
    return int(round(ts * 1e9))


@dataclass(frozen=True)
class CalibrationSet:
    p_img: ProjectionMatrix
    t_ref: Transform
    r_rect: Transform = field(default_factory=Transform.identity)
    image_width: int = 1920
    image_height: int = 1280

    def __post_init__(self):
        for name in ("image_width", "image_height"):
            v = getattr(self, name)
            if int(v) != v or int(v) <= 0:
                raise InvariantViolation(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @classmethod
    def default_front(cls) -> CalibrationSet:
        """Level front camera looking along SDC +x, mounted 1.5 m forward and 1.6 m up."""
        r = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
        mount = np.array([1.5, 0.0, 1.6])
        t_ref = Transform.from_rt(r, -r @ mount)
        p = ProjectionMatrix.from_intrinsics(2000.0, 2000.0, 960.0, 640.0)
        return cls(p_img=p, t_ref=t_ref)


_CAL_KEYS = ("P_img", "R_rect", "T_ref", "image_size")


def write_native_calib(c: CalibrationSet, path) -> None:
    lines = [
        "P_img: " + " ".join("%.16e" % v for v in c.p_img.matrix.reshape(12)),
        "R_rect: " + " ".join("%.16e" % v for v in c.r_rect.rows()),
        "T_ref: " + " ".join("%.16e" % v for v in c.t_ref.rows()),
        f"image_size: {c.image_width} {c.image_height}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_native_calib(path) -> CalibrationSet:
    path = Path(path)
    text = _read_text(path)
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep or key not in _CAL_KEYS:
            raise FormatError(f"unexpected calibration entry {key!r}", path, lineno)
        entries[key] = (lineno, rest.split())
    missing = [k for k in _CAL_KEYS if k not in entries]
    if missing:
        raise FormatError(f"missing calibration entries {missing}", path)
    try:
        p = ProjectionMatrix(np.array(_floats(entries["P_img"][1], 12, path, entries["P_img"][0])).reshape(3, 4))
        r = Transform.from_rows(_floats(entries["R_rect"][1], 12, path, entries["R_rect"][0]))
        t = Transform.from_rows(_floats(entries["T_ref"][1], 12, path, entries["T_ref"][0]))
        lineno, size = entries["image_size"]
        if len(size) != 2:
            raise FormatError("image_size needs width and height", path, lineno)
        return CalibrationSet(p_img=p, t_ref=t, r_rect=r, image_width=_int(size[0], path, lineno),
                              image_height=_int(size[1], path, lineno))
    except InvariantViolation as e:
        raise FormatError(str(e), path) from e


@dataclass(frozen=True, eq=False)
class Sequence:
    id: str
    frames: tuple[Frame, ...] = ()
    calib: Optional[CalibrationSet] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.id or any(ch.isspace() for ch in self.id):
            raise InvariantViolation(f"sequence id must be a non-empty token, got {self.id!r}")
        prev = None
        for i, f in enumerate(self.frames):
            ns = timestamp_ns(f.timestamp)
            if prev is not None and ns <= prev:
                raise NonMonotonicTimestamps("timestamps must strictly increase", frame=i)
            prev = ns

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i) -> Frame:
        return self.frames[i]


# ---------------------------------------------------------------- parsing helpers


def _read_text(path: Path) -> str:
    try:
        data = path.read_bytes()
    except FileNotFoundError as e:
        raise MissingFile(f"{path}: no such file") from e
    except IsADirectoryError as e:
        raise MissingFile(f"{path}: is a directory") from e
    try:
        return data.decode("ascii")
    except UnicodeDecodeError as e:
        raise FormatError(f"non-ASCII content at byte {e.start}", path) from e


def _float(tok: str, path=None, line=None, err=NumericParseError) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise err(f"cannot parse {tok!r} as a real number", path, line) from None
    if not math.isfinite(v):
        raise err(f"non-finite value {tok!r}", path, line)
    return v


def _floats(toks, n, path=None, line=None, err=NumericParseError) -> list[float]:
    if len(toks) != n:
        raise err(f"expected {n} values, got {len(toks)}", path, line)
    return [_float(t, path, line, err) for t in toks]


def _int(tok: str, path=None, line=None, err=NumericParseError) -> int:
    try:
        return int(tok)
    except ValueError:
        raise err(f"cannot parse {tok!r} as an integer", path, line) from None


# ---------------------------------------------------------------- point blobs


def write_points(pc: PointCloud, path) -> None:
    pc.records(np.dtype("<f4")).tofile(str(path))


def read_points(path, stride: int = 4) -> PointCloud:
    if stride not in (4, 5):
        raise FormatError(f"stride must be 4 or 5, got {stride}", path)
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as e:
        raise MissingFile(f"{path}: no such file") from e
    except IsADirectoryError as e:
        raise MissingFile(f"{path}: is a directory") from e
    rec = 4 * stride
    if len(raw) % rec:
        raise TruncatedFile(f"length {len(raw)} bytes is not a multiple of the {rec}-byte record", path)
    arr = np.frombuffer(raw, dtype="<f4").reshape(-1, stride)
    with np.errstate(invalid="ignore"):  # signalling NaN payloads; rejected by validation below
        arr = arr.astype(np.float64)
    try:
        return PointCloud.from_records(arr)
    except InvariantViolation as e:
        raise InvariantViolation(f"{path}: {e}") from e


# ---------------------------------------------------------------- box files


def format_box(b: Box3D, require_score: bool = False) -> str:
    if require_score and b.score is None:
        raise InvariantViolation("detection boxes must carry a score")
    fields = [b.cls.value] + ["%.6f" % v for v in (*b.center, b.length, b.width, b.height, b.heading)]
    if b.score is not None or b.num_points is not None:
        fields.append("-" if b.score is None else "%.6f" % b.score)
    if b.num_points is not None:
        fields.append("%d" % b.num_points)
    return " ".join(fields)


def parse_box(line: str, path=None, lineno=None) -> Box3D:
    toks = line.split()
    if len(toks) not in (8, 9, 10):
        raise MalformedBoxFile(f"expected 8-10 fields, got {len(toks)}", path, lineno)
    try:
        cls = BoxClass.parse(toks[0])
    except UnknownClass as e:
        raise MalformedBoxFile(str(e), path, lineno) from None
    vals = [_float(t, path, lineno, MalformedBoxFile) for t in toks[1:8]]
    score = None
    if len(toks) >= 9 and toks[8] != "-":
        score = _float(toks[8], path, lineno, MalformedBoxFile)
    num_points = _int(toks[9], path, lineno, MalformedBoxFile) if len(toks) == 10 else None
    try:
        return Box3D(
            center=tuple(vals[:3]),
            length=vals[3],
            width=vals[4],
            height=vals[5],
            heading=geometry.wrap_heading(vals[6]),
            cls=cls,
            score=score,
            num_points=num_points,
        )
    except InvariantViolation as e:
        raise MalformedBoxFile(str(e), path, lineno) from None


def write_boxes(boxes: Iterable[Box3D], path, require_score: bool = False) -> None:
    lines = [format_box(b, require_score) + "\n" for b in boxes]
    Path(path).write_text("".join(lines), encoding="ascii")


def read_boxes(path, require_score: bool = False) -> list[Box3D]:
    path = Path(path)
    out = []
    for lineno, line in enumerate(_read_text(path).splitlines(), 1):
        if not line.strip():
            continue
        b = parse_box(line, path, lineno)
        if require_score and b.score is None:
            raise MalformedBoxFile("missing score column", path, lineno)
        out.append(b)
    return out


# ---------------------------------------------------------------- manifest


def _frame_line(idx: int, f: Frame, points: str, boxes: str) -> str:
    pose = " ".join("%.12e" % v for v in f.pose.rows())
    return f"frame {idx} {f.timestamp:.9f} {pose} points={points} stride={f.cloud.stride} boxes={boxes}"


def write_sequence(seq: Sequence, path) -> None:
    root = Path(path)
    try:
        (root / "points").mkdir(parents=True, exist_ok=True)
        (root / "boxes").mkdir(parents=True, exist_ok=True)
        lines = [FORMAT_TAG, f"id {seq.id}"]
        for i, f in enumerate(seq.frames):
            pts = f"points/{i:06d}.bin"
            bxs = f"boxes/{i:06d}.txt"
            write_points(f.cloud, root / pts)
            write_boxes(f.boxes, root / bxs)
            lines.append(_frame_line(i, f, pts, bxs))
        if seq.calib is not None:
            write_native_calib(seq.calib, root / CALIB_NAME)
        (root / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as e:
        raise DataError(f"cannot write sequence to {root}: {e}") from e


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    timestamp: float
    pose: Transform
    points: str
    stride: int
    boxes: str
    line: int


def read_manifest(path) -> tuple[str, list[ManifestEntry]]:
    """Parse ``manifest.txt`` without touching the per-frame files."""
    path = Path(path)
    lines = _read_text(path).splitlines()
    if not lines or lines[0].strip() != FORMAT_TAG:
        raise MalformedManifest(f"first line must be {FORMAT_TAG!r}", path, 1)
    if len(lines) < 2:
        raise MalformedManifest("missing id line", path, 2)
    head = lines[1].split()
    if len(head) != 2 or head[0] != "id":
        raise MalformedManifest("second line must be 'id <string>'", path, 2)
    seq_id = head[1]
    entries = []
    for lineno, line in enumerate(lines[2:], 3):
        if not line.strip():
            continue
        toks = line.split()
        if toks[0] != "frame":
            raise MalformedManifest(f"unexpected record {toks[0]!r}", path, lineno)
        if len(toks) not in (17, 18):
            raise MalformedManifest(f"frame record needs 17 or 18 fields, got {len(toks)}", path, lineno)
        idx = _int(toks[1], path, lineno, MalformedManifest)
        if idx != len(entries):
            raise MalformedManifest(f"frame index {idx} out of order (expected {len(entries)})", path, lineno)
        ts = _float(toks[2], path, lineno, MalformedManifest)
        pose_vals = _floats(toks[3:15], 12, path, lineno, MalformedManifest)
        try:
            pose = Transform.from_rows(pose_vals)
        except NonRigidPose as e:
            raise InvariantViolation(f"{path}:{lineno}: {e}", frame=idx) from None
        kv = {}
        for tok in toks[15:]:
            key, sep, val = tok.partition("=")
            if not sep or not val or key in kv:
                raise MalformedManifest(f"bad key=value field {tok!r}", path, lineno)
            kv[key] = val
        stride = 4
        if "stride" in kv:
            stride = _int(kv.pop("stride"), path, lineno, MalformedManifest)
        if set(kv) != {"points", "boxes"}:
            raise MalformedManifest(f"frame record needs points= and boxes=, got {sorted(kv)}", path, lineno)
        if stride not in (4, 5):
            raise MalformedManifest(f"stride must be 4 or 5, got {stride}", path, lineno)
        entries.append(ManifestEntry(idx, ts, pose, kv["points"], stride, kv["boxes"], lineno))
    return seq_id, entries


def _resolve(root: Path, rel: str, mpath: Path, line: int) -> Path:
    p = Path(rel)
    if p.is_absolute() or ".." in p.parts:
        raise MalformedManifest(f"file reference {rel!r} must stay inside the sequence directory", mpath, line)
    return root / p


def load_frame(root, entry: ManifestEntry, manifest_path=None) -> Frame:
    root = Path(root)
    mpath = manifest_path or root / MANIFEST_NAME
    cloud = read_points(_resolve(root, entry.points, mpath, entry.line), entry.stride)
    if cloud.rel_time is not None:
        raise InvariantViolation("frame point blobs must be stride 4", frame=entry.index)
    boxes = read_boxes(_resolve(root, entry.boxes, mpath, entry.line))
    return Frame(entry.timestamp, entry.pose, cloud, tuple(boxes))


def read_sequence(path, jobs: int = 1) -> Sequence:
    root = Path(path)
    mpath = root / MANIFEST_NAME
    seq_id, entries = read_manifest(mpath)

    def load(e):
        try:
            return load_frame(root, e, mpath)
        except InvariantViolation as err:
            if err.frame is None:
                raise InvariantViolation(str(err), frame=e.index) from err
            raise

    if jobs > 1 and len(entries) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            frames = list(pool.map(load, entries))
    else:
        frames = [load(e) for e in entries]
    calib = read_native_calib(root / CALIB_NAME) if (root / CALIB_NAME).exists() else None
    return Sequence(seq_id, tuple(frames), calib)
