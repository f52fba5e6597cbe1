"""Rigid transforms, heading arithmetic and pinhole projection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, InvariantViolation, NonRigidPose

RIGID_TOL = 1e-9
TWO_PI = 2.0 * math.pi


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Transform:
    """Homogeneous 4x4 rigid transform, validated on construction.

    ``Transform(m)`` maps column vectors ``p`` to ``R @ p + t``. Composition
    follows matrix order: ``a @ b`` applies ``b`` first.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise NonRigidPose(f"expected a 4x4 matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NonRigidPose("matrix contains non-finite entries")
        if not (m[3, 0] == 0.0 and m[3, 1] == 0.0 and m[3, 2] == 0.0 and m[3, 3] == 1.0):
            raise NonRigidPose(f"last row must be (0, 0, 0, 1), got {m[3].tolist()}")
        r = m[:3, :3]
        ortho_err = np.max(np.abs(r.T @ r - np.eye(3)))
        if ortho_err > RIGID_TOL:
            raise NonRigidPose(f"rotation block is not orthonormal (error {ortho_err:.3e})")
        det = np.linalg.det(r)
        if abs(det - 1.0) > RIGID_TOL:
            raise NonRigidPose(f"rotation block has determinant {det:.12g}, expected 1")
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def identity(cls) -> Transform:
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, rotation, translation=(0.0, 0.0, 0.0)) -> Transform:
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def from_rows(cls, values) -> Transform:
        """Build from the 12 row-major entries of the top three rows."""
        vals = np.asarray(values, dtype=np.float64)
        if vals.shape != (12,):
            raise NonRigidPose(f"expected 12 values, got {vals.size}")
        m = np.eye(4)
        m[:3, :] = vals.reshape(3, 4)
        return cls(m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def rows(self) -> np.ndarray:
        """The 12 row-major entries of the top three rows."""
        return self.matrix[:3, :].reshape(12)

    def __matmul__(self, other: Transform) -> Transform:
        return compose(self, other)

    def inverse(self) -> Transform:
        return invert(self)

    def apply(self, pts) -> np.ndarray:
        return transform_points(self, pts)

    def allclose(self, other: Transform, atol: float = 1e-9) -> bool:
        return bool(np.max(np.abs(self.matrix - other.matrix)) <= atol)

    def __repr__(self):
        return f"Transform({self.matrix[:3].tolist()})"


def _unchecked(m: np.ndarray) -> Transform:
    # Products/inverses of validated transforms stay rigid to rounding error.
    t = object.__new__(Transform)
    object.__setattr__(t, "matrix", _frozen(m))
    return t


def compose(a: Transform, b: Transform) -> Transform:
    """Return the transform applying ``b`` first, then ``a``."""
    m = a.matrix @ b.matrix
    m[3] = (0.0, 0.0, 0.0, 1.0)
    return _unchecked(m)


def invert(t: Transform) -> Transform:
    """Closed-form rigid inverse ``(R^T, -R^T p)``."""
    r = t.rotation
    m = np.eye(4)
    m[:3, :3] = r.T
    m[:3, 3] = -(r.T @ t.translation)
    return _unchecked(m)


def transform_points(t: Transform, pts) -> np.ndarray:
    """Apply ``t`` to an ``(N, 3)`` array (or a single 3-vector)."""
    p = np.asarray(pts, dtype=np.float64)
    if p.ndim == 1:
        return t.rotation @ p + t.translation
    return p @ t.rotation.T + t.translation


def rot_z(theta: float) -> Transform:
    c, s = math.cos(theta), math.sin(theta)
    return _unchecked(np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float))


def translate(x: float, y: float, z: float) -> Transform:
    m = np.eye(4)
    m[:3, 3] = (x, y, z)
    return _unchecked(m)


def wrap_heading(theta: float) -> float:
    """Wrap an angle in radians into ``[-pi, pi)``."""
    if not math.isfinite(theta):
        raise InvariantViolation(f"heading must be finite, got {theta!r}")
    theta = float(theta)
    if -math.pi <= theta < math.pi:
        return theta
    r = math.fmod(theta + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    r -= math.pi
    # fmod/add can round onto the open end of the interval
    if r >= math.pi:
        r -= TWO_PI
    if r < -math.pi:
        r = -math.pi
    return r


def wrap_heading_array(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise InvariantViolation("headings must be finite")
    out = np.mod(theta + np.pi, TWO_PI) - np.pi
    out = np.where(out >= np.pi, out - TWO_PI, out)
    out = np.where(out < -np.pi, -np.pi, out)
    inside = (theta >= -np.pi) & (theta < np.pi)
    return np.where(inside, theta, out)


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """3x4 camera projection (intrinsics, optionally with a baseline column)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 4):
            raise InvariantViolation(f"projection matrix must be 3x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvariantViolation("projection matrix contains non-finite entries")
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def from_intrinsics(cls, fx: float, fy: float, cx: float, cy: float) -> ProjectionMatrix:
        return cls(np.array([[fx, 0.0, cx, 0.0], [0.0, fy, cy, 0.0], [0.0, 0.0, 1.0, 0.0]]))


def project_homogeneous(p_img: ProjectionMatrix, r_rect: Transform, t_ref: Transform, xh) -> tuple[float, float, float]:
    """Project a homogeneous SDC point ``(x, y, z, w)`` with ``w > 0``."""
    xh = np.asarray(xh, dtype=np.float64)
    cam = r_rect.matrix @ (t_ref.matrix @ xh)
    if cam[3] <= 0:
        raise BehindCamera("homogeneous weight must be positive")
    depth = cam[2] / cam[3]
    y = p_img.matrix @ cam
    if depth <= 0 or y[2] <= 0:
        raise BehindCamera(f"point has camera depth {depth:.6g}")
    return float(y[0] / y[2]), float(y[1] / y[2]), float(depth)


def project_to_image(p_img: ProjectionMatrix, r_rect: Transform, t_ref: Transform, x) -> tuple[float, float, float]:
    """Chain SDC -> reference camera -> rectified camera -> pixels.

    Returns ``(u, v, depth)`` where depth is the rectified-camera forward
    coordinate. Raises :class:`BehindCamera` when depth is not positive.
    """
    x = np.asarray(x, dtype=np.float64)
    return project_homogeneous(p_img, r_rect, t_ref, np.append(x, 1.0))


def project_points(p_img: ProjectionMatrix, r_rect: Transform, t_ref: Transform, pts) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; returns ``(uv (N, 2), depth (N,))``.

    Rows that do not project in front of the image plane get NaN pixels.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    cam = transform_points(compose(r_rect, t_ref), pts)
    y = np.c_[cam, np.ones(len(cam))] @ p_img.matrix.T
    depth = cam[:, 2]
    ok = (depth > 0) & (y[:, 2] > 0)
    uv = np.full((len(pts), 2), np.nan)
    uv[ok] = y[ok, :2] / y[ok, 2:3]
    return uv, depth
