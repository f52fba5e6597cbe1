"""Box, heading and camera conventions between SDC-frame data and KITTI labels.

KITTI labels live in the reference camera frame: location is the centre of
the bottom face, ``rotation_y`` is measured about the camera y axis with zero
along camera +x (the SDC's right-hand side for a forward camera) and
dimensions are stored as ``(h, w, l)``. Native boxes use the volumetric
centre and a heading about SDC z with zero along SDC +x.

Note: the zero direction of ``rotation_y`` follows the object-visualisation
tooling the KITTI community uses, which disagrees with the original KITTI
write-up. Only that one convention is supported.
"""

from __future__ import annotations

import math

import numpy as np

from .datamodel import Box3D, BoxClass, CalibrationSet
from .errors import BehindCamera, BoxBehindCamera, UnknownCamera, UnknownClass
from .geometry import project_to_image, transform_points, wrap_heading
from .kitti_io import KittiLabel

SENTINEL_BBOX = (-1.0, -1.0, -1.0, -1.0)

KITTI_TYPE = {BoxClass.VEHICLE: "Car", BoxClass.PEDESTRIAN: "Pedestrian", BoxClass.CYCLIST: "Cyclist"}
_FROM_KITTI = {v: k for k, v in KITTI_TYPE.items()}

# native camera index -> KITTI image slot; the front camera (0) becomes image_2
CAMERA_REMAP = {0: 2, 1: 1, 2: 0, 3: 3, 4: 4}
_CAMERA_UNMAP = {v: k for k, v in CAMERA_REMAP.items()}


def remap_camera_index(idx_native: int) -> int:
    try:
        return CAMERA_REMAP[idx_native]
    except (KeyError, TypeError):
        raise UnknownCamera(f"no KITTI slot for native camera {idx_native!r}") from None


def unmap_camera_index(idx_kitti: int) -> int:
    try:
        return _CAMERA_UNMAP[idx_kitti]
    except (KeyError, TypeError):
        raise UnknownCamera(f"no native camera for KITTI slot {idx_kitti!r}") from None


def box_corners(box: Box3D) -> np.ndarray:
    """The 8 corners in SDC coordinates, shape (8, 3)."""
    hl, hw, hh = box.length / 2, box.width / 2, box.height / 2
    local = np.array(
        [[sx * hl, sy * hw, sz * hh] for sz in (-1, 1) for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1))]
    )
    c, s = math.cos(box.heading), math.sin(box.heading)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.asarray(box.center)


def project_box_corners(box: Box3D, calib: CalibrationSet) -> tuple[tuple[float, float, float, float], int]:
    """Image-plane hull of the corners in front of the camera, clipped to the image.

    Returns ``(bbox2d, n_visible)``; with no visible corner the bbox is
    :data:`SENTINEL_BBOX`.
    """
    us, vs = [], []
    for corner in box_corners(box):
        try:
            u, v, _ = project_to_image(calib.p_img, calib.r_rect, calib.t_ref, corner)
        except BehindCamera:
            continue
        us.append(u)
        vs.append(v)
    if not us:
        return SENTINEL_BBOX, 0
    w, h = float(calib.image_width), float(calib.image_height)
    left = min(max(min(us), 0.0), w)
    right = min(max(max(us), 0.0), w)
    top = min(max(min(vs), 0.0), h)
    bottom = min(max(max(vs), 0.0), h)
    return (left, top, right, bottom), len(us)


def heading_to_rotation_y(heading: float, calib: CalibrationSet) -> float:
    """Rotate the heading unit vector into the camera and read its angle about camera y."""
    d = calib.t_ref.rotation @ np.array([math.cos(heading), math.sin(heading), 0.0])
    return wrap_heading(math.atan2(-d[2], d[0]))


def rotation_y_to_heading(rotation_y: float, calib: CalibrationSet) -> float:
    """Inverse of :func:`heading_to_rotation_y` for any camera not rolled onto its side.

    The camera-frame direction ``(cos ry, t, -sin ry)`` is completed with the
    y component ``t`` that makes it horizontal in the SDC frame.
    """
    r = calib.t_ref.rotation
    c, s = math.cos(rotation_y), math.sin(rotation_y)
    t = 0.0
    if abs(r[1, 2]) > 1e-12:
        t = (r[2, 2] * s - r[0, 2] * c) / r[1, 2]
    d = r.T @ np.array([c, t, -s])
    return wrap_heading(math.atan2(d[1], d[0]))


def box_to_kitti(box: Box3D, calib: CalibrationSet, strict: bool = False) -> KittiLabel:
    """Express a native box as a KITTI label.

    With ``strict`` a box entirely behind the camera raises
    :class:`BoxBehindCamera`; otherwise it gets the sentinel bbox.
    """
    bottom = np.array(box.center) - np.array([0.0, 0.0, box.height / 2])
    loc = transform_points(calib.t_ref, bottom)
    ry = heading_to_rotation_y(box.heading, calib)
    alpha = wrap_heading(ry - math.atan2(loc[0], loc[2]))
    bbox, n_visible = project_box_corners(box, calib)
    if n_visible == 0 and strict:
        raise BoxBehindCamera(f"all corners of box at {box.center} lie behind the camera")
    return KittiLabel(
        type=KITTI_TYPE[box.cls],
        truncated=0.0,
        occluded=-1,
        alpha=alpha,
        bbox2d=bbox,
        dims_hwl=(box.height, box.width, box.length),
        location=tuple(loc),
        rotation_y=ry,
        score=box.score,
    )


def kitti_to_box(label: KittiLabel, calib: CalibrationSet) -> Box3D:
    """Inverse of :func:`box_to_kitti`; bbox2d, alpha, truncation and occlusion are dropped."""
    try:
        cls = _FROM_KITTI[label.type]
    except KeyError:
        raise UnknownClass(f"KITTI type {label.type!r} has no native class") from None
    h, w, l = label.dims_hwl
    bottom = transform_points(calib.t_ref.inverse(), np.array(label.location))
    center = bottom + np.array([0.0, 0.0, h / 2])
    return Box3D(
        center=tuple(center),
        length=l,
        width=w,
        height=h,
        heading=rotation_y_to_heading(label.rotation_y, calib),
        cls=cls,
        score=label.score,
    )
