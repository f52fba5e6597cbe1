"""Detection postprocessing: empty-box removal, dimension suppression, expert
combination and multi-checkpoint NMS merging.

The checkpoint-ensemble procedure is not pinned down by the method this
toolkit reproduces; :func:`nms_merge` (greedy BEV NMS, kept box keeps its
own score) is the deterministic stand-in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence as Seq, Union

import numpy as np

from . import kernels
from .datamodel import Box3D, BoxClass, PointCloud, boxes_to_array
from .errors import DuplicateClassFilter, InvariantViolation, MissingTimestampChannel, MixedClasses
from .evaluation import bev_iou_matrix

DEFAULT_MIN_DIM = {BoxClass.VEHICLE: 0.5}
DEFAULT_NMS_IOU = 0.5


@dataclass(frozen=True)
class DetectionSet:
    boxes: tuple[Box3D, ...] = ()
    class_filter: Optional[BoxClass] = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.class_filter is not None:
            object.__setattr__(self, "class_filter", BoxClass.parse(self.class_filter))
        for b in self.boxes:
            if b.score is None:
                raise InvariantViolation("detections must carry a score")
            if self.class_filter is not None and b.cls is not self.class_filter:
                raise InvariantViolation(f"{b.cls} box in a set filtered to {self.class_filter}")

    def __len__(self):
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def keep(self, mask) -> DetectionSet:
        return DetectionSet(tuple(b for b, k in zip(self.boxes, mask) if k), self.class_filter)


def _current_mask(pc: PointCloud) -> np.ndarray:
    if pc.rel_time is None:
        raise MissingTimestampChannel("point cloud has no rel_time column")
    return pc.rel_time == 0.0


def count_points_in_boxes(boxes: Seq[Box3D], pc: PointCloud, current_frame_only: bool = False, impl=None) -> np.ndarray:
    impl = impl or kernels
    mask = _current_mask(pc) if current_frame_only else None
    arr = np.ascontiguousarray(boxes_to_array(boxes))
    return impl.points_in_boxes(np.ascontiguousarray(pc.xyz), arr, mask)


def count_points_in_box(box: Box3D, pc: PointCloud, current_frame_only: bool = False) -> int:
    """Points inside the oriented box, faces included.

    With ``current_frame_only`` only points with ``rel_time == 0`` count.
    """
    return int(count_points_in_boxes([box], pc, current_frame_only)[0])


def remove_empty(dets: DetectionSet, pc: PointCloud) -> DetectionSet:
    """Drop boxes that contain no point of the current (anchor) frame."""
    counts = count_points_in_boxes(dets.boxes, pc, current_frame_only=True)
    return dets.keep(counts >= 1)


def dimension_suppression(
    dets: DetectionSet, min_dim: Union[float, Mapping[BoxClass, float]] = DEFAULT_MIN_DIM
) -> DetectionSet:
    """Drop boxes whose length, width and height are all below ``min_dim``.

    ``min_dim`` is either one value for every class or a per-class mapping;
    classes missing from the mapping are left alone.
    """
    if isinstance(min_dim, Mapping):
        limits = {BoxClass.parse(k): float(v) for k, v in min_dim.items()}
    else:
        limits = {c: float(min_dim) for c in BoxClass}
    for v in limits.values():
        if not v > 0:
            raise InvariantViolation(f"min_dim must be positive, got {v}")

    def small(b: Box3D) -> bool:
        m = limits.get(b.cls)
        return m is not None and b.length < m and b.width < m and b.height < m

    return dets.keep([not small(b) for b in dets.boxes])


def combine_experts(sets: Seq[DetectionSet]) -> DetectionSet:
    """Concatenate per-class expert outputs in order, without suppression."""
    seen = set()
    for s in sets:
        if s.class_filter is None:
            continue
        if s.class_filter in seen:
            raise DuplicateClassFilter(f"two expert sets filtered to {s.class_filter}")
        seen.add(s.class_filter)
    return DetectionSet(tuple(b for s in sets for b in s.boxes))


def nms_merge(sets: Seq[DetectionSet], iou_threshold: float = DEFAULT_NMS_IOU) -> DetectionSet:
    """Greedy BEV NMS over the union of single-class detection sets.

    Boxes are visited by descending score (ties in concatenation order); a
    box is dropped if its BEV IoU with an already kept box exceeds
    ``iou_threshold``. The output is in visiting order.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise InvariantViolation(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    boxes = [b for s in sets for b in s.boxes]
    classes = {b.cls for b in boxes}
    if len(classes) > 1:
        raise MixedClasses(f"nms_merge needs a single class, got {sorted(c.value for c in classes)}")
    if not boxes:
        return DetectionSet()
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].score)
    ious = bev_iou_matrix(boxes, boxes)
    kept: list[int] = []
    for i in order:
        if all(ious[i, k] <= iou_threshold for k in kept):
            kept.append(i)
    cls = next(iter(classes))
    return DetectionSet(tuple(boxes[i] for i in kept), cls)


def nms_merge_by_class(sets: Seq[DetectionSet], iou_threshold: float = DEFAULT_NMS_IOU) -> DetectionSet:
    """Run :func:`nms_merge` separately per class and concatenate in class order."""
    boxes = [b for s in sets for b in s.boxes]
    out: list[Box3D] = []
    for c in BoxClass:
        same = [b for b in boxes if b.cls is c]
        if same:
            out.extend(nms_merge([DetectionSet(same)], iou_threshold).boxes)
    return DetectionSet(tuple(out))
