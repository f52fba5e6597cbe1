"""Rotated-box IoU, greedy matching and AP / heading-weighted APH."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence as Seq, Union

import numpy as np

from . import kernels
from .datamodel import Box3D, BoxClass, boxes_to_array
from .errors import EmptyGroundTruth, InvariantViolation
from .geometry import wrap_heading

DEFAULT_THRESHOLDS = {BoxClass.VEHICLE: 0.7, BoxClass.PEDESTRIAN: 0.5, BoxClass.CYCLIST: 0.5}
RECALL_POINTS = 101
L2_MAX_POINTS = 5


def _bev_rows(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr[:, [0, 1, 3, 4, 6]])


def bev_iou_matrix(a: Seq[Box3D], b: Seq[Box3D], impl=None) -> np.ndarray:
    impl = impl or kernels
    aa, bb = boxes_to_array(a), boxes_to_array(b)
    inter = impl.bev_intersection(_bev_rows(aa), _bev_rows(bb))
    area_a = aa[:, 3] * aa[:, 4]
    area_b = bb[:, 3] * bb[:, 4]
    union = area_a[:, None] + area_b[None, :] - inter
    return np.clip(inter / union, 0.0, 1.0)


def iou_3d_matrix(a: Seq[Box3D], b: Seq[Box3D], impl=None) -> np.ndarray:
    impl = impl or kernels
    aa, bb = boxes_to_array(a), boxes_to_array(b)
    inter = impl.bev_intersection(_bev_rows(aa), _bev_rows(bb))
    za0, za1 = aa[:, 2] - aa[:, 5] / 2, aa[:, 2] + aa[:, 5] / 2
    zb0, zb1 = bb[:, 2] - bb[:, 5] / 2, bb[:, 2] + bb[:, 5] / 2
    dz = np.minimum(za1[:, None], zb1[None, :]) - np.maximum(za0[:, None], zb0[None, :])
    identical = (aa[:, None, :6] == bb[None, :, :6]).all(axis=2)
    # exact height for identical boxes keeps iou(a, a) == 1
    dz = np.where(identical, aa[:, 5][:, None], np.maximum(dz, 0.0))
    inter_v = inter * dz
    vol_a = aa[:, 3] * aa[:, 4] * aa[:, 5]
    vol_b = bb[:, 3] * bb[:, 4] * bb[:, 5]
    union = vol_a[:, None] + vol_b[None, :] - inter_v
    return np.clip(inter_v / union, 0.0, 1.0)


def bev_iou(a: Box3D, b: Box3D) -> float:
    """IoU of the heading-rotated footprints in the x-y plane."""
    return float(bev_iou_matrix([a], [b])[0, 0])


def iou_3d(a: Box3D, b: Box3D) -> float:
    return float(iou_3d_matrix([a], [b])[0, 0])


IOU_FUNCS = {"bev": bev_iou_matrix, "3d": iou_3d_matrix}


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_predictions: list[int] = field(default_factory=list)
    unmatched_gts: list[int] = field(default_factory=list)


def _threshold_for(threshold, cls: BoxClass) -> float:
    if isinstance(threshold, Mapping):
        return float(threshold[cls])
    return float(threshold)


def score_order(boxes: Seq[Box3D]) -> list[int]:
    """Indices by descending score; ties keep input order."""
    return sorted(range(len(boxes)), key=lambda i: -(boxes[i].score or 0.0))


def match_detections(
    preds: Seq[Box3D],
    gts: Seq[Box3D],
    iou_fn: Union[str, Callable] = "bev",
    threshold: Union[float, Mapping[BoxClass, float]] = DEFAULT_THRESHOLDS,
) -> MatchResult:
    """Greedy matching in descending score order.

    Each prediction takes the unclaimed same-class ground truth with the
    highest IoU at or above the class threshold; ties go to the lower
    ground-truth index.
    """
    preds = list(getattr(preds, "boxes", preds))
    gts = list(gts)
    fn = IOU_FUNCS[iou_fn] if isinstance(iou_fn, str) else iou_fn
    result = MatchResult()
    if not preds:
        result.unmatched_gts = list(range(len(gts)))
        return result
    ious = fn(preds, gts) if gts else np.zeros((len(preds), 0))
    gt_cls = [g.cls for g in gts]
    claimed = [False] * len(gts)
    for p in score_order(preds):
        thr = _threshold_for(threshold, preds[p].cls)
        best, best_iou = -1, -1.0
        for g in range(len(gts)):
            if claimed[g] or gt_cls[g] is not preds[p].cls:
                continue
            v = ious[p, g]
            if v >= thr and v > best_iou:
                best, best_iou = g, v
        if best < 0:
            result.unmatched_predictions.append(p)
        else:
            claimed[best] = True
            result.pairs.append((p, best, float(best_iou)))
    result.unmatched_predictions.sort()
    result.unmatched_gts = [g for g in range(len(gts)) if not claimed[g]]
    return result


def heading_weight(pred_heading: float, gt_heading: float) -> float:
    return max(0.0, 1.0 - abs(wrap_heading(pred_heading - gt_heading)) / math.pi)


@dataclass
class PRCurve:
    """PR points at every distinct score cutoff, highest score first.

    ``points`` rows are ``(recall, precision, heading_weight_sum)``.
    """

    points: list[tuple[float, float, float]]
    scores: list[float]
    n_gt: int


@dataclass
class Tally:
    """Per-class detections of one or more frames: mergeable by concatenation."""

    scores: list[float] = field(default_factory=list)
    tp: list[bool] = field(default_factory=list)
    weight: list[float] = field(default_factory=list)
    n_gt: int = 0

    def add(self, score: float, tp: bool, weight: float = 0.0):
        self.scores.append(float(score))
        self.tp.append(bool(tp))
        self.weight.append(float(weight) if tp else 0.0)

    def merge(self, other: Tally) -> Tally:
        return Tally(self.scores + other.scores, self.tp + other.tp, self.weight + other.weight, self.n_gt + other.n_gt)

    def extend(self, other: Tally) -> None:
        self.scores.extend(other.scores)
        self.tp.extend(other.tp)
        self.weight.extend(other.weight)
        self.n_gt += other.n_gt


def _cumulative(tally: Tally):
    scores = np.asarray(tally.scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(np.asarray(tally.tp, dtype=np.int64)[order])
    w = np.cumsum(np.asarray(tally.weight, dtype=np.float64)[order])
    n = np.arange(1, len(s) + 1)
    # one PR point per distinct score: the last detection of each tie group
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True]) if len(s) else np.zeros(0, dtype=np.int64)
    return s[last], tp[last], w[last], n[last]


def pr_curve(tally: Tally) -> PRCurve:
    s, tp, w, n = _cumulative(tally)
    if tally.n_gt <= 0:
        raise EmptyGroundTruth("no ground truth boxes")
    pts = [(float(t) / tally.n_gt, float(t) / float(k), float(ws)) for t, k, ws in zip(tp, n, w)]
    return PRCurve(points=pts, scores=[float(v) for v in s], n_gt=tally.n_gt)


def interpolated_ap(recall: np.ndarray, precision: np.ndarray, n_points: int = RECALL_POINTS) -> float:
    """Mean over ``r = 0, 1/(n-1), ..., 1`` of ``max{precision : recall >= r}`` (0 if empty)."""
    recall = np.asarray(recall, dtype=np.float64)
    precision = np.asarray(precision, dtype=np.float64)
    if len(recall) == 0:
        return 0.0
    # envelope[k] = max precision over points k.. in recall-sorted order
    order = np.argsort(recall, kind="stable")
    rs, ps = recall[order], precision[order]
    env = np.maximum.accumulate(ps[::-1])[::-1]
    grid = np.arange(n_points) / (n_points - 1)
    pos = np.searchsorted(rs, grid, side="left")
    vals = np.where(pos < len(rs), env[np.minimum(pos, len(rs) - 1)], 0.0)
    return float(np.mean(vals))


def average_precision(tally: Tally) -> tuple[float, float]:
    """``(AP, APH)`` with 101-point interpolated precision.

    APH replaces each true-positive count by its heading weight in both the
    precision and recall numerators. Raises :class:`EmptyGroundTruth` when
    there is no ground truth.
    """
    if tally.n_gt <= 0:
        raise EmptyGroundTruth("no ground truth boxes")
    _, tp, w, n = _cumulative(tally)
    ap = interpolated_ap(tp / tally.n_gt, tp / n)
    aph = interpolated_ap(w / tally.n_gt, w / n)
    return ap, aph


@dataclass(frozen=True)
class EvalConfig:
    thresholds: Mapping[BoxClass, float] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    iou: str = "bev"
    difficulty: str = "L2"
    cumulative: bool = True
    l2_max_points: int = L2_MAX_POINTS

    def __post_init__(self):
        if self.iou not in IOU_FUNCS:
            raise InvariantViolation(f"iou must be one of {sorted(IOU_FUNCS)}, got {self.iou!r}")
        if self.difficulty not in ("L1", "L2"):
            raise InvariantViolation(f"difficulty must be L1 or L2, got {self.difficulty!r}")
        th = dict(DEFAULT_THRESHOLDS)
        th.update({BoxClass.parse(k): float(v) for k, v in dict(self.thresholds).items()})
        for k, v in th.items():
            if not 0.0 < v <= 1.0:
                raise InvariantViolation(f"IoU threshold for {k} must lie in (0, 1], got {v}")
        object.__setattr__(self, "thresholds", th)

    def counts(self, gt: Box3D) -> bool:
        """Whether a ground-truth box belongs to the evaluated difficulty bucket."""
        if gt.num_points is None:
            return True
        is_l2 = gt.num_points <= self.l2_max_points
        if self.difficulty == "L1":
            return not is_l2
        return True if self.cumulative else is_l2


def frame_tallies(preds: Seq[Box3D], gts: Seq[Box3D], config: EvalConfig) -> dict[BoxClass, Tally]:
    """Match one frame and tally TP/FP/heading weights per class.

    Predictions matched to a ground truth outside the difficulty bucket are
    ignored rather than counted as false positives.
    """
    preds, gts = list(preds), list(gts)
    if any(p.score is None for p in preds):
        raise InvariantViolation("every prediction needs a score")
    m = match_detections(preds, gts, config.iou, config.thresholds)
    out = {c: Tally() for c in BoxClass}
    for g in gts:
        if config.counts(g):
            out[g.cls].n_gt += 1
    for p, g, _ in m.pairs:
        if not config.counts(gts[g]):
            continue
        out[preds[p].cls].add(preds[p].score, True, heading_weight(preds[p].heading, gts[g].heading))
    for p in m.unmatched_predictions:
        out[preds[p].cls].add(preds[p].score, False)
    return out


@dataclass
class EvalReport:
    per_class: dict[BoxClass, tuple[float, float]]

    @property
    def mean(self) -> tuple[float, float]:
        vals = [v for v in self.per_class.values() if not math.isnan(v[0])]
        if not vals:
            return (math.nan, math.nan)
        return (sum(v[0] for v in vals) / len(vals), sum(v[1] for v in vals) / len(vals))

    def rows(self) -> list[tuple[str, str, str]]:
        rows = [(c.value, "%.4f" % ap, "%.4f" % aph) for c, (ap, aph) in self.per_class.items()]
        ap, aph = self.mean
        rows.append(("All", "%.4f" % ap, "%.4f" % aph))
        return rows

    def table(self) -> str:
        lines = ["%-12s %8s %8s" % ("class", "AP", "APH")]
        lines += ["%-12s %8s %8s" % r for r in self.rows()]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "ap", "aph"])
        w.writerows(self.rows())
        return buf.getvalue()


def evaluate(
    preds: Mapping[str, Seq[Box3D]],
    gts: Mapping[str, Seq[Box3D]],
    config: EvalConfig = EvalConfig(),
    classes: Optional[Iterable[BoxClass]] = None,
) -> EvalReport:
    """Per-class AP/APH over frames keyed alike in ``preds`` and ``gts``.

    A frame missing from ``preds`` has no detections. Classes without ground
    truth report NaN and are left out of the mean.
    """
    classes = list(classes) if classes is not None else list(BoxClass)
    total = {c: Tally() for c in BoxClass}
    for key in sorted(set(gts) | set(preds)):
        for c, t in frame_tallies(preds.get(key, ()), gts.get(key, ()), config).items():
            total[c].extend(t)
    per_class = {}
    for c in classes:
        try:
            per_class[c] = average_precision(total[c])
        except EmptyGroundTruth:
            per_class[c] = (math.nan, math.nan)
    return EvalReport(per_class)
