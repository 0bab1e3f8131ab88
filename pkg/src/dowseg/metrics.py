"""Pixel- and object-level evaluation metrics.

Pixel metrics are IoU based (binary and per-class with macro means over
configurable class subsets). Object metrics follow the detection-style
average precision family: greedy confidence-ordered matching at an IoU
threshold, the precision-envelope AP, its mean over thresholds 0.50-0.95,
and true-positive counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .instances import InstanceSet

__all__ = [
    "MatchResult",
    "MetricsReport",
    "pixel_iou",
    "class_ious",
    "match_instances",
    "average_precision",
    "ap_range",
    "count_tps",
    "evaluate",
    "class_raster",
]

AP_RANGE_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))
SUBSET3_DEFAULT = (1, 2, 5)
SUBSET5_DEFAULT = (1, 2, 3, 4, 5)


@dataclass
class MatchResult:
    """Injective greedy matching between predictions and ground truths."""

    pairs: list[tuple[int, int, float]]  # (pred id, gt id, IoU)
    unmatched_preds: list[int]
    unmatched_gts: list[int]
    threshold: float


@dataclass
class MetricsReport:
    iou_binary: float | None = None
    per_class_iou: dict[int, float | None] = field(default_factory=dict)
    miou3: float | None = None
    miou5: float | None = None
    ap50: float | None = None
    per_class_ap: dict[int, float | None] = field(default_factory=dict)
    map50_3: float | None = None
    map50_5: float | None = None
    ap50_95: float | None = None
    tps: int | None = None

    def is_empty(self) -> bool:
        scalars = (
            self.iou_binary, self.miou3, self.miou5, self.ap50,
            self.map50_3, self.map50_5, self.ap50_95, self.tps,
        )
        return all(v is None for v in scalars) and not self.per_class_iou and not self.per_class_ap


def pixel_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two binary masks; both empty counts as 1."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValidationError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def class_ious(
    pred: np.ndarray, gt: np.ndarray, subset: tuple[int, ...]
) -> tuple[dict[int, float | None], float | None]:
    """Per-class pixel IoU over class-id rasters plus the macro mean.

    Classes absent from both rasters get None and are excluded from the
    mean; a class present on only one side scores 0.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValidationError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    per_class: dict[int, float | None] = {}
    for c in subset:
        inter = int(np.logical_and(pred == c, gt == c).sum())
        union = int((pred == c).sum()) + int((gt == c).sum()) - inter
        per_class[int(c)] = None if union == 0 else inter / union
    present = [v for v in per_class.values() if v is not None]
    macro = float(np.mean(present)) if present else None
    return per_class, macro


def _intersection_table(pred_map: np.ndarray, gt_map: np.ndarray) -> np.ndarray:
    """(n_pred+1, n_gt+1) pixel-overlap counts from two instance maps."""
    np_ids = int(pred_map.max())
    ng_ids = int(gt_map.max())
    code = pred_map.astype(np.int64) * (ng_ids + 1) + gt_map.astype(np.int64)
    counts = np.bincount(code.ravel(), minlength=(np_ids + 1) * (ng_ids + 1))
    return counts.reshape(np_ids + 1, ng_ids + 1)


def _ranked_pred_ids(preds: InstanceSet) -> list[int]:
    for r in preds.records:
        if r.confidence is None:
            raise ValidationError(f"prediction {r.id} has no confidence score")
    return [r.id for r in sorted(preds.records, key=lambda r: (-r.confidence, r.id))]


def match_instances(
    preds: InstanceSet,
    gts: InstanceSet,
    iou_threshold: float,
    class_aware: bool = False,
) -> MatchResult:
    """Greedily match predictions to ground truths by descending confidence.

    Each prediction (ties: lower id first) takes the unmatched ground truth
    with the highest IoU >= threshold, restricted to its own class when
    ``class_aware``; IoU ties go to the lower ground-truth id.
    """
    if preds.instance_map.shape != gts.instance_map.shape:
        raise ValidationError("prediction and ground-truth rasters differ in shape")
    inter = _intersection_table(preds.instance_map, gts.instance_map)
    pred_area = np.bincount(preds.instance_map.ravel(), minlength=inter.shape[0])
    gt_area = np.bincount(gts.instance_map.ravel(), minlength=inter.shape[1])
    gt_class = {r.id: r.class_id for r in gts.records}
    pred_class = {r.id: r.class_id for r in preds.records}

    pairs = []
    matched_gts: set[int] = set()
    for pid in _ranked_pred_ids(preds):
        best = None  # (iou, -gt_id) maximized
        for gt_rec in gts.records:
            gid = gt_rec.id
            if gid in matched_gts:
                continue
            if class_aware and pred_class[pid] != gt_class[gid]:
                continue
            i = int(inter[pid, gid])
            if i == 0:
                continue
            iou = i / float(pred_area[pid] + gt_area[gid] - i)
            if iou >= iou_threshold and (best is None or (iou, -gid) > best[:2]):
                best = (iou, -gid, gid)
        if best is not None:
            pairs.append((pid, best[2], float(best[0])))
            matched_gts.add(best[2])
    matched_preds = {p for p, _, _ in pairs}
    return MatchResult(
        pairs=pairs,
        unmatched_preds=[r.id for r in preds.records if r.id not in matched_preds],
        unmatched_gts=[r.id for r in gts.records if r.id not in matched_gts],
        threshold=iou_threshold,
    )


def _pr_events(
    scenes: list[tuple[InstanceSet, InstanceSet]],
    iou_threshold: float,
    class_aware: bool,
    class_filter: int | None,
) -> tuple[list[tuple[float, int, int]], int]:
    """Pooled (confidence, tiebreak, is_tp) events plus the ground-truth count."""
    events = []
    n_gt = 0
    for scene_idx, (pred, gt) in enumerate(scenes):
        if class_filter is not None:
            pred = _filter_class(pred, class_filter)
            gt = _filter_class(gt, class_filter)
        n_gt += len(gt.records)
        m = match_instances(pred, gt, iou_threshold, class_aware=class_aware)
        matched = {p for p, _, _ in m.pairs}
        for r in pred.records:
            events.append((-r.confidence, (scene_idx, r.id), 1 if r.id in matched else 0))
    events.sort(key=lambda e: (e[0], e[1]))
    return events, n_gt


def _filter_class(inst: InstanceSet, class_id: int) -> InstanceSet:
    keep = [r for r in inst.records if r.class_id == class_id]
    keep_ids = np.zeros(len(inst.records) + 1, dtype=bool)
    for r in keep:
        keep_ids[r.id] = True
    new_map = np.where(keep_ids[inst.instance_map], inst.instance_map, 0).astype(np.uint32)
    return InstanceSet(new_map, keep)


def _ap_from_events(events, n_gt: int, interpolation: str) -> float | None:
    if n_gt == 0:
        return None
    if not events:
        return 0.0
    tp = np.array([e[2] for e in events], dtype=np.float64)
    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, len(tp) + 1)
    recall = cum_tp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if interpolation == "coco101":
        grid = np.linspace(0.0, 1.0, 101)
        idx = np.searchsorted(recall, grid, side="left")
        vals = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
        return float(vals.mean())
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, envelope):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def average_precision(
    preds,
    gts,
    iou_threshold: float,
    class_aware: bool = False,
    interpolation: str = "envelope",
) -> float | None:
    """Area under the precision envelope of the confidence-ranked detections.

    ``interpolation`` is "envelope" (all-points) or "coco101" (101-point
    recall sampling). Returns None when there are no ground truths.
    """
    if interpolation not in ("envelope", "coco101"):
        raise ValidationError(f"unknown interpolation {interpolation!r}")
    scenes = _as_scenes(preds, gts)
    events, n_gt = _pr_events(scenes, iou_threshold, class_aware, None)
    return _ap_from_events(events, n_gt, interpolation)


def ap_range(preds, gts, class_aware: bool = False, interpolation: str = "envelope") -> float | None:
    """Mean AP over IoU thresholds 0.50, 0.55, ..., 0.95."""
    scenes = _as_scenes(preds, gts)
    vals = []
    for t in AP_RANGE_THRESHOLDS:
        events, n_gt = _pr_events(scenes, t, class_aware, None)
        ap = _ap_from_events(events, n_gt, interpolation)
        if ap is None:
            return None
        vals.append(ap)
    return float(np.mean(vals))


def count_tps(preds, gts, class_aware: bool = False) -> int:
    """Matched predictions at IoU >= 0.5 (one ground truth matches once)."""
    scenes = _as_scenes(preds, gts)
    total = 0
    for pred, gt in scenes:
        total += len(match_instances(pred, gt, 0.5, class_aware=class_aware).pairs)
    return total


def class_raster(inst: InstanceSet) -> np.ndarray:
    """Per-pixel class ids derived from an instance set (0 = background)."""
    lut = np.zeros(len(inst.records) + 1, dtype=np.int64)
    for r in inst.records:
        if r.class_id is None:
            raise ValidationError(f"instance {r.id} has no class")
        lut[r.id] = r.class_id
    return lut[inst.instance_map]


def _as_scenes(preds, gts) -> list[tuple[InstanceSet, InstanceSet]]:
    if isinstance(preds, InstanceSet):
        preds = [preds]
    if isinstance(gts, InstanceSet):
        gts = [gts]
    if len(preds) != len(gts):
        raise ValidationError("prediction and ground-truth scene lists differ in length")
    for p, g in zip(preds, gts):
        if p.instance_map.shape != g.instance_map.shape:
            raise ValidationError("paired rasters differ in shape")
    return list(zip(preds, gts))


def evaluate(
    preds,
    gts,
    mode: str = "multiclass",
    subset3: tuple[int, ...] = SUBSET3_DEFAULT,
    subset5: tuple[int, ...] = SUBSET5_DEFAULT,
    interpolation: str = "envelope",
) -> MetricsReport:
    """Full evaluation of one or more scenes into a MetricsReport.

    Binary IoU/AP metrics always use binarized rasters; in "multiclass"
    mode per-class IoU/AP and their macro means over ``subset3``/``subset5``
    are added, and true positives are counted class-aware. Scene lists are
    pooled: pixel counts accumulate and detections rank globally.
    """
    if mode not in ("binary", "multiclass"):
        raise ValidationError(f"unknown mode {mode!r}")
    scenes = _as_scenes(preds, gts)
    report = MetricsReport()

    inter = union = 0
    for pred, gt in scenes:
        pm = pred.instance_map > 0
        gm = gt.instance_map > 0
        inter += int(np.logical_and(pm, gm).sum())
        union += int(np.logical_or(pm, gm).sum())
    report.iou_binary = 1.0 if union == 0 else inter / union

    events, n_gt = _pr_events(scenes, 0.5, class_aware=False, class_filter=None)
    report.ap50 = _ap_from_events(events, n_gt, interpolation)
    vals = []
    for t in AP_RANGE_THRESHOLDS:
        ev, n = _pr_events(scenes, t, class_aware=False, class_filter=None)
        vals.append(_ap_from_events(ev, n, interpolation))
    report.ap50_95 = None if any(v is None for v in vals) else float(np.mean(vals))
    report.tps = count_tps(
        [p for p, _ in scenes], [g for _, g in scenes], class_aware=(mode == "multiclass")
    )

    if mode == "binary":
        return report

    class_inter: dict[int, int] = {c: 0 for c in subset5}
    class_marks: dict[int, int] = {c: 0 for c in subset5}
    for pred, gt in scenes:
        pc = class_raster(pred)
        gc = class_raster(gt)
        for c in subset5:
            i = int(np.logical_and(pc == c, gc == c).sum())
            class_inter[c] += i
            class_marks[c] += int((pc == c).sum()) + int((gc == c).sum()) - i
    report.per_class_iou = {
        c: (None if class_marks[c] == 0 else class_inter[c] / class_marks[c]) for c in subset5
    }
    report.miou5 = _macro(report.per_class_iou, subset5)
    report.miou3 = _macro(report.per_class_iou, subset3)

    report.per_class_ap = {}
    for c in subset5:
        ev, n = _pr_events(scenes, 0.5, class_aware=False, class_filter=c)
        report.per_class_ap[c] = _ap_from_events(ev, n, interpolation)
    report.map50_5 = _macro(report.per_class_ap, subset5)
    report.map50_3 = _macro(report.per_class_ap, subset3)
    return report


def _macro(values: dict[int, float | None], subset: tuple[int, ...]) -> float | None:
    present = [values[c] for c in subset if c in values and values[c] is not None]
    return float(np.mean(present)) if present else None
