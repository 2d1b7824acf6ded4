"""
Evaluation Metrics Module

Pixel-wise confusion counts and scores (precision, recall, F1, IoU) and the
event-wise protocol:

1. Each 8-connected component of the predicted change map is an event.
2. For every ground-truth polygon, all predicted events intersecting it are
   merged and the IoU of the merged prediction with the polygon is computed.
3. IoU above the threshold is a true positive; otherwise the polygon counts as
   both a false negative and a false positive.
4. Predicted events touching no polygon are false positives.
"""

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .datamodel import PolygonAnnotation
from .errors import DimensionMismatchError, EvaluationError
from .raster import BinaryMask, polygon_window, label_components

DEFAULT_IOU_THRESHOLD = 0.25
BRUTE_FORCE_MAX_SIDE = 256


def _ratio(numerator: int, denominator: int, tp: int, fp: int, fn: int) -> float:
    # 0/0 is a perfect score only when there is nothing to find and nothing found.
    if denominator == 0:
        return 1.0 if tp == fp == fn == 0 else 0.0
    return numerator / denominator


# ---------------------------------------------------------------------------
# Pixel-wise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Confusion:
    """Pixel counts of one pair (or a sum over pairs)."""
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError(f"Confusion counts must be >= 0: {self}")

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp,
                         self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class PixelScores:
    precision: float
    recall: float
    f1: float
    iou: float


def pixel_confusion(pred: BinaryMask, gt: BinaryMask) -> Confusion:
    """Exact per-pixel counts; gt is the union of the rasterized polygons."""
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise DimensionMismatchError(
            f"Prediction is {pred.width}x{pred.height}, ground truth is {gt.width}x{gt.height}")
    p, g = pred.bits, gt.bits
    tp = int(np.count_nonzero(p & g))
    n_pred = int(np.count_nonzero(p))
    n_gt = int(np.count_nonzero(g))
    fp = n_pred - tp
    fn = n_gt - tp
    tn = p.size - tp - fp - fn
    return Confusion(tp, fp, fn, tn)


def pixel_scores(c: Confusion) -> PixelScores:
    tp, fp, fn = c.tp, c.fp, c.fn
    return PixelScores(
        precision=_ratio(tp, tp + fp, tp, fp, fn),
        recall=_ratio(tp, tp + fn, tp, fp, fn),
        f1=_ratio(2 * tp, 2 * tp + fp + fn, tp, fp, fn),
        iou=_ratio(tp, tp + fp + fn, tp, fp, fn),
    )


# ---------------------------------------------------------------------------
# Event-wise
# ---------------------------------------------------------------------------

class Verdict(Enum):
    TP = "TP"
    FN_FP = "FN_FP"  # missed: one false negative and one false positive


@dataclass(frozen=True)
class GroundTruthMatch:
    """Match result of one ground-truth polygon."""
    gt_index: int
    gt_area: int
    merged_pred_area: int
    intersection: int
    iou: float
    verdict: Verdict


@dataclass(frozen=True)
class EventMatchOutcome:
    per_gt: Tuple[GroundTruthMatch, ...]
    unmatched_pred_fps: int
    threshold: float
    n_pred_components: int = 0

    @property
    def tp(self) -> int:
        return sum(1 for m in self.per_gt if m.verdict is Verdict.TP)

    @property
    def fn(self) -> int:
        return sum(1 for m in self.per_gt if m.verdict is Verdict.FN_FP)

    @property
    def fp(self) -> int:
        return self.unmatched_pred_fps + self.fn


@dataclass(frozen=True)
class EventScores:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float


def _check_threshold(iou_threshold: float) -> None:
    if not 0 <= iou_threshold < 1:
        raise EvaluationError(f"iou_threshold must be in [0, 1), got {iou_threshold}")


def _check_polygons_inside(polygons: Sequence[PolygonAnnotation], width: int, height: int) -> None:
    for k, polygon in enumerate(polygons):
        min_x, min_y, max_x, max_y = polygon.bounds()
        if min_x < 0 or min_y < 0 or max_x > width or max_y > height:
            raise EvaluationError(
                f"Ground-truth polygon {k} lies outside the {width}x{height} raster")


def _verdict(iou: float, iou_threshold: float) -> Verdict:
    return Verdict.TP if iou > iou_threshold else Verdict.FN_FP


def event_match(pred: BinaryMask, gt_polygons: Sequence[PolygonAnnotation],
                iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> EventMatchOutcome:
    """
    Match predicted events against ground-truth polygons.

    A component may join the merge of several polygons; it is an unmatched false
    positive only if it touches none.
    """
    _check_threshold(iou_threshold)
    width, height = pred.width, pred.height
    _check_polygons_inside(gt_polygons, width, height)

    labels, components = label_components(pred)
    areas = np.zeros(len(components) + 1, dtype=np.int64)
    for component in components:
        areas[component.label] = component.pixel_count

    touched_any = np.zeros(len(components) + 1, dtype=bool)
    per_gt = []
    for index, polygon in enumerate(gt_polygons):
        window = polygon_window(polygon, width, height)
        if window is None:
            gt_area, intersection, merged_area = 0, 0, 0
        else:
            x0, y0, local = window
            covered = labels[y0:y0 + local.shape[0], x0:x0 + local.shape[1]][local]
            gt_area = int(local.sum())
            hits = covered[covered > 0]
            intersection = int(hits.size)
            touched = np.unique(hits)
            touched_any[touched] = True
            merged_area = int(areas[touched].sum())
        union = merged_area + gt_area - intersection
        iou = intersection / union if union > 0 else 0.0
        per_gt.append(GroundTruthMatch(index, gt_area, merged_area, intersection, iou,
                                       _verdict(iou, iou_threshold)))

    unmatched = int(len(components) - np.count_nonzero(touched_any[1:]))
    return EventMatchOutcome(tuple(per_gt), unmatched, iou_threshold, len(components))


def event_scores(outcome: EventMatchOutcome) -> EventScores:
    tp, fp, fn = outcome.tp, outcome.fp, outcome.fn
    return _event_scores_from_counts(tp, fp, fn)


def _event_scores_from_counts(tp: int, fp: int, fn: int) -> EventScores:
    return EventScores(
        tp=tp, fp=fp, fn=fn,
        precision=_ratio(tp, tp + fp, tp, fp, fn),
        recall=_ratio(tp, tp + fn, tp, fp, fn),
    )


# ---------------------------------------------------------------------------
# Brute-force reference
# ---------------------------------------------------------------------------

def _inside(polygon: PolygonAnnotation, xc: float, yc: float) -> bool:
    inside = False
    for (px, py), (qx, qy) in polygon.edges():
        if (py > yc) != (qy > yc):
            if xc < px + (yc - py) * (qx - px) / (qy - py):
                inside = not inside
    return inside


def _polygon_pixels(polygon: PolygonAnnotation, width: int, height: int) -> set:
    min_x, min_y, max_x, max_y = polygon.bounds()
    pixels = set()
    for y in range(max(int(math.floor(min_y)) - 1, 0), min(int(math.ceil(max_y)) + 1, height)):
        for x in range(max(int(math.floor(min_x)) - 1, 0), min(int(math.ceil(max_x)) + 1, width)):
            if _inside(polygon, x + 0.5, y + 0.5):
                pixels.add((x, y))
    return pixels


def _flood_fill_components(pred: BinaryMask) -> List[set]:
    remaining = {(int(x), int(y)) for y, x in zip(*np.nonzero(pred.bits))}
    components = []
    while remaining:
        seed = min(remaining, key=lambda p: (p[1], p[0]))
        remaining.discard(seed)
        queue = deque([seed])
        region = {seed}
        while queue:
            x, y = queue.popleft()
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    neighbour = (x + dx, y + dy)
                    if neighbour in remaining:
                        remaining.discard(neighbour)
                        region.add(neighbour)
                        queue.append(neighbour)
        components.append(region)
    return components


def brute_force_event_match(pred: BinaryMask, gt_polygons: Sequence[PolygonAnnotation],
                            iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> EventMatchOutcome:
    """Same contract as event_match using explicit pixel sets; for testing only."""
    if pred.width > BRUTE_FORCE_MAX_SIDE or pred.height > BRUTE_FORCE_MAX_SIDE:
        raise EvaluationError(
            f"Brute-force matching is limited to {BRUTE_FORCE_MAX_SIDE}x{BRUTE_FORCE_MAX_SIDE}")
    _check_threshold(iou_threshold)
    _check_polygons_inside(gt_polygons, pred.width, pred.height)

    components = _flood_fill_components(pred)
    touched = set()
    per_gt = []
    for index, polygon in enumerate(gt_polygons):
        gt = _polygon_pixels(polygon, pred.width, pred.height)
        merged = set()
        for c, region in enumerate(components):
            if region & gt:
                merged |= region
                touched.add(c)
        intersection = len(merged & gt)
        union = len(merged | gt)
        iou = intersection / union if union else 0.0
        per_gt.append(GroundTruthMatch(index, len(gt), len(merged), intersection, iou,
                                       _verdict(iou, iou_threshold)))
    unmatched = len(components) - len(touched)
    return EventMatchOutcome(tuple(per_gt), unmatched, iou_threshold, len(components))


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairEvaluation:
    """Evaluation of one annotated pair."""
    confusion: Confusion
    outcome: EventMatchOutcome
    site: str = ""
    frame_a: int = -1
    frame_b: int = -1
    missing_prediction: bool = False

    @property
    def label(self) -> str:
        return f"{self.site}/{self.frame_a}_{self.frame_b}"


@dataclass(frozen=True)
class MetricsRow:
    """Scores of one pair, one site, or the whole evaluated set."""
    scope: str  # pair | site | overall
    name: str
    n_pairs: int
    n_missing: int
    confusion: Confusion
    pixel: PixelScores
    events: EventScores

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scope": self.scope,
            "name": self.name,
            "n_pairs": self.n_pairs,
            "n_missing": self.n_missing,
            "confusion": {"tp": self.confusion.tp, "fp": self.confusion.fp,
                          "fn": self.confusion.fn, "tn": self.confusion.tn},
            "precision": self.events.precision,
            "recall": self.events.recall,
            "f1": self.pixel.f1,
            "iou": self.pixel.iou,
            "pixel_precision": self.pixel.precision,
            "pixel_recall": self.pixel.recall,
            "event_tp": self.events.tp,
            "event_fp": self.events.fp,
            "event_fn": self.events.fn,
        }


@dataclass(frozen=True)
class MetricsReport:
    overall: MetricsRow
    sites: Tuple[MetricsRow, ...] = ()
    pairs: Tuple[MetricsRow, ...] = ()
    model: str = "model"
    config: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "config": dict(self.config),
            "overall": self.overall.to_dict(),
            "sites": [row.to_dict() for row in self.sites],
            "pairs": [row.to_dict() for row in self.pairs],
        }


def _as_pair(item: Union[PairEvaluation, Tuple[Confusion, EventMatchOutcome]]) -> PairEvaluation:
    if isinstance(item, PairEvaluation):
        return item
    confusion, outcome = item
    return PairEvaluation(confusion=confusion, outcome=outcome)


def _row(scope: str, name: str, pairs: Sequence[PairEvaluation]) -> MetricsRow:
    confusion = Confusion()
    tp = fp = fn = 0
    for pair in pairs:
        confusion = confusion + pair.confusion
        tp += pair.outcome.tp
        fp += pair.outcome.fp
        fn += pair.outcome.fn
    return MetricsRow(
        scope=scope,
        name=name,
        n_pairs=len(pairs),
        n_missing=sum(1 for p in pairs if p.missing_prediction),
        confusion=confusion,
        pixel=pixel_scores(confusion),
        events=_event_scores_from_counts(tp, fp, fn),
    )


def aggregate(pair_results: Iterable, model: str = "model",
              config: Optional[Dict[str, Any]] = None) -> MetricsReport:
    """
    Micro-aggregate pair results: sum counts, then score.

    Args:
        pair_results: PairEvaluation objects or (Confusion, EventMatchOutcome) tuples
        model: Model name used for report rows
        config: Effective run configuration recorded in the report

    Returns:
        MetricsReport with overall, per-site and per-pair rows
    """
    pairs = [_as_pair(item) for item in pair_results]
    if not pairs:
        raise EvaluationError("Cannot aggregate an empty list of pair results")

    by_site: Dict[str, List[PairEvaluation]] = {}
    for pair in pairs:
        by_site.setdefault(pair.site, []).append(pair)

    ordered = sorted(pairs, key=lambda p: (p.site, p.frame_a, p.frame_b))
    return MetricsReport(
        overall=_row("overall", "overall", pairs),
        sites=tuple(_row("site", site, by_site[site]) for site in sorted(by_site)),
        pairs=tuple(_row("pair", p.label, [p]) for p in ordered),
        model=model,
        config=dict(config or {}),
    )


@dataclass(frozen=True)
class SizeBin:
    low: float
    high: float
    n_events: int
    n_detected: int

    @property
    def recall(self) -> float:
        return self.n_detected / self.n_events if self.n_events else 1.0


def event_recall_by_size(pair_results: Iterable, bin_edges: Sequence[float]) -> List[SizeBin]:
    """
    Event recall per ground-truth area bin [edge_i, edge_{i+1}); the last bin is
    open-ended.
    """
    edges = sorted(bin_edges)
    if not edges:
        raise ValueError("bin_edges must not be empty")
    bounds = list(zip(edges, edges[1:] + [math.inf]))
    totals = [0] * len(bounds)
    detected = [0] * len(bounds)
    for item in pair_results:
        for match in _as_pair(item).outcome.per_gt:
            for i, (low, high) in enumerate(bounds):
                if low <= match.gt_area < high:
                    totals[i] += 1
                    detected[i] += match.verdict is Verdict.TP
                    break
    return [SizeBin(low, high, totals[i], detected[i]) for i, (low, high) in enumerate(bounds)]
