#!/usr/bin/env python3
"""
Tests for pixel-wise and event-wise change metrics and their aggregation.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / 'src'))

from volumetric_change.datamodel import PolygonAnnotation
from volumetric_change.errors import EvaluationError
from volumetric_change.metrics import (Confusion, EventMatchOutcome, GroundTruthMatch,
                                       PairEvaluation, Verdict, aggregate,
                                       brute_force_event_match, event_match,
                                       event_recall_by_size, event_scores, pixel_confusion,
                                       pixel_scores)
from volumetric_change.raster import BinaryMask, rasterize_polygons


def _square(x0, y0, side):
    return PolygonAnnotation(((x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)))


def _mask(width, height, *rects):
    bits = np.zeros((height, width), dtype=bool)
    for x0, y0, x1, y1 in rects:
        bits[y0:y1, x0:x1] = True
    return BinaryMask(bits)


def _random_polygon(rng, width, height):
    n = int(rng.integers(3, 8))
    cx, cy = rng.uniform(4, width - 4), rng.uniform(4, height - 4)
    radius = rng.uniform(2, min(width, height) / 3)
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    vertices = []
    for a in angles:
        r = radius * rng.uniform(0.5, 1.0)
        x = float(np.clip(round(cx + r * np.cos(a), 1), 0, width))
        y = float(np.clip(round(cy + r * np.sin(a), 1), 0, height))
        vertices.append((x, y))
    return PolygonAnnotation(tuple(vertices))


def _random_instance(rng):
    width, height = (int(v) for v in rng.integers(12, 65, 2))
    polygons = [_random_polygon(rng, width, height) for _ in range(int(rng.integers(0, 7)))]
    bits = np.zeros((height, width), dtype=bool)
    for _ in range(int(rng.integers(0, 9))):
        x0, y0 = int(rng.integers(0, width)), int(rng.integers(0, height))
        w, h = (int(v) for v in rng.integers(1, 12, 2))
        bits[y0:y0 + h, x0:x0 + w] = True
    return BinaryMask(bits), polygons


# ---------------------------------------------------------------------------
# Pixel-wise
# ---------------------------------------------------------------------------

def test_identical_masks():
    gt = _mask(8, 8, (0, 0, 5, 2))
    assert pixel_confusion(gt, gt) == Confusion(tp=10, fp=0, fn=0, tn=54)


def test_empty_prediction():
    gt = _mask(8, 8, (0, 0, 5, 2))
    c = pixel_confusion(BinaryMask.empty(8, 8), gt)
    assert (c.tp, c.fn, c.fp) == (0, 10, 0)


def test_confusion_matches_double_loop():
    rng = np.random.default_rng(21)
    pred = BinaryMask(rng.random((32, 32)) < 0.4)
    gt = BinaryMask(rng.random((32, 32)) < 0.3)
    counts = {"tp": 0, "fp": 0, "fn": 0, "tn": 0}
    for y in range(32):
        for x in range(32):
            p, g = pred.bits[y, x], gt.bits[y, x]
            key = ("tp" if g else "fp") if p else ("fn" if g else "tn")
            counts[key] += 1
    assert pixel_confusion(pred, gt) == Confusion(**counts)


def test_pixel_scores_examples():
    perfect = pixel_scores(Confusion(tp=10))
    assert (perfect.precision, perfect.recall, perfect.f1, perfect.iou) == (1.0, 1.0, 1.0, 1.0)
    empty = pixel_scores(Confusion(tn=64))
    assert (empty.precision, empty.recall, empty.f1, empty.iou) == (1.0, 1.0, 1.0, 1.0)
    s = pixel_scores(Confusion(tp=6, fp=2, fn=4))
    assert s.precision == pytest.approx(0.75)
    assert s.recall == pytest.approx(0.6)
    assert s.f1 == pytest.approx(12 / 18)
    assert s.iou == pytest.approx(0.5)


def test_f1_iou_identity():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        tp, fp, fn = (int(v) for v in rng.integers(0, 1000, 3))
        if tp + fp + fn == 0:
            continue
        s = pixel_scores(Confusion(tp, fp, fn))
        assert s.f1 == pytest.approx(2 * s.iou / (1 + s.iou), abs=1e-12)
        assert all(0.0 <= v <= 1.0 for v in (s.precision, s.recall, s.f1, s.iou))


# ---------------------------------------------------------------------------
# Event-wise
# ---------------------------------------------------------------------------

def test_exact_cover_is_true_positive():
    outcome = event_match(_mask(16, 16, (4, 4, 8, 8)), [_square(4, 4, 4)])
    assert outcome.per_gt[0].iou == 1.0
    assert (outcome.tp, outcome.fp, outcome.fn) == (1, 0, 0)


def test_components_touching_one_polygon_are_merged():
    # a 2x2 block and a 1x4 strip, separated by an empty column
    pred = _mask(16, 16, (4, 4, 6, 6), (7, 4, 8, 8))
    gt = [_square(4, 4, 4)]
    outcome = event_match(pred, gt)
    match = outcome.per_gt[0]
    assert outcome.n_pred_components == 2
    assert (match.gt_area, match.intersection) == (16, 8)
    assert match.iou == pytest.approx(0.5)
    assert match.verdict is Verdict.TP
    assert outcome.unmatched_pred_fps == 0


def test_empty_prediction_counts_misses_twice():
    gt = [_square(0, 0, 3), _square(6, 6, 3), _square(12, 0, 3)]
    outcome = event_match(BinaryMask.empty(16, 16), gt)
    assert (outcome.tp, outcome.fn, outcome.fp) == (0, 3, 3)


def test_no_ground_truth_leaves_unmatched_components():
    outcome = event_match(_mask(16, 16, (0, 0, 2, 2), (8, 8, 10, 10)), [])
    assert outcome.unmatched_pred_fps == 2
    assert (outcome.tp, outcome.fn, outcome.fp) == (0, 0, 2)


def test_threshold_is_strict():
    # 4 of 16 pixels covered: IoU exactly 0.25
    outcome = event_match(_mask(16, 16, (4, 4, 8, 5)), [_square(4, 4, 4)], iou_threshold=0.25)
    assert outcome.per_gt[0].iou == 0.25
    assert outcome.per_gt[0].verdict is Verdict.FN_FP


def test_bad_threshold_and_polygon_outside():
    with pytest.raises(EvaluationError):
        event_match(BinaryMask.empty(8, 8), [], iou_threshold=1.0)
    with pytest.raises(EvaluationError):
        event_match(BinaryMask.empty(8, 8), [_square(6, 6, 4)])


def _outcome(verdicts, unmatched):
    per_gt = tuple(GroundTruthMatch(i, 1, 1, 1, 1.0, v) for i, v in enumerate(verdicts))
    return EventMatchOutcome(per_gt, unmatched, 0.25)


def test_event_scores_tallies():
    s = event_scores(_outcome([Verdict.TP], 0))
    assert (s.precision, s.recall) == (1.0, 1.0)
    s = event_scores(_outcome([Verdict.FN_FP] * 3, 0))
    assert (s.precision, s.recall) == (0.0, 0.0)
    s = event_scores(_outcome([Verdict.TP, Verdict.TP, Verdict.FN_FP], 1))
    assert (s.tp, s.fn, s.fp) == (2, 1, 2)
    assert s.precision == pytest.approx(0.5)
    assert s.recall == pytest.approx(2 / 3)


def test_matches_brute_force():
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        pred, polygons = _random_instance(rng)
        threshold = float(rng.choice([0.0, 0.1, 0.25, 0.5]))
        fast = event_match(pred, polygons, threshold)
        slow = brute_force_event_match(pred, polygons, threshold)
        assert fast.unmatched_pred_fps == slow.unmatched_pred_fps
        assert fast.n_pred_components == slow.n_pred_components
        for a, b in zip(fast.per_gt, slow.per_gt):
            assert a.verdict is b.verdict
            assert (a.gt_area, a.merged_pred_area, a.intersection) == \
                (b.gt_area, b.merged_pred_area, b.intersection)
            assert a.iou == pytest.approx(b.iou, abs=1e-12)
        assert fast.tp + fast.fn == len(polygons)
        assert fast.fp == fast.unmatched_pred_fps + fast.fn


def test_splitting_a_component_keeps_verdicts():
    gt = [_square(2, 2, 10)]
    whole = event_match(_mask(16, 16, (3, 3, 11, 11)), gt)
    split = event_match(_mask(16, 16, (3, 3, 11, 6), (3, 7, 11, 11)), gt)
    assert split.n_pred_components == 2
    assert whole.per_gt[0].verdict is split.per_gt[0].verdict
    # the gap row costs exactly its 8 pixels of intersection
    assert split.per_gt[0].intersection == whole.per_gt[0].intersection - 8


def test_raising_threshold_never_adds_true_positives():
    rng = np.random.default_rng(77)
    for _ in range(100):
        pred, polygons = _random_instance(rng)
        tps = [event_match(pred, polygons, t).tp for t in (0.0, 0.2, 0.4, 0.6, 0.8)]
        assert tps == sorted(tps, reverse=True)


def test_brute_force_size_limit():
    with pytest.raises(EvaluationError):
        brute_force_event_match(BinaryMask.empty(300, 10), [])


def test_large_raster_is_fast():
    rng = np.random.default_rng(3)
    bits = np.zeros((2400, 4000), dtype=bool)
    polygons = []
    for _ in range(40):
        x, y = int(rng.integers(0, 3800)), int(rng.integers(0, 2200))
        bits[y + 10:y + 150, x + 10:x + 150] = True
        polygons.append(_square(x, y, 160))
    pred = BinaryMask(bits)
    start = time.perf_counter()
    outcome = event_match(pred, polygons)
    assert time.perf_counter() - start < 10.0
    assert outcome.tp + outcome.fn == 40


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _pair(site, a, pred, polygons, size=16):
    gt = rasterize_polygons(polygons, size, size)
    return PairEvaluation(pixel_confusion(pred, gt), event_match(pred, polygons), site, a, a + 1)


def test_single_pair_report_equals_pair_scores():
    pair = _pair("A", 0, _mask(16, 16, (4, 4, 8, 8)), [_square(4, 4, 4), _square(10, 10, 3)])
    report = aggregate([pair])
    assert report.overall.confusion == pair.confusion
    assert report.overall.pixel == pixel_scores(pair.confusion)
    assert report.overall.events == event_scores(pair.outcome)
    assert report.pairs[0].name == "A/0_1"


def test_duplicated_pairs_keep_ratios():
    pair = _pair("A", 0, _mask(16, 16, (4, 4, 9, 8)), [_square(4, 4, 4)])
    once = aggregate([pair]).overall
    twice = aggregate([pair, pair]).overall
    assert (once.pixel, once.events.precision, once.events.recall) == \
        (twice.pixel, twice.events.precision, twice.events.recall)


def test_micro_aggregation():
    empty = _outcome([], 0)
    report = aggregate([(Confusion(tp=1, fp=1), empty), (Confusion(tp=3, fp=0), empty)])
    assert report.overall.pixel.precision == pytest.approx(0.8)


def test_site_rows_and_missing_count():
    a = _pair("A", 0, _mask(16, 16, (4, 4, 8, 8)), [_square(4, 4, 4)])
    b = _pair("B", 3, BinaryMask.empty(16, 16), [_square(4, 4, 4)])
    b = PairEvaluation(b.confusion, b.outcome, "B", 3, 4, missing_prediction=True)
    report = aggregate([b, a], model="ncc", config={"block": 8})
    assert [row.name for row in report.sites] == ["A", "B"]
    assert report.overall.n_missing == 1
    assert report.overall.events.tp == 1 and report.overall.events.fn == 1
    data = report.to_dict()
    assert data["model"] == "ncc" and data["config"] == {"block": 8}
    assert data["overall"]["event_fp"] == 1


def test_aggregate_empty_raises():
    with pytest.raises(EvaluationError):
        aggregate([])


def test_event_recall_by_size():
    small = _pair("A", 0, _mask(16, 16, (0, 0, 2, 2)), [_square(0, 0, 2), _square(8, 8, 6)])
    bins = event_recall_by_size([small], [0, 10])
    assert [(b.low, b.n_events, b.n_detected) for b in bins] == [(0, 1, 1), (10, 1, 0)]
    assert bins[0].recall == 1.0 and bins[1].recall == 0.0
