"""
Evaluation and reporting for the volumetric change toolkit.

Scores a directory of predicted change masks against a manifest's annotated
pairs and renders MetricsReports as JSON (full detail) or CSV (percentages with
two decimals, one row per model and site plus an overall row).
"""

import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd
from tqdm import tqdm

from .datamodel import AnnotatedPair, Manifest, Site, Split
from .errors import DimensionMismatchError, EvaluationError
from .metrics import (DEFAULT_IOU_THRESHOLD, MetricsReport, PairEvaluation, aggregate,
                      event_match, pixel_confusion)
from .raster import BinaryMask, rasterize_polygons, read_mask

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["model", "site", "precision", "recall", "f1", "iou",
               "event_tp", "event_fp", "event_fn"]
PERCENT_COLUMNS = ("precision", "recall", "f1", "iou")


def prediction_path(pred_dir, site: str, frame_a: int, frame_b: int) -> Path:
    """<pred_dir>/<site>/<frame_a>_<frame_b>.png"""
    return Path(pred_dir) / site / f"{frame_a}_{frame_b}.png"


def evaluate_pair(pred: BinaryMask, site: Site, pair: AnnotatedPair,
                  iou_threshold: float = DEFAULT_IOU_THRESHOLD,
                  missing_prediction: bool = False) -> PairEvaluation:
    """Pixel confusion and event matching of one prediction."""
    if (pred.width, pred.height) != (site.width, site.height):
        raise DimensionMismatchError(
            f"Prediction for {site.name}/{pair.frame_a}_{pair.frame_b} is "
            f"{pred.width}x{pred.height}, site resolution is {site.width}x{site.height}")
    gt = rasterize_polygons(pair.polygons, site.width, site.height)
    return PairEvaluation(
        confusion=pixel_confusion(pred, gt),
        outcome=event_match(pred, pair.polygons, iou_threshold),
        site=site.name,
        frame_a=pair.frame_a,
        frame_b=pair.frame_b,
        missing_prediction=missing_prediction,
    )


def _load_prediction(pred_dir, site: Site, pair: AnnotatedPair) -> Tuple[BinaryMask, bool]:
    path = prediction_path(pred_dir, site.name, pair.frame_a, pair.frame_b)
    if not path.exists():
        logger.warning("Missing prediction %s; scoring as empty mask", path)
        return BinaryMask.empty(site.width, site.height), True
    return read_mask(path), False


def evaluate_pairs(manifest: Manifest, pred_dir, split=None,
                   iou_threshold: float = DEFAULT_IOU_THRESHOLD, jobs: int = 1,
                   progress: bool = False) -> List[PairEvaluation]:
    """
    Evaluate every annotated pair of the manifest (optionally one split).

    Args:
        manifest: Dataset manifest
        pred_dir: Directory holding <site>/<frame_a>_<frame_b>.png masks
        split: Restrict to this split; None evaluates all sites
        iou_threshold: Event IoU threshold
        jobs: Worker threads
        progress: Show a progress bar

    Returns:
        PairEvaluation per annotated pair, in manifest order
    """
    wanted = Split.parse(split.value if isinstance(split, Split) else split) if split else None
    tasks = [(site, pair) for site in manifest.sites
             if wanted is None or site.split is wanted
             for pair in site.annotated_pairs]
    if not tasks:
        raise EvaluationError("No annotated pairs to evaluate")

    def run(task):
        site, pair = task
        pred, missing = _load_prediction(pred_dir, site, pair)
        return evaluate_pair(pred, site, pair, iou_threshold, missing)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(tqdm(pool.map(run, tasks), total=len(tasks),
                                desc="Evaluating", disable=not progress))
    else:
        results = [run(t) for t in tqdm(tasks, desc="Evaluating", disable=not progress)]

    n_missing = sum(1 for r in results if r.missing_prediction)
    if n_missing:
        logger.warning("%d of %d pair(s) had no prediction", n_missing, len(results))
    return results


def evaluate_dataset(manifest: Manifest, pred_dir, split=None,
                     iou_threshold: float = DEFAULT_IOU_THRESHOLD, jobs: int = 1,
                     model: str = "model", config: Optional[Dict[str, Any]] = None,
                     progress: bool = False) -> MetricsReport:
    """evaluate_pairs followed by aggregate."""
    results = evaluate_pairs(manifest, pred_dir, split, iou_threshold, jobs, progress)
    return aggregate(results, model=model, config=config)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def render_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def _percent(value: float) -> str:
    return f"{100 * value:.2f}"


def report_frame(reports: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """
    One row per (model, site) plus an overall row per model.

    Args:
        reports: MetricsReport dictionaries (as produced by MetricsReport.to_dict)
    """
    records = []
    for report in reports:
        model = report.get("model", "model")
        rows = list(report.get("sites", [])) + [report["overall"]]
        for row in rows:
            record = {"model": model, "site": row["name"]}
            for column in PERCENT_COLUMNS:
                record[column] = _percent(row[column])
            for column in ("event_tp", "event_fp", "event_fn"):
                record[column] = int(row[column])
            records.append(record)
    return pd.DataFrame.from_records(records, columns=CSV_COLUMNS)


def render_csv(reports) -> str:
    """CSV text of one MetricsReport or a list of report dictionaries."""
    if isinstance(reports, MetricsReport):
        reports = [reports.to_dict()]
    buffer = io.StringIO()
    report_frame(reports).to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def load_report(path) -> Dict[str, Any]:
    """Read a JSON report written by write_report."""
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"Report not found: {file_path}")
    try:
        data = json.loads(file_path.read_text())
    except json.JSONDecodeError as e:
        raise EvaluationError(f"{file_path} is not a JSON report: {e}") from None
    if not isinstance(data, dict) or "overall" not in data:
        raise EvaluationError(f"{file_path} is not a metrics report")
    return data


def write_report(report: MetricsReport, path, fmt: Optional[str] = None) -> str:
    """Write JSON or CSV, chosen by `fmt` or the file suffix."""
    file_path = Path(path)
    fmt = (fmt or file_path.suffix.lstrip(".") or "json").lower()
    if fmt not in ("json", "csv"):
        raise ValueError(f"Unknown report format {fmt!r}")
    file_path.parent.mkdir(parents=True, exist_ok=True)
    text = render_json(report) if fmt == "json" else render_csv(report)
    file_path.write_text(text)
    return str(file_path)


def combine_reports(paths: Sequence) -> List[Dict[str, Any]]:
    """Load several JSON reports, e.g. one per model, for a single CSV table."""
    return [load_report(p) for p in paths]
