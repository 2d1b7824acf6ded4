"""
Utility functions for the volumetric change toolkit.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Sequence

import pandas as pd

from .datamodel import FramePair, SiteSummary, ValidationReport
from .metrics import SizeBin


def write_json(data: Any, filepath) -> str:
    """Write canonical JSON (sorted keys, 2-space indent, trailing newline)."""
    file_path = Path(filepath)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    file_path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return str(file_path)


def save_csv_data(df: pd.DataFrame, filepath) -> None:
    """Save DataFrame to CSV."""
    file_path = Path(filepath)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(file_path, index=False, lineterminator="\n")


def pairs_frame(pairs: Sequence[FramePair]) -> pd.DataFrame:
    return pd.DataFrame.from_records([p.to_dict() for p in pairs],
                                     columns=["site", "frame_a", "frame_b", "gap_seconds"])


def format_run_config(name: str, config: Dict[str, Any]) -> str:
    """One line per effective setting, sorted by key."""
    lines = [f"[{name}] effective configuration:"]
    for key in sorted(config):
        lines.append(f"  {key}: {config[key]}")
    return "\n".join(lines)


def format_validation_report(report: ValidationReport, manifest_path: str = "") -> str:
    """
    Format a validation report for the terminal.

    Args:
        report: Result of datamodel.validate
        manifest_path: Shown in the header

    Returns:
        Multi-line text
    """
    lines = [f"{'=' * 80}", f"Validation Report: {manifest_path}", f"{'=' * 80}"]
    if report.ok:
        lines.append("OK: no violations")
        return "\n".join(lines)

    by_code: Dict[str, List[str]] = {}
    for violation in report.violations:
        by_code.setdefault(violation.code, []).append(str(violation))
    for code in sorted(by_code):
        lines.append(f"\n{code} ({len(by_code[code])}):")
        lines.append(f"{'-' * 80}")
        lines.extend(f"  {text}" for text in by_code[code])
    lines.append(f"\n{len(report.violations)} violation(s)")
    return "\n".join(lines)


def format_summary_table(summaries: Sequence[SiteSummary]) -> str:
    if not summaries:
        return "(no sites)"
    df = pd.DataFrame.from_records([s.to_dict() for s in summaries])
    return df.to_string(index=False)


def format_size_bins(bins: Sequence[SizeBin]) -> str:
    lines = [f"{'area (px)':>20} | {'events':>6} | {'detected':>8} | recall"]
    for b in bins:
        span = f"[{b.low:g}, {b.high:g})"
        lines.append(f"{span:>20} | {b.n_events:>6} | {b.n_detected:>8} | {100 * b.recall:.2f}")
    return "\n".join(lines)
