"""
Command-line interface for the volumetric change toolkit.

Provides CLI commands for:
- Validating and summarizing dataset manifests
- Sampling training pairs
- Running classical detectors and ingesting external model scores
- Evaluating predicted change masks and rendering reports
- Generating synthetic time-lapse sequences

Exit codes: 0 ok, 1 usage, 2 I/O, 3 validation, 4 internal.
"""

import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Optional

import click
import pandas as pd

from .baseline import ChangeDetector, DetectorConfig, DetectorMethod
from .changemap import ThresholdRule, derive_change_map, make_score_source
from .config import Settings, load_config_file, load_settings
from .datamodel import (Manifest, dataset_summary, load_manifest,
                        plan_training_mix, sample_unlabeled_pairs, validate)
from .errors import (EXIT_INTERNAL, EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, ConfigError,
                     DimensionMismatchError, EvaluationError, ManifestError, PlacementError,
                     RasterFormatError, TilingError, ValidationFailed)
from .metrics import aggregate, event_recall_by_size
from .raster import read_float, read_rgb, write_raster
from .report import combine_reports, evaluate_pairs, render_csv, report_frame, write_report
from .synth import SynthConfig, generate, save_sequence, verify_definition
from .tiling import plan_grid
from .utils import (format_run_config, format_size_bins, format_summary_table,
                    format_validation_report, pairs_frame, save_csv_data, write_json)

logger = logging.getLogger(__name__)

SPLITS = ["train", "validation", "test"]
SCORE_KINDS = ["confidence", "depth", "activation", "probability"]
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


def exit_code_for(exc: BaseException) -> int:
    """Map an exception raised by a command onto the documented exit codes."""
    if isinstance(exc, (ValidationFailed, ManifestError, DimensionMismatchError, EvaluationError)):
        return EXIT_VALIDATION
    if isinstance(exc, (OSError, RasterFormatError)):
        return EXIT_IO
    if isinstance(exc, (ConfigError, TilingError, PlacementError)):
        return EXIT_USAGE
    return EXIT_INTERNAL


class ExitCodeGroup(click.Group):
    """click.Group that reports errors as `Error: <message>` with distinct exit codes."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args=args, prog_name=prog_name, complete_var=complete_var,
                              standalone_mode=False, **extra)
            code = rv if isinstance(rv, int) else EXIT_OK
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            code = EXIT_USAGE
        except click.FileError as e:
            e.show()
            code = EXIT_IO
        except click.ClickException as e:
            e.show()
            code = EXIT_USAGE
        except Exception as e:
            code = exit_code_for(e)
            if code == EXIT_INTERNAL:
                logger.debug("Unhandled error", exc_info=True)
            click.echo(f"Error: {e}", err=True)
        if standalone_mode:
            sys.exit(code)
        return code


def _run_config(ctx: click.Context, **options) -> Dict[str, Any]:
    """Effective configuration of a command: global settings plus its own options."""
    settings: Settings = ctx.obj
    config = {"command": ctx.info_name, **settings.to_dict()}
    for key, value in options.items():
        if isinstance(value, Path):
            value = str(value.resolve())
        elif isinstance(value, ThresholdRule):
            value = str(value)
        config[key] = value
    click.echo(format_run_config(ctx.info_name, config), err=True)
    return config


def _load_valid_manifest(path: str) -> Manifest:
    manifest = load_manifest(path)
    report = validate(manifest)
    if not report.ok:
        click.echo(format_validation_report(report, path), err=True)
        raise ValidationFailed(report)
    return manifest


def _parse_rule(text: Optional[str]) -> Optional[ThresholdRule]:
    return ThresholdRule.parse(text) if text else None


@click.group(cls=ExitCodeGroup)
@click.option('--jobs', type=click.IntRange(min=1), default=None,
              help='Worker threads (default: VOLCHANGE_JOBS or 1)')
@click.option('--seed', type=int, default=None,
              help='Random seed (default: VOLCHANGE_SEED or 0)')
@click.option('--patch', type=click.IntRange(min=1), default=None,
              help='Patch side for tiled processing (default: 1024)')
@click.option('--overlap', type=click.IntRange(min=0), default=None,
              help='Patch overlap in pixels (default: 64)')
@click.option('--log-level', type=click.Choice(LOG_LEVELS, case_sensitive=False), default=None,
              help='Logging level (default: WARNING)')
@click.pass_context
def cli(ctx, jobs, seed, patch, overlap, log_level):
    """Volumetric Change Detection CLI"""
    settings = load_settings()
    overrides = {"jobs": jobs, "seed": seed, "patch": patch, "overlap": overlap,
                 "log_level": log_level.upper() if log_level else None}
    settings = replace(settings, **{k: v for k, v in overrides.items() if v is not None})
    if settings.overlap >= settings.patch:
        raise click.UsageError(f"--overlap ({settings.overlap}) must be < --patch ({settings.patch})")
    logging.basicConfig(level=settings.log_level,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    ctx.obj = settings


@cli.command(name='validate')
@click.argument('manifest_path', type=click.Path(dir_okay=False))
@click.pass_context
def validate_cmd(ctx, manifest_path: str):
    """Check a manifest against the dataset schema invariants."""
    _run_config(ctx, manifest=Path(manifest_path))
    manifest = load_manifest(manifest_path)
    report = validate(manifest)
    click.echo(format_validation_report(report, manifest_path))
    if not report.ok:
        raise ValidationFailed(report)


@cli.command()
@click.argument('manifest_path', type=click.Path(dir_okay=False))
@click.pass_context
def stats(ctx, manifest_path: str):
    """Print per-site counts and median event area."""
    _run_config(ctx, manifest=Path(manifest_path))
    manifest = load_manifest(manifest_path)
    click.echo(format_summary_table(dataset_summary(manifest)))


@cli.command(name='sample-pairs')
@click.argument('manifest_path', type=click.Path(dir_okay=False))
@click.option('--split', type=click.Choice(SPLITS), required=True, help='Split to sample from')
@click.option('--max-gap', type=click.FloatRange(min=0, min_open=True), default=None,
              help='Maximum time gap in seconds (default: one week)')
@click.option('--count', type=click.IntRange(min=0), default=None,
              help='Number of unlabeled pairs; omit to size by --labeled-fraction')
@click.option('--labeled-fraction', type=click.FloatRange(min=0, max=1, min_open=True), default=None,
              help='Share of labeled pairs in the training mix (default: 0.4)')
@click.option('--seed', 'local_seed', type=int, default=None, help='Overrides the global --seed')
@click.option('--out', type=click.Path(dir_okay=False), required=True,
              help='Output file (.csv or .json)')
@click.pass_context
def sample_pairs(ctx, manifest_path, split, max_gap, count, labeled_fraction, local_seed, out):
    """Sample unannotated frame pairs, alone or as a labeled/unlabeled training mix."""
    settings: Settings = ctx.obj
    max_gap = settings.max_gap if max_gap is None else max_gap
    labeled_fraction = settings.labeled_fraction if labeled_fraction is None else labeled_fraction
    seed = settings.seed if local_seed is None else local_seed
    _run_config(ctx, manifest=Path(manifest_path), split=split, max_gap=max_gap, count=count,
                labeled_fraction=labeled_fraction, sample_seed=seed, out=Path(out))

    manifest = _load_valid_manifest(manifest_path)
    if count is None:
        labeled, unlabeled = plan_training_mix(manifest, split, labeled_fraction, max_gap, seed)
        labeled = [pair for pair, _ in labeled]
    else:
        labeled = []
        unlabeled = sample_unlabeled_pairs(manifest, split, max_gap, count, seed)

    if out.lower().endswith(".json"):
        write_json({"labeled": [p.to_dict() for p in labeled],
                    "unlabeled": [p.to_dict() for p in unlabeled]}, out)
    else:
        df_labeled = pairs_frame(labeled)
        df_labeled.insert(0, "kind", "labeled")
        df_unlabeled = pairs_frame(unlabeled)
        df_unlabeled.insert(0, "kind", "unlabeled")
        frames = [df for df in (df_labeled, df_unlabeled) if not df.empty] or [df_labeled]
        df = pd.concat(frames, ignore_index=True)
        save_csv_data(df, out)
    click.echo(f"Wrote {len(labeled)} labeled and {len(unlabeled)} unlabeled pair(s) to {out}")


@cli.command()
@click.argument('image_a', required=False, type=click.Path(dir_okay=False))
@click.argument('image_b', required=False, type=click.Path(dir_okay=False))
@click.option('--method', type=click.Choice([m.value for m in DetectorMethod]), default='ncc',
              help='Detector')
@click.option('--block', type=int, default=16, help='NCC window side')
@click.option('--stride', type=int, default=None, help='NCC window stride (default: block/2)')
@click.option('--rule', default='sigma:2', help='Threshold rule fixed:<t> or sigma:<k>')
@click.option('--min-area', type=click.IntRange(min=0), default=0,
              help='Drop changed components smaller than this many pixels')
@click.option('--out', type=click.Path(dir_okay=False), help='Output mask PNG (single pair)')
@click.option('--score-out', type=click.Path(dir_okay=False), help='Also write the score as FR32')
@click.option('--manifest', 'manifest_path', type=click.Path(dir_okay=False),
              help='Batch mode: detect on every annotated pair of this manifest')
@click.option('--split', type=click.Choice(SPLITS), default=None, help='Batch mode: restrict to a split')
@click.option('--out-dir', type=click.Path(file_okay=False),
              help='Batch mode: writes <site>/<frame_a>_<frame_b>.png')
@click.pass_context
def detect(ctx, image_a, image_b, method, block, stride, rule, min_area, out, score_out,
           manifest_path, split, out_dir):
    """Run a classical change detector on one image pair or on a whole manifest."""
    settings: Settings = ctx.obj
    config = DetectorConfig(method=DetectorMethod.parse(method), block=block, stride=stride,
                            rule=ThresholdRule.parse(rule), min_area=min_area)
    detector = ChangeDetector(config, patch=settings.patch, overlap=settings.overlap,
                              jobs=settings.jobs)

    if manifest_path:
        if image_a or image_b or out:
            raise click.UsageError("Batch mode (--manifest) takes no IMAGE arguments or --out")
        if not out_dir:
            raise click.UsageError("Batch mode needs --out-dir")
        _run_config(ctx, **config.to_dict(), manifest=Path(manifest_path), split=split,
                    out_dir=Path(out_dir))
        manifest = _load_valid_manifest(manifest_path)
        count = 0
        for site in manifest.sites:
            if split and site.split.value != split:
                continue
            for pair in site.annotated_pairs:
                a = read_rgb(manifest.resolve(site.frame(pair.frame_a).image_path))
                b = read_rgb(manifest.resolve(site.frame(pair.frame_b).image_path))
                mask = detector.detect(a, b)
                write_raster(mask, Path(out_dir) / site.name / f"{pair.frame_a}_{pair.frame_b}.png")
                count += 1
        click.echo(f"Wrote {count} mask(s) to {out_dir}")
        return

    if not (image_a and image_b and out):
        raise click.UsageError("detect needs IMAGE_A IMAGE_B --out (or --manifest --out-dir)")
    _run_config(ctx, **config.to_dict(), image_a=Path(image_a), image_b=Path(image_b),
                out=Path(out))
    a = read_rgb(image_a)
    b = read_rgb(image_b)
    if score_out:
        score = detector.score(a, b)
        write_raster(score, score_out)
    mask = detector.detect(a, b)
    write_raster(mask, out)
    click.echo(f"Wrote mask with {mask.count()} changed pixel(s) to {out}")


@cli.command()
@click.argument('inputs', nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option('--kind', type=click.Choice(SCORE_KINDS), required=True, help='Score field type')
@click.option('--rule', default=None,
              help='fixed:<t> or sigma:<k> (required for confidence; '
                   'default sigma:2 for depth/activation, fixed:0.5 for probability)')
@click.option('--min-area', type=click.IntRange(min=0), default=0,
              help='Drop changed components smaller than this many pixels')
@click.option('--width', type=click.IntRange(min=1), default=None, help='Target width')
@click.option('--height', type=click.IntRange(min=1), default=None, help='Target height')
@click.option('--out', type=click.Path(dir_okay=False), required=True, help='Output mask PNG')
@click.pass_context
def ingest(ctx, inputs, kind, rule, min_area, width, height, out):
    """Turn an exported model score field (FR32) into a change mask."""
    settings: Settings = ctx.obj
    rasters = [read_float(path) for path in inputs]
    source = make_score_source(kind, rasters)
    threshold_rule = _parse_rule(rule) or source.default_rule
    if threshold_rule is None:
        raise click.UsageError(f"--rule is required for {kind} input")
    target_w = width or rasters[0].width
    target_h = height or rasters[0].height
    _run_config(ctx, kind=kind, inputs=[str(Path(p).resolve()) for p in inputs],
                rule=threshold_rule, min_area=min_area, width=target_w, height=target_h,
                out=Path(out))

    grid = None
    if target_w > settings.patch or target_h > settings.patch:
        grid = plan_grid(target_w, target_h, settings.patch, settings.overlap)
    mask = derive_change_map(source, threshold_rule, min_area, target_w, target_h,
                             grid=grid, jobs=settings.jobs)
    write_raster(mask, out)
    click.echo(f"Wrote mask with {mask.count()} changed pixel(s) to {out}")


@cli.command()
@click.argument('manifest_path', type=click.Path(dir_okay=False))
@click.argument('pred_dir', type=click.Path(file_okay=False))
@click.option('--split', type=click.Choice(SPLITS), default=None, help='Restrict to a split')
@click.option('--iou-threshold', type=click.FloatRange(min=0, max=1, max_open=True), default=None,
              help='Event IoU threshold (default: 0.25)')
@click.option('--model', default='model', help='Model name for report rows')
@click.option('--out', type=click.Path(dir_okay=False), required=True,
              help='Report file (.json or .csv)')
@click.option('--csv-out', type=click.Path(dir_okay=False), default=None,
              help='Also write the CSV table here')
@click.option('--size-bins', default=None,
              help='Comma-separated GT area bin edges, e.g. 0,100,400,1600')
@click.pass_context
def evaluate(ctx, manifest_path, pred_dir, split, iou_threshold, model, out, csv_out, size_bins):
    """Score predicted masks against the annotated pairs of a manifest."""
    settings: Settings = ctx.obj
    iou_threshold = settings.iou_threshold if iou_threshold is None else iou_threshold
    edges = None
    if size_bins:
        try:
            edges = [float(v) for v in size_bins.split(",") if v.strip()]
        except ValueError:
            raise click.BadParameter(f"not a list of numbers: {size_bins}", param_hint="--size-bins")
    config = _run_config(ctx, manifest=Path(manifest_path), pred_dir=Path(pred_dir), split=split,
                         iou_threshold=iou_threshold, model=model)

    manifest = _load_valid_manifest(manifest_path)
    pair_results = evaluate_pairs(manifest, pred_dir, split=split, iou_threshold=iou_threshold,
                                  jobs=settings.jobs, progress=settings.log_level == "INFO")
    metrics_report = aggregate(pair_results, model=model, config=config)
    write_report(metrics_report, out)
    if csv_out:
        write_report(metrics_report, csv_out, fmt="csv")
    overall = metrics_report.overall
    click.echo(f"Overall: F1 {100 * overall.pixel.f1:.2f}  IoU {100 * overall.pixel.iou:.2f}  "
               f"event P {100 * overall.events.precision:.2f}  R {100 * overall.events.recall:.2f}  "
               f"({overall.n_pairs} pair(s), {overall.n_missing} missing)")
    if edges:
        click.echo(format_size_bins(event_recall_by_size(pair_results, edges)))


@cli.command()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), required=True,
              help='Synthetic generation settings (YAML or JSON)')
@click.option('--out', type=click.Path(file_okay=False), required=True, help='Output directory')
@click.option('--seed', 'local_seed', type=int, default=None,
              help='Overrides the seed in the config file')
@click.pass_context
def synth(ctx, config_path, out, local_seed):
    """Generate a synthetic time-lapse sequence with ground-truth events."""
    settings: Settings = ctx.obj
    data = load_config_file(config_path)
    if local_seed is not None:
        data["seed"] = local_seed
    data.setdefault("seed", settings.seed)
    config = SynthConfig.from_dict(data)
    _run_config(ctx, **{f"synth.{k}": v for k, v in config.to_dict().items()}, out=Path(out))

    sequence = generate(config)
    ok, violations = verify_definition(sequence.depth, sequence.events, config.epsilon, config.tau)
    if not ok:
        raise RuntimeError(f"Generated sequence violates the change definition: {violations[0]}")
    manifest_path = save_sequence(sequence, out)
    click.echo(f"Wrote {config.n_frames} frame(s) and {len(sequence.events)} event(s); "
               f"manifest at {manifest_path}")


@cli.command()
@click.argument('reports', nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option('--out', type=click.Path(dir_okay=False), default=None,
              help='CSV output file (default: standard output)')
@click.pass_context
def report(ctx, reports, out):
    """Render one or more JSON evaluation reports as a CSV table."""
    _run_config(ctx, reports=[str(Path(p).resolve()) for p in reports],
                out=Path(out) if out else None)
    loaded = combine_reports(reports)
    text = render_csv(loaded)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
        click.echo(f"Wrote {len(report_frame(loaded))} row(s) to {out}")
    else:
        click.echo(text, nl=False)


def main():
    cli()


if __name__ == '__main__':
    main()
