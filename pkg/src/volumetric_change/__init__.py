"""
Volumetric Change Detection Toolkit

Dataset schema and pair sampling for time-lapse change detection, post-processing
of model score fields into change maps, classical correlation baselines,
pixel-wise and event-wise evaluation, and a synthetic time-lapse generator with
ground-truth events.
"""

__version__ = "0.1.0"
__author__ = "Change Detection Team"

from .baseline import ChangeDetector, DetectorConfig, DetectorMethod
from .changemap import ThresholdRule, derive_change_map, make_score_source
from .datamodel import Manifest, load_manifest, validate
from .metrics import aggregate, event_match, pixel_confusion
from .report import evaluate_dataset
from .synth import SynthConfig, SyntheticSequenceGenerator, generate, verify_definition

__all__ = [
    "ChangeDetector",
    "DetectorConfig",
    "DetectorMethod",
    "ThresholdRule",
    "derive_change_map",
    "make_score_source",
    "Manifest",
    "load_manifest",
    "validate",
    "aggregate",
    "event_match",
    "pixel_confusion",
    "evaluate_dataset",
    "SynthConfig",
    "SyntheticSequenceGenerator",
    "generate",
    "verify_definition",
]
