"""
Change Map Module

Turns score fields exported by external models into binary change maps:
- Matcher confidence: complementary confidence (1 - c)
- Depth maps: absolute depth difference between the two dates
- Pre-softmax activations and post-softmax probabilities: used as-is

Each score is upsampled to the target resolution, thresholded with a
ThresholdRule and cleaned of small components.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .raster import (BinaryMask, FloatRaster, label_components, require_same_shape,
                     upsample_bilinear, upsample_bilinear_region)
from .tiling import PatchGrid, map_patches, stitch_float

logger = logging.getLogger(__name__)


class RuleKind(Enum):
    """Threshold rule variants."""
    FIXED = "fixed"
    SIGMA = "sigma"


@dataclass(frozen=True)
class ThresholdRule:
    """
    Fixed(t): pixel set iff value > t.
    MeanPlusKSigma(k): pixel set iff value > mean + k * population std of the raster.
    """
    kind: RuleKind
    value: float

    def __post_init__(self):
        value = float(self.value)
        if not math.isfinite(value):
            raise ConfigError(f"Threshold rule value must be finite, got {self.value}")
        if self.kind is RuleKind.SIGMA and value < 0:
            raise ConfigError(f"sigma multiplier k must be >= 0, got {value}")
        object.__setattr__(self, "value", value)

    @classmethod
    def fixed(cls, t: float) -> "ThresholdRule":
        return cls(RuleKind.FIXED, t)

    @classmethod
    def mean_plus_k_sigma(cls, k: float) -> "ThresholdRule":
        return cls(RuleKind.SIGMA, k)

    @classmethod
    def parse(cls, text: str) -> "ThresholdRule":
        """Parse 'fixed:<t>' or 'sigma:<k>'."""
        kind, sep, number = str(text).strip().partition(":")
        if not sep:
            raise ConfigError(f"Rule must look like fixed:<t> or sigma:<k>, got {text!r}")
        try:
            return cls(RuleKind(kind.lower()), float(number))
        except ValueError:
            raise ConfigError(f"Invalid threshold rule: {text!r}") from None

    def __str__(self):
        return f"{self.kind.value}:{self.value:g}"


# ---------------------------------------------------------------------------
# Score stages
# ---------------------------------------------------------------------------

def complement_confidence(conf: FloatRaster) -> FloatRaster:
    """1 - confidence, after clamping out-of-range values to [0, 1]."""
    values = conf.values
    if values.min() < 0 or values.max() > 1:
        outside = int(np.count_nonzero((values < 0) | (values > 1)))
        logger.warning("Clamping %d confidence value(s) outside [0, 1]", outside)
        values = np.clip(values, 0, 1)
    return FloatRaster(np.float32(1) - values)


def abs_difference(a: FloatRaster, b: FloatRaster) -> FloatRaster:
    """|a - b| elementwise."""
    require_same_shape(a, b, "depth maps")
    return FloatRaster(np.abs(a.values - b.values))


def threshold_value(score: FloatRaster, rule: ThresholdRule) -> float:
    """The cut-off a rule resolves to on this raster."""
    if rule.kind is RuleKind.FIXED:
        return rule.value
    mean = float(np.mean(score.values, dtype=np.float64))
    std = float(np.std(score.values, dtype=np.float64))
    return mean + rule.value * std


def threshold(score: FloatRaster, rule: ThresholdRule) -> BinaryMask:
    """Strict comparison: pixel set iff value > threshold_value(score, rule)."""
    cut = threshold_value(score, rule)
    return BinaryMask(score.values.astype(np.float64) > cut)


def min_area_filter(mask: BinaryMask, min_area: int) -> BinaryMask:
    """Drop every 8-connected component smaller than min_area pixels."""
    if min_area < 0:
        raise ValueError(f"min_area must be >= 0, got {min_area}")
    if min_area == 0:
        return mask
    labels, components = label_components(mask)
    if not components:
        return mask
    keep = np.zeros(len(components) + 1, dtype=bool)
    for component in components:
        keep[component.label] = component.pixel_count >= min_area
    return BinaryMask(keep[labels])


# ---------------------------------------------------------------------------
# Score sources
# ---------------------------------------------------------------------------

class ScoreSource:
    """Base class for model outputs that yield a change score raster."""

    kind = "base"
    default_rule: Optional[ThresholdRule] = None

    def score(self) -> FloatRaster:
        """Compute the score raster. To be overridden by subclasses."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class MatcherConfidence(ScoreSource):
    """Coarse match confidence of a dense matcher; low confidence suggests change."""
    confidence: FloatRaster

    kind = "confidence"
    default_rule = None  # no agreed rule; callers must choose

    def score(self) -> FloatRaster:
        return complement_confidence(self.confidence)


@dataclass(frozen=True, eq=False)
class DepthPair(ScoreSource):
    """Monocular depth estimates of both dates."""
    depth_a: FloatRaster
    depth_b: FloatRaster

    kind = "depth"
    default_rule = ThresholdRule(RuleKind.SIGMA, 2.0)

    def __post_init__(self):
        require_same_shape(self.depth_a, self.depth_b, "depth maps")

    def score(self) -> FloatRaster:
        return abs_difference(self.depth_a, self.depth_b)


@dataclass(frozen=True, eq=False)
class Activation(ScoreSource):
    """Pre-softmax change activation of a segmentation model."""
    activation: FloatRaster

    kind = "activation"
    default_rule = ThresholdRule(RuleKind.SIGMA, 2.0)

    def score(self) -> FloatRaster:
        return self.activation


@dataclass(frozen=True, eq=False)
class Probability(ScoreSource):
    """Post-softmax change probability of a segmentation model."""
    probability: FloatRaster

    kind = "probability"
    default_rule = ThresholdRule(RuleKind.FIXED, 0.5)

    def score(self) -> FloatRaster:
        return self.probability


SOURCE_KINDS: Dict[str, type] = {
    cls.kind: cls for cls in (MatcherConfidence, DepthPair, Activation, Probability)
}


def make_score_source(kind: str, rasters: Sequence[FloatRaster]) -> ScoreSource:
    """
    Build a score source from its kind name and input rasters.

    Args:
        kind: One of confidence, depth, activation, probability
        rasters: Two rasters for depth, one otherwise

    Returns:
        ScoreSource object
    """
    if kind not in SOURCE_KINDS:
        raise ConfigError(f"Unknown score kind {kind!r}; expected one of {sorted(SOURCE_KINDS)}")
    expected = 2 if kind == "depth" else 1
    if len(rasters) != expected:
        raise ConfigError(f"{kind} input needs {expected} raster(s), got {len(rasters)}")
    return SOURCE_KINDS[kind](*rasters)


def upsample_score(score: FloatRaster, target_w: int, target_h: int,
                   grid: Optional[PatchGrid] = None, jobs: int = 1) -> FloatRaster:
    """Upsample to the target size, optionally patch by patch over `grid`."""
    if grid is None:
        return upsample_bilinear(score, target_w, target_h)
    if (grid.image_w, grid.image_h) != (target_w, target_h):
        raise ConfigError("Patch grid does not match the target size")
    patches = map_patches(
        grid, lambda rect: upsample_bilinear_region(score, target_w, target_h, rect), jobs)
    return stitch_float(grid, patches)


def derive_change_map(source: ScoreSource, rule: ThresholdRule, min_area: int,
                      target_w: int, target_h: int, grid: Optional[PatchGrid] = None,
                      jobs: int = 1) -> BinaryMask:
    """
    score -> upsample to target -> threshold -> min-area filter.

    With a patch grid, upsampling runs per patch; threshold statistics are always
    taken on the stitched full-resolution score so the mask does not depend on
    the tiling.
    """
    score = upsample_score(source.score(), target_w, target_h, grid, jobs)
    return min_area_filter(threshold(score, rule), min_area)
