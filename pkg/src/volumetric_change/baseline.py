"""
Classical Change Detection Module

Training-free detectors for co-registered image pairs:
- norm-diff: absolute difference of illumination-standardized luma
- ncc: block zero-normalized cross-correlation, scored (1 - rho) / 2

Both standardize each image (zero mean, unit population std) so global gain
and offset changes between dates do not register as change.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .changemap import RuleKind, ThresholdRule, min_area_filter, threshold
from .errors import ConfigError
from .raster import BinaryMask, FloatRaster, Rect, RGBImage, require_same_shape
from .tiling import DEFAULT_OVERLAP, PatchGrid, map_patches, plan_grid, stitch_float

logger = logging.getLogger(__name__)

# Rec. 709 luma coefficients
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722], dtype=np.float64)

# Windows whose per-pixel variance falls below this are texture-less.
FLAT_VARIANCE = 1e-10


class DetectorMethod(Enum):
    NORM_DIFF = "norm-diff"
    NCC = "ncc"

    @classmethod
    def parse(cls, value: str) -> "DetectorMethod":
        normalized = str(value).lower().replace("_", "-")
        try:
            return cls(normalized)
        except ValueError:
            raise ConfigError(f"Unknown detector method: {value!r}") from None


@dataclass(frozen=True)
class DetectorConfig:
    """Detector settings; stride defaults to block // 2."""
    method: DetectorMethod = DetectorMethod.NCC
    block: int = 16
    stride: Optional[int] = None
    rule: ThresholdRule = field(default_factory=lambda: ThresholdRule(RuleKind.SIGMA, 2.0))
    min_area: int = 0

    def __post_init__(self):
        method = self.method
        if not isinstance(method, DetectorMethod):
            method = DetectorMethod.parse(method)
            object.__setattr__(self, "method", method)
        if self.block < 2:
            raise ConfigError(f"block must be >= 2, got {self.block}")
        if self.stride is None:
            object.__setattr__(self, "stride", max(self.block // 2, 1))
        if not 1 <= self.stride <= self.block:
            raise ConfigError(f"stride must satisfy 1 <= stride <= block, got {self.stride}")
        if self.min_area < 0:
            raise ConfigError(f"min_area must be >= 0, got {self.min_area}")

    def to_dict(self):
        return {
            "method": self.method.value,
            "block": self.block,
            "stride": self.stride,
            "rule": str(self.rule),
            "min_area": self.min_area,
        }


def to_grayscale_standardized(image: RGBImage) -> FloatRaster:
    """Rec. 709 luma, then zero mean and unit population std; constant images map to zeros."""
    luma = image.values.astype(np.float64) @ LUMA_WEIGHTS
    if np.ptp(luma) == 0:
        return FloatRaster(np.zeros(luma.shape, dtype=np.float32))
    mean = luma.mean()
    std = luma.std()
    return FloatRaster(((luma - mean) / std).astype(np.float32))


def norm_diff_score(a: FloatRaster, b: FloatRaster) -> FloatRaster:
    """|a - b| of two standardized rasters."""
    require_same_shape(a, b, "images")
    return FloatRaster(np.abs(a.values - b.values))


def window_origins(length: int, block: int, stride: int) -> List[int]:
    """Window origins at multiples of stride plus one clamped to length - block."""
    last = length - block
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)
    return origins


def _block_correlation_row(a: np.ndarray, b: np.ndarray, y: int, block: int,
                           xs: np.ndarray) -> np.ndarray:
    band_a = sliding_window_view(a[y:y + block], block, axis=1)[:, xs, :]
    band_b = sliding_window_view(b[y:y + block], block, axis=1)[:, xs, :]
    wa = band_a.transpose(1, 0, 2).reshape(len(xs), -1).astype(np.float64)
    wb = band_b.transpose(1, 0, 2).reshape(len(xs), -1).astype(np.float64)
    wa = wa - wa.mean(axis=1, keepdims=True)
    wb = wb - wb.mean(axis=1, keepdims=True)

    numerator = (wa * wb).sum(axis=1)
    var_a = (wa * wa).sum(axis=1)
    var_b = (wb * wb).sum(axis=1)
    flat = (var_a <= FLAT_VARIANCE * wa.shape[1]) | (var_b <= FLAT_VARIANCE * wb.shape[1])
    denominator = np.sqrt(np.where(flat, 1.0, var_a * var_b))
    rho = np.clip(numerator / denominator, -1.0, 1.0)
    return np.where(flat, 0.0, (1.0 - rho) / 2.0)


def ncc_block_scores(a: FloatRaster, b: FloatRaster, block: int, stride: int,
                     jobs: int = 1) -> Tuple[np.ndarray, List[int], List[int]]:
    """
    Per-window (1 - rho) / 2 on the window grid; zero-variance windows score 0.

    Returns:
        (scores of shape (len(ys), len(xs)), xs, ys)
    """
    require_same_shape(a, b, "images")
    if block > min(a.width, a.height):
        raise ConfigError(f"block {block} exceeds image size {a.width}x{a.height}")
    if not 1 <= stride <= block:
        raise ConfigError(f"stride must satisfy 1 <= stride <= block, got {stride}")

    xs = window_origins(a.width, block, stride)
    ys = window_origins(a.height, block, stride)
    x_index = np.asarray(xs)

    def row(y):
        return _block_correlation_row(a.values, b.values, y, block, x_index)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(row, ys))
    else:
        rows = [row(y) for y in ys]
    return np.vstack(rows), xs, ys


def _center_weights(origins: Sequence[int], block: int, start: int, stop: int
                    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Neighbouring window indices and lerp weights for pixels start..stop-1."""
    centers = np.asarray(origins, dtype=np.float64) + (block - 1) / 2.0
    pos = np.arange(start, stop, dtype=np.float64)
    if len(centers) == 1:
        zeros = np.zeros(len(pos), dtype=np.intp)
        return zeros, zeros, np.zeros(len(pos))
    pos = np.clip(pos, centers[0], centers[-1])
    hi = np.clip(np.searchsorted(centers, pos, side="right"), 1, len(centers) - 1)
    lo = hi - 1
    t = (pos - centers[lo]) / (centers[hi] - centers[lo])
    return lo, hi, t


def upsample_window_scores(scores: np.ndarray, xs: Sequence[int], ys: Sequence[int], block: int,
                           width: int, height: int, rect: Optional[Rect] = None) -> FloatRaster:
    """
    Bilinear interpolation between window centres, constant beyond the outer centres.

    Each pixel depends only on its own position, so any rect of the result equals
    the same window of the full-size result.
    """
    x0, y0, x1, y1 = rect if rect is not None else (0, 0, width, height)
    xlo, xhi, tx = _center_weights(xs, block, x0, x1)
    ylo, yhi, ty = _center_weights(ys, block, y0, y1)
    s = scores.astype(np.float64)
    top = s[ylo][:, xlo] + (s[ylo][:, xhi] - s[ylo][:, xlo]) * tx
    bottom = s[yhi][:, xlo] + (s[yhi][:, xhi] - s[yhi][:, xlo]) * tx
    values = top + (bottom - top) * ty[:, None]
    return FloatRaster(np.clip(values, s.min(), s.max()).astype(np.float32))


def ncc_score(a: FloatRaster, b: FloatRaster, block: int, stride: int,
              grid: Optional[PatchGrid] = None, jobs: int = 1) -> FloatRaster:
    """Block NCC scores upsampled bilinearly to full resolution."""
    scores, xs, ys = ncc_block_scores(a, b, block, stride, jobs)
    if grid is None:
        return upsample_window_scores(scores, xs, ys, block, a.width, a.height)
    patches = map_patches(
        grid, lambda rect: upsample_window_scores(scores, xs, ys, block, a.width, a.height, rect),
        jobs)
    return stitch_float(grid, patches)


class ChangeDetector:
    """
    Runs a classical detector on image pairs.

    Large images are processed patch by patch over a tiling grid; threshold
    statistics are taken on the stitched full-resolution score.
    """

    def __init__(self, config: Optional[DetectorConfig] = None, patch: Optional[int] = None,
                 overlap: int = DEFAULT_OVERLAP, jobs: int = 1):
        """
        Initialize the detector.

        Args:
            config: Detector settings (defaults to NCC, block 16, sigma:2)
            patch: Patch side for tiled processing; None disables tiling
            overlap: Patch overlap in pixels
            jobs: Worker threads for per-patch and per-row work
        """
        self.config = config or DetectorConfig()
        self.patch = patch
        self.overlap = overlap
        self.jobs = max(int(jobs), 1)

    def _grid(self, width: int, height: int) -> Optional[PatchGrid]:
        if self.patch is None or (width <= self.patch and height <= self.patch):
            return None
        return plan_grid(width, height, self.patch, min(self.overlap, self.patch - 1))

    def score(self, image_a: RGBImage, image_b: RGBImage) -> FloatRaster:
        """Full-resolution change score of a pair."""
        require_same_shape(image_a, image_b, "images")
        a = to_grayscale_standardized(image_a)
        b = to_grayscale_standardized(image_b)
        grid = self._grid(a.width, a.height)

        if self.config.method is DetectorMethod.NCC:
            return ncc_score(a, b, self.config.block, self.config.stride, grid, self.jobs)

        if grid is None:
            return norm_diff_score(a, b)
        patches = map_patches(
            grid,
            lambda r: norm_diff_score(FloatRaster(a.values[r[1]:r[3], r[0]:r[2]]),
                                      FloatRaster(b.values[r[1]:r[3], r[0]:r[2]])),
            self.jobs)
        return stitch_float(grid, patches)

    def detect(self, image_a: RGBImage, image_b: RGBImage) -> BinaryMask:
        """score -> threshold -> min-area filter."""
        score = self.score(image_a, image_b)
        mask = threshold(score, self.config.rule)
        mask = min_area_filter(mask, self.config.min_area)
        logger.debug("Detected %d changed pixels", mask.count())
        return mask


def detect(image_a: RGBImage, image_b: RGBImage, config: Optional[DetectorConfig] = None,
           patch: Optional[int] = None, overlap: int = DEFAULT_OVERLAP, jobs: int = 1) -> BinaryMask:
    """Run the configured detector on one pair."""
    return ChangeDetector(config, patch=patch, overlap=overlap, jobs=jobs).detect(image_a, image_b)
