"""
Patch Tiling Module

Plans overlapping square patch grids over large rasters and stitches per-patch
outputs back to full resolution (mean for scores, logical OR for masks).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple, TypeVar

import numpy as np

from .errors import TilingError
from .raster import BinaryMask, FloatRaster, Rect

DEFAULT_PATCH = 1024
DEFAULT_OVERLAP = 64

T = TypeVar("T")


@dataclass(frozen=True)
class PatchGrid:
    """Patch rectangles (half-open x0, y0, x1, y1) in row-major order."""
    image_w: int
    image_h: int
    patch: int
    overlap: int
    rects: Tuple[Rect, ...]

    @property
    def stride(self) -> int:
        return self.patch - self.overlap

    def __len__(self) -> int:
        return len(self.rects)


def _origins(length: int, patch: int, stride: int) -> List[int]:
    if length <= patch:
        return [0]
    origins = list(range(0, length - patch, stride))
    origins.append(length - patch)
    return origins


def plan_grid(image_w: int, image_h: int, patch: int = DEFAULT_PATCH,
              overlap: int = DEFAULT_OVERLAP) -> PatchGrid:
    """
    Place patches at multiples of stride = patch - overlap, clamping the last
    row and column to the image edge so every pixel is covered.
    """
    if patch < 1:
        raise TilingError(f"patch must be >= 1, got {patch}")
    if overlap < 0 or overlap >= patch:
        raise TilingError(f"overlap must satisfy 0 <= overlap < patch, got {overlap} (patch {patch})")
    if image_w < 1 or image_h < 1:
        raise TilingError(f"Image size must be >= 1, got {image_w}x{image_h}")

    stride = patch - overlap
    rects = []
    for y in _origins(image_h, patch, stride):
        for x in _origins(image_w, patch, stride):
            rects.append((x, y, min(x + patch, image_w), min(y + patch, image_h)))
    return PatchGrid(image_w, image_h, patch, overlap, tuple(rects))


def _check_grid_size(grid: PatchGrid, width: int, height: int) -> None:
    if (width, height) != (grid.image_w, grid.image_h):
        raise TilingError(f"Raster is {width}x{height}, grid expects {grid.image_w}x{grid.image_h}")


def extract_float(raster: FloatRaster, grid: PatchGrid) -> List[FloatRaster]:
    _check_grid_size(grid, raster.width, raster.height)
    return [FloatRaster(raster.values[y0:y1, x0:x1]) for x0, y0, x1, y1 in grid.rects]


def extract_binary(mask: BinaryMask, grid: PatchGrid) -> List[BinaryMask]:
    _check_grid_size(grid, mask.width, mask.height)
    return [BinaryMask(mask.bits[y0:y1, x0:x1]) for x0, y0, x1, y1 in grid.rects]


def _check_patches(grid: PatchGrid, patches: Sequence) -> None:
    if len(patches) != len(grid.rects):
        raise TilingError(f"Got {len(patches)} patches for {len(grid.rects)} rects")
    for i, (patch, (x0, y0, x1, y1)) in enumerate(zip(patches, grid.rects)):
        if (patch.width, patch.height) != (x1 - x0, y1 - y0):
            raise TilingError(
                f"Patch {i} is {patch.width}x{patch.height}, rect is {x1 - x0}x{y1 - y0}")


def stitch_float(grid: PatchGrid, patches: Sequence[FloatRaster]) -> FloatRaster:
    """
    Each output pixel is the mean of all patch values covering it. Pixels whose
    covering values are bit-identical keep those bits (signed zeros included).
    """
    _check_patches(grid, patches)
    shape = (grid.image_h, grid.image_w)
    total = np.zeros(shape, dtype=np.float64)
    count = np.zeros(shape, dtype=np.int32)
    first = np.zeros(shape, dtype=np.float32)
    agree = np.ones(shape, dtype=bool)
    for patch, (x0, y0, x1, y1) in zip(patches, grid.rects):
        values = patch.values.astype(np.float32, copy=False)
        window = (slice(y0, y1), slice(x0, x1))
        fresh = count[window] == 0
        first[window] = np.where(fresh, values, first[window])
        agree[window] &= fresh | (values.view(np.uint32) == first[window].view(np.uint32))
        total[window] += values
        count[window] += 1
    mean = (total / count).astype(np.float32)
    return FloatRaster(np.where(agree, first, mean))


def stitch_binary(grid: PatchGrid, patches: Sequence[BinaryMask]) -> BinaryMask:
    """Logical OR over the patches covering each pixel."""
    _check_patches(grid, patches)
    bits = np.zeros((grid.image_h, grid.image_w), dtype=bool)
    for patch, (x0, y0, x1, y1) in zip(patches, grid.rects):
        bits[y0:y1, x0:x1] |= patch.bits
    return BinaryMask(bits)


def map_patches(grid: PatchGrid, fn: Callable[[Rect], T], jobs: int = 1) -> List[T]:
    """
    Apply a pure per-rect function; results come back in rect order whatever
    the completion order of the workers.
    """
    if jobs <= 1 or len(grid.rects) <= 1:
        return [fn(rect) for rect in grid.rects]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, grid.rects))
