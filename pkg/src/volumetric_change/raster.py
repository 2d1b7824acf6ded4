"""
Raster Primitives Module

Binary change masks, float score rasters and RGB images, plus polygon
rasterization, 8-connected component labeling, corner-aligned bilinear
upsampling and bit-exact raster file I/O (FR32 floats, 8-bit PNG masks).
"""

import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from .datamodel import PolygonAnnotation
from .errors import DimensionMismatchError, RasterFormatError

logger = logging.getLogger(__name__)

FR32_MAGIC = b"FR32"
PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
MAX_PIXELS = 1 << 30
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)

Rect = Tuple[int, int, int, int]


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Row-major boolean change map of shape (height, width)."""
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool, copy=True)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"BinaryMask needs a non-empty 2D array, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits))

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FloatRaster:
    """Row-major float32 score field of shape (height, width); NaN is rejected."""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32, copy=True)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"FloatRaster needs a non-empty 2D array, got shape {values.shape}")
        if np.isnan(values).any():
            raise ValueError("FloatRaster values must not contain NaN")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def constant(cls, width: int, height: int, value: float) -> "FloatRaster":
        return cls(np.full((height, width), value, dtype=np.float32))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        # Bit-exact comparison (distinguishes -0.0 from 0.0).
        if not isinstance(other, FloatRaster):
            return NotImplemented
        return (self.values.shape == other.values.shape
                and bool(np.array_equal(self.values.view(np.uint32), other.values.view(np.uint32))))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RGBImage:
    """Colour image as float32 (height, width, 3), nominal range [0, 255]."""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32, copy=True)
        if values.ndim != 3 or values.shape[2] != 3 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"RGBImage needs an (H, W, 3) array, got shape {values.shape}")
        if np.isnan(values).any():
            raise ValueError("RGBImage values must not contain NaN")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, RGBImage):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(np.array_equal(self.values, other.values))

    __hash__ = None


def require_same_shape(a, b, what: str = "rasters") -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatchError(
            f"{what} differ in size: {a.width}x{a.height} vs {b.width}x{b.height}")


# ---------------------------------------------------------------------------
# Polygon rasterization
# ---------------------------------------------------------------------------

def polygon_window(polygon: PolygonAnnotation, width: int, height: int
                   ) -> Optional[Tuple[int, int, np.ndarray]]:
    """
    Rasterize into the clipped bounding window of the polygon.

    Returns:
        (x0, y0, local mask) or None when the window is empty
    """
    min_x, min_y, max_x, max_y = polygon.bounds()
    x0 = max(int(np.floor(min_x)) - 1, 0)
    y0 = max(int(np.floor(min_y)) - 1, 0)
    x1 = min(int(np.ceil(max_x)) + 1, width)
    y1 = min(int(np.ceil(max_y)) + 1, height)
    if x0 >= x1 or y0 >= y1:
        return None

    centers_x = np.arange(x0, x1, dtype=np.float64) + 0.5
    local = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    edges = list(polygon.edges())
    for row in range(y0, y1):
        yc = row + 0.5
        crossings = np.zeros(x1 - x0, dtype=np.int32)
        for (px, py), (qx, qy) in edges:
            if (py > yc) != (qy > yc):
                x_cross = px + (yc - py) * (qx - px) / (qy - py)
                crossings += centers_x < x_cross
        local[row - y0] = (crossings & 1).astype(bool)
    return x0, y0, local


def rasterize_polygon(polygon: PolygonAnnotation, width: int, height: int) -> BinaryMask:
    """
    Rasterize a polygon with the pixel-centre even-odd rule.

    Pixel (x, y) is set iff (x + 0.5, y + 0.5) lies inside the polygon; the part
    of the polygon outside the raster is clipped. Degenerate polygons are logged
    and yield an empty mask.
    """
    bits = np.zeros((height, width), dtype=bool)
    window = polygon_window(polygon, width, height)
    if window is not None:
        x0, y0, local = window
        bits[y0:y0 + local.shape[0], x0:x0 + local.shape[1]] = local
    if window is not None and not bits.any():
        logger.warning("Polygon has zero rasterized area: %s", polygon.vertices)
    return BinaryMask(bits)


def rasterize_polygons(polygons, width: int, height: int) -> BinaryMask:
    """Union of the rasterized polygons (the ground-truth change mask)."""
    bits = np.zeros((height, width), dtype=bool)
    for polygon in polygons:
        window = polygon_window(polygon, width, height)
        if window is not None:
            x0, y0, local = window
            bits[y0:y0 + local.shape[0], x0:x0 + local.shape[1]] |= local
    return BinaryMask(bits)


# ---------------------------------------------------------------------------
# Connected components
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Component:
    """One 8-connected region of a mask; bounding_box is half-open (x0, y0, x1, y1)."""
    label: int
    pixel_count: int
    bounding_box: Rect
    local_mask: np.ndarray  # bool, shape (y1 - y0, x1 - x0)

    def pixels(self) -> List[Tuple[int, int]]:
        """(x, y) coordinates of every pixel of the component."""
        x0, y0 = self.bounding_box[0], self.bounding_box[1]
        ys, xs = np.nonzero(self.local_mask)
        return [(int(x) + x0, int(y) + y0) for y, x in zip(ys, xs)]


def label_components(mask: BinaryMask) -> Tuple[np.ndarray, List[Component]]:
    """
    Label 8-connected components.

    Returns:
        (label image with 0 = background and labels 1..n in component order,
         list of Component sorted by (y0, x0) of the bounding box)
    """
    raw, n = ndimage.label(mask.bits, structure=EIGHT_CONNECTED)
    if n == 0:
        return raw, []

    slices = ndimage.find_objects(raw)
    order = sorted(range(1, n + 1),
                   key=lambda lab: (slices[lab - 1][0].start, slices[lab - 1][1].start, lab))
    lut = np.zeros(n + 1, dtype=raw.dtype)
    for new_label, old_label in enumerate(order, start=1):
        lut[old_label] = new_label
    labels = lut[raw]
    counts = np.bincount(labels.ravel(), minlength=n + 1)

    components = []
    for new_label, old_label in enumerate(order, start=1):
        rows, cols = slices[old_label - 1]
        components.append(Component(
            label=new_label,
            pixel_count=int(counts[new_label]),
            bounding_box=(cols.start, rows.start, cols.stop, rows.stop),
            local_mask=_frozen(labels[rows, cols] == new_label),
        ))
    return labels, components


def connected_components(mask: BinaryMask) -> List[Component]:
    """8-connected components ordered by bounding box (y0, x0)."""
    return label_components(mask)[1]


# ---------------------------------------------------------------------------
# Bilinear upsampling
# ---------------------------------------------------------------------------

def _axis_samples(n_in: int, n_out: int, start: int, stop: int
                  ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corner-aligned source indices and weights for output positions [start, stop)."""
    out = np.arange(start, stop, dtype=np.float64)
    if n_in == 1 or n_out == 1:
        position = np.zeros_like(out)
    else:
        position = out * (n_in - 1) / (n_out - 1)
    lower = np.floor(position).astype(np.int64)
    lower = np.clip(lower, 0, max(n_in - 2, 0))
    upper = np.minimum(lower + 1, n_in - 1)
    frac = position - lower
    return lower, upper, frac


def upsample_bilinear_region(raster: FloatRaster, out_w: int, out_h: int,
                             rect: Rect) -> FloatRaster:
    """
    The window `rect` = (x0, y0, x1, y1) of upsample_bilinear(raster, out_w, out_h),
    computed without materializing the full output.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"Output size must be >= 1, got {out_w}x{out_h}")
    x0, y0, x1, y1 = rect
    src = raster.values.astype(np.float64)
    xl, xu, fx = _axis_samples(raster.width, out_w, x0, x1)
    yl, yu, fy = _axis_samples(raster.height, out_h, y0, y1)

    top = src[yl]
    bottom = src[yu]
    rows = top + (bottom - top) * fy[:, None]
    left = rows[:, xl]
    right = rows[:, xu]
    result = left + (right - left) * fx[None, :]

    lo, hi = float(raster.values.min()), float(raster.values.max())
    return FloatRaster(np.clip(result, lo, hi).astype(np.float32))


def upsample_bilinear(raster: FloatRaster, out_w: int, out_h: int) -> FloatRaster:
    """
    Bilinear interpolation with corner-aligned sampling.

    Output pixel i maps to source coordinate i * (n_in - 1) / (n_out - 1);
    resizing to the same size returns the input unchanged.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"Output size must be >= 1, got {out_w}x{out_h}")
    if (out_w, out_h) == (raster.width, raster.height):
        return raster
    return upsample_bilinear_region(raster, out_w, out_h, (0, 0, out_w, out_h))


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def encode_raster(raster: Union[FloatRaster, BinaryMask]) -> bytes:
    """FloatRaster -> FR32 bytes; BinaryMask -> 8-bit grayscale PNG (0 / 255)."""
    if isinstance(raster, FloatRaster):
        header = FR32_MAGIC + struct.pack("<II", raster.width, raster.height)
        return header + raster.values.astype("<f4").tobytes(order="C")
    if isinstance(raster, BinaryMask):
        buffer = io.BytesIO()
        image = Image.fromarray(raster.bits.astype(np.uint8) * 255)
        image.save(buffer, format="PNG")
        return buffer.getvalue()
    raise TypeError(f"Cannot encode {type(raster).__name__}")


def _decode_fr32(data: bytes) -> FloatRaster:
    if len(data) < 12:
        raise RasterFormatError("Truncated FR32 header")
    width, height = struct.unpack("<II", data[4:12])
    if width < 1 or height < 1:
        raise RasterFormatError(f"Invalid FR32 dimensions {width}x{height}")
    if width * height > MAX_PIXELS:
        raise RasterFormatError(f"FR32 dimensions overflow: {width}x{height}")
    expected = 12 + 4 * width * height
    if len(data) != expected:
        raise RasterFormatError(
            f"Truncated FR32 payload: header declares {width}x{height} "
            f"({expected} bytes) but file has {len(data)} bytes")
    values = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width)
    if not np.isfinite(values).all():
        raise RasterFormatError("FR32 values must be finite")
    try:
        return FloatRaster(values.astype(np.float32))
    except ValueError as exc:
        raise RasterFormatError(str(exc)) from None


def _decode_png_mask(data: bytes) -> BinaryMask:
    try:
        with Image.open(io.BytesIO(data)) as image:
            if image.width * image.height > MAX_PIXELS:
                raise RasterFormatError(f"PNG dimensions overflow: {image.width}x{image.height}")
            gray = np.asarray(image.convert("L"))
    except (OSError, SyntaxError) as exc:
        raise RasterFormatError(f"Unreadable PNG mask: {exc}") from None
    return BinaryMask(gray >= 128)


def decode_raster(data: bytes) -> Union[FloatRaster, BinaryMask]:
    """Decode FR32 (float raster) or PNG (binary mask, values >= 128 set) bytes."""
    if data[:4] == FR32_MAGIC:
        return _decode_fr32(data)
    if data[:8] == PNG_MAGIC:
        return _decode_png_mask(data)
    raise RasterFormatError("Bad magic: neither FR32 nor PNG")


def read_raster(path) -> Union[FloatRaster, BinaryMask]:
    return decode_raster(Path(path).read_bytes())


def write_raster(raster: Union[FloatRaster, BinaryMask], path) -> str:
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    file_path.write_bytes(encode_raster(raster))
    return str(file_path)


def read_float(path) -> FloatRaster:
    raster = read_raster(path)
    if not isinstance(raster, FloatRaster):
        raise RasterFormatError(f"{path}: expected an FR32 float raster")
    return raster


def read_mask(path) -> BinaryMask:
    raster = read_raster(path)
    if not isinstance(raster, BinaryMask):
        raise RasterFormatError(f"{path}: expected a PNG mask")
    return raster


def read_rgb(path) -> RGBImage:
    """Load any Pillow-readable image as RGB."""
    try:
        with Image.open(path) as image:
            array = np.asarray(image.convert("RGB"), dtype=np.float32)
    except (SyntaxError, Image.DecompressionBombError) as exc:
        raise RasterFormatError(f"Unreadable image {path}: {exc}") from None
    return RGBImage(array)


def write_rgb(image: RGBImage, path) -> str:
    """Save as 8-bit RGB PNG (values rounded and clamped to [0, 255])."""
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.clip(np.rint(image.values), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(file_path, format="PNG")
    return str(file_path)
