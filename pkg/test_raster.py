#!/usr/bin/env python3
"""
Tests for raster types, polygon rasterization, components, upsampling and codecs.
"""

import struct
import sys
from collections import deque
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / 'src'))

from volumetric_change.datamodel import PolygonAnnotation
from volumetric_change.errors import DimensionMismatchError, RasterFormatError
from volumetric_change.raster import (BinaryMask, FloatRaster, RGBImage, connected_components,
                                      decode_raster, encode_raster, label_components,
                                      rasterize_polygon, rasterize_polygons, read_float,
                                      read_mask, read_rgb, require_same_shape, upsample_bilinear,
                                      upsample_bilinear_region, write_raster, write_rgb)


def _polygon(*vertices):
    return PolygonAnnotation(tuple((float(x), float(y)) for x, y in vertices))


def _point_in_polygon(x, y, vertices):
    inside = False
    n = len(vertices)
    for i in range(n):
        px, py = vertices[i]
        qx, qy = vertices[(i + 1) % n]
        if (py > y) != (qy > y) and x < px + (y - py) * (qx - px) / (qy - py):
            inside = not inside
    return inside


def _reference_count(vertices, width, height):
    return sum(_point_in_polygon(x + 0.5, y + 0.5, vertices)
               for y in range(height) for x in range(width))


def _flood_fill_labels(bits):
    height, width = bits.shape
    labels = np.zeros(bits.shape, dtype=np.int64)
    current = 0
    for y in range(height):
        for x in range(width):
            if not bits[y, x] or labels[y, x]:
                continue
            current += 1
            labels[y, x] = current
            queue = deque([(y, x)])
            while queue:
                cy, cx = queue.popleft()
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < height and 0 <= nx < width and bits[ny, nx] and not labels[ny, nx]:
                            labels[ny, nx] = current
                            queue.append((ny, nx))
    return labels, current


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

def test_float_raster_rejects_nan():
    with pytest.raises(ValueError):
        FloatRaster(np.array([[0.0, np.nan]]))


def test_float_raster_equality_is_bit_exact():
    assert FloatRaster(np.array([[0.0]])) != FloatRaster(np.array([[-0.0]]))
    assert FloatRaster.constant(3, 2, 0.25) == FloatRaster(np.full((2, 3), 0.25))


def test_rasters_are_read_only():
    mask = BinaryMask.empty(4, 3)
    with pytest.raises(ValueError):
        mask.bits[0, 0] = True
    assert (mask.width, mask.height, mask.count()) == (4, 3, 0)


def test_require_same_shape():
    with pytest.raises(DimensionMismatchError):
        require_same_shape(BinaryMask.empty(4, 3), BinaryMask.empty(3, 4))


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def test_square_rasterizes_to_its_area():
    mask = rasterize_polygon(_polygon((0, 0), (4, 0), (4, 4), (0, 4)), 8, 8)
    assert mask.count() == 16
    assert mask.bits[:4, :4].all()


def test_triangle_matches_point_in_polygon_reference():
    vertices = [(0, 0), (8, 0), (0, 8)]
    mask = rasterize_polygon(_polygon(*vertices), 8, 8)
    assert mask.count() == _reference_count(vertices, 8, 8)


def test_random_polygons_match_reference():
    rng = np.random.default_rng(11)
    for _ in range(30):
        n = int(rng.integers(3, 9))
        angles = np.sort(rng.uniform(0, 2 * np.pi, n))
        radii = rng.uniform(3, 12, n)
        vertices = [(round(16 + r * np.cos(a), 2), round(14 + r * np.sin(a), 2))
                    for a, r in zip(angles, radii)]
        mask = rasterize_polygon(_polygon(*vertices), 30, 28)
        expected = np.array([[_point_in_polygon(x + 0.5, y + 0.5, vertices) for x in range(30)]
                             for y in range(28)])
        assert np.array_equal(mask.bits, expected)


def test_polygon_outside_raster_is_empty():
    mask = rasterize_polygon(_polygon((20, 20), (30, 20), (30, 30)), 8, 8)
    assert mask.count() == 0


def test_polygon_is_clipped_to_raster():
    mask = rasterize_polygon(_polygon((-4, -4), (4, -4), (4, 4), (-4, 4)), 8, 8)
    assert mask.count() == 16


def test_rasterize_polygons_is_union():
    a = _polygon((0, 0), (4, 0), (4, 4), (0, 4))
    b = _polygon((2, 2), (6, 2), (6, 6), (2, 6))
    union = rasterize_polygons([a, b], 8, 8)
    assert union.count() == 16 + 16 - 4
    assert rasterize_polygons([], 8, 8) == BinaryMask.empty(8, 8)


# ---------------------------------------------------------------------------
# Connected components
# ---------------------------------------------------------------------------

def test_empty_mask_has_no_components():
    assert connected_components(BinaryMask.empty(5, 5)) == []


def test_diagonal_pixels_are_one_component():
    bits = np.zeros((4, 4), dtype=bool)
    bits[1, 1] = bits[2, 2] = True
    components = connected_components(BinaryMask(bits))
    assert len(components) == 1
    assert components[0].pixel_count == 2
    assert components[0].bounding_box == (1, 1, 3, 3)


def test_component_order_and_pixels():
    bits = np.zeros((6, 6), dtype=bool)
    bits[4, 0] = True
    bits[0, 5] = True
    bits[0, 1:3] = True
    components = connected_components(BinaryMask(bits))
    assert [c.bounding_box for c in components] == [(1, 0, 3, 1), (5, 0, 6, 1), (0, 4, 1, 5)]
    assert sorted(components[0].pixels()) == [(1, 0), (2, 0)]


def test_labeling_matches_flood_fill():
    rng = np.random.default_rng(5)
    bits = rng.random((64, 64)) < 0.35
    labels, components = label_components(BinaryMask(bits))
    reference, n = _flood_fill_labels(bits)
    assert len(components) == n
    # same partition: the label pairs form a bijection
    pairs = set(zip(labels[bits].tolist(), reference[bits].tolist()))
    assert len(pairs) == n
    assert len({a for a, _ in pairs}) == n
    assert sum(c.pixel_count for c in components) == int(bits.sum())


# ---------------------------------------------------------------------------
# Upsampling
# ---------------------------------------------------------------------------

def test_constant_raster_stays_constant():
    raster = FloatRaster.constant(3, 5, 0.7)
    up = upsample_bilinear(raster, 11, 7)
    assert np.all(up.values == np.float32(0.7))


def test_single_pixel_upsamples_to_constant():
    up = upsample_bilinear(FloatRaster(np.array([[2.5]])), 5, 5)
    assert np.all(up.values == 2.5)


def test_checkerboard_center_is_half():
    raster = FloatRaster(np.array([[0.0, 1.0], [1.0, 0.0]]))
    up = upsample_bilinear(raster, 3, 3)
    assert up.values[1, 1] == pytest.approx(0.5)
    assert up.values[0, 1] == pytest.approx(0.5)
    assert up.values[0, 0] == 0.0 and up.values[0, 2] == 1.0


def test_upsample_matches_closed_form():
    rng = np.random.default_rng(2)
    src = rng.random((4, 5))
    up = upsample_bilinear(FloatRaster(src), 13, 9).values
    src = src.astype(np.float32).astype(np.float64)
    for y in range(9):
        for x in range(13):
            sx, sy = x * 4 / 12, y * 3 / 8
            x0, y0 = min(int(sx), 3), min(int(sy), 2)
            fx, fy = sx - x0, sy - y0
            expected = ((1 - fx) * (1 - fy) * src[y0, x0] + fx * (1 - fy) * src[y0, x0 + 1]
                        + (1 - fx) * fy * src[y0 + 1, x0] + fx * fy * src[y0 + 1, x0 + 1])
            assert up[y, x] == pytest.approx(expected, abs=1e-6)


def test_same_size_is_identity():
    raster = FloatRaster(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert upsample_bilinear(raster, 3, 2) == raster


def test_region_equals_window_of_full_result():
    rng = np.random.default_rng(9)
    raster = FloatRaster(rng.random((7, 6)))
    full = upsample_bilinear(raster, 40, 33)
    region = upsample_bilinear_region(raster, 40, 33, (5, 11, 29, 30))
    assert region == FloatRaster(full.values[11:30, 5:29])


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def test_fr32_round_trip_is_bit_exact():
    raster = FloatRaster(np.array([[0.1, -2.5, 3e-8], [1e6, -0.0, 7.0]]))
    data = encode_raster(raster)
    assert data[:4] == b"FR32"
    assert struct.unpack("<II", data[4:12]) == (3, 2)
    assert decode_raster(data) == raster


def test_mask_encodes_as_grayscale_png():
    bits = np.zeros((3, 4), dtype=bool)
    bits[1, 2] = True
    mask = BinaryMask(bits)
    data = encode_raster(mask)
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    assert decode_raster(data) == mask


def test_truncated_fr32_rejected():
    data = encode_raster(FloatRaster.constant(3, 2, 1.0))
    with pytest.raises(RasterFormatError):
        decode_raster(data[:-4])
    with pytest.raises(RasterFormatError):
        decode_raster(data[:8])


@pytest.mark.parametrize("bad", [np.inf, -np.inf, np.nan])
def test_non_finite_fr32_rejected(bad):
    payload = np.array([[1.0, bad], [0.5, 2.0]], dtype="<f4")
    data = b"FR32" + struct.pack("<II", 2, 2) + payload.tobytes()
    with pytest.raises(RasterFormatError):
        decode_raster(data)


def test_bad_magic_rejected():
    with pytest.raises(RasterFormatError):
        decode_raster(b"GIF89a" + bytes(20))


def test_file_helpers(tmp_path):
    raster = FloatRaster.constant(2, 2, 0.5)
    mask = BinaryMask(np.eye(3, dtype=bool))
    write_raster(raster, tmp_path / "nested" / "score.fr32")
    write_raster(mask, tmp_path / "mask.png")
    assert read_float(tmp_path / "nested" / "score.fr32") == raster
    assert read_mask(tmp_path / "mask.png") == mask
    with pytest.raises(RasterFormatError):
        read_mask(tmp_path / "nested" / "score.fr32")
    with pytest.raises(RasterFormatError):
        read_float(tmp_path / "mask.png")


def test_rgb_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    image = RGBImage(rng.integers(0, 256, (5, 7, 3)).astype(np.float32))
    write_rgb(image, tmp_path / "frame.png")
    assert read_rgb(tmp_path / "frame.png") == image
