"""
Synthetic Time-Lapse Module

Generates seeded time-lapse sequences with known volumetric change events:
- A smooth, strictly positive depth field with a textured albedo
- Events: simple polygon regions whose depth drops permanently at an onset
  frame, with an albedo patch copied in from elsewhere in the scene
- Lambertian rendering with global lighting drift and Gaussian pixel noise

verify_definition checks a depth stack against the change condition: a pixel
changes at i when at least two later frames j < k with k - i < tau both differ
from z_i by more than epsilon.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import binary_dilation, gaussian_filter

from .datamodel import (AnnotatedPair, Frame, Manifest, PolygonAnnotation, Site, Split,
                        save_manifest)
from .errors import ConfigError, PlacementError
from .raster import FloatRaster, RGBImage, rasterize_polygon, write_raster, write_rgb

logger = logging.getLogger(__name__)

# Fixed scene constants
BASE_DEPTH_AMPLITUDE = 5.0
MEAN_GAIN = 0.9
TEXTURE_SIGMA = 1.0
ALBEDO_MEAN = 130.0
ALBEDO_SPREAD = 45.0
ALBEDO_TINT = np.array([0.92, 0.96, 1.0])
LIGHT_DIRECTION = np.array([0.35, -0.25, 0.9]) / np.linalg.norm([0.35, -0.25, 0.9])
EVENT_MARGIN = 8
MAX_PLACEMENT_ATTEMPTS = 200
START_TIME = 1577836800.0  # 2020-01-01T00:00:00Z


@dataclass(frozen=True)
class SynthConfig:
    """Generation parameters; distances in pixels, depths in depth units, tau in frames."""
    width: int = 128
    height: int = 128
    n_frames: int = 20
    frame_interval: float = 86400.0
    epsilon: float = 0.5
    tau: int = 4
    n_events: int = 2
    event_area_range: Tuple[int, int] = (200, 900)
    depth_drop_range: Tuple[float, float] = (5.0, 10.0)
    lighting_drift: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    annotate_quiet_pairs: bool = False
    site_name: str = "synthetic"
    split: Split = Split.TEST

    def __post_init__(self):
        object.__setattr__(self, "event_area_range", tuple(int(v) for v in self.event_area_range))
        object.__setattr__(self, "depth_drop_range", tuple(float(v) for v in self.depth_drop_range))
        if not isinstance(self.split, Split):
            object.__setattr__(self, "split", Split.parse(self.split))

        if self.width < 2 or self.height < 2:
            raise ConfigError(f"Image sides must be >= 2, got {self.width}x{self.height}")
        if self.n_frames < 3:
            raise ConfigError(f"n_frames must be >= 3, got {self.n_frames}")
        # strict i < j < k with k - i < tau has no solution for tau = 2
        if self.tau < 3:
            raise ConfigError(f"tau must be >= 3 for generated sequences, got {self.tau}")
        if self.frame_interval <= 0:
            raise ConfigError(f"frame_interval must be > 0, got {self.frame_interval}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.n_events < 0:
            raise ConfigError(f"n_events must be >= 0, got {self.n_events}")
        lo, hi = self.event_area_range
        if not 1 <= lo <= hi <= self.width * self.height:
            raise ConfigError(f"Invalid event_area_range {self.event_area_range}")
        drop_lo, drop_hi = self.depth_drop_range
        if not self.epsilon < drop_lo <= drop_hi:
            raise ConfigError(
                f"depth_drop_range {self.depth_drop_range} must lie above epsilon {self.epsilon}")
        if not 0 <= self.lighting_drift < 1:
            raise ConfigError(f"lighting_drift must be in [0, 1), got {self.lighting_drift}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown synth config key(s): {', '.join(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"Invalid synth config: {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["event_area_range"] = list(self.event_area_range)
        data["depth_drop_range"] = list(self.depth_drop_range)
        data["split"] = self.split.value
        return data


@dataclass(frozen=True, eq=False)
class DepthStack:
    """Per-frame depth rasters z_0 .. z_{T-1}."""
    frames: Tuple[FloatRaster, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("DepthStack needs at least one frame")
        shape = (frames[0].width, frames[0].height)
        for t, frame in enumerate(frames):
            if (frame.width, frame.height) != shape:
                raise ValueError(f"Depth frame {t} is {frame.width}x{frame.height}, expected {shape[0]}x{shape[1]}")
            if not np.isfinite(frame.values).all() or (frame.values <= 0).any():
                raise ValueError(f"Depth frame {t} must be finite and > 0")
        object.__setattr__(self, "frames", frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def __len__(self) -> int:
        return len(self.frames)

    def as_array(self) -> np.ndarray:
        return np.stack([f.values for f in self.frames]).astype(np.float64)


@dataclass(frozen=True)
class SynthEvent:
    """A permanent depth drop inside `region` between frames onset - 1 and onset."""
    region: PolygonAnnotation
    onset: int
    depth_drop: float
    paste_offset: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.onset < 1:
            raise ValueError(f"Event onset must be >= 1, got {self.onset}")
        if not self.depth_drop > 0:
            raise ValueError(f"Event depth_drop must be > 0, got {self.depth_drop}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "region": self.region.to_list(),
            "onset": self.onset,
            "depth_drop": self.depth_drop,
            "paste_offset": list(self.paste_offset),
        }


@dataclass(frozen=True, eq=False)
class SynthSequence:
    images: Tuple[RGBImage, ...]
    depth: DepthStack
    events: Tuple[SynthEvent, ...]
    manifest: Manifest
    config: Optional[SynthConfig] = None


@dataclass(frozen=True)
class DefinitionViolation:
    """A pixel where the generated stack disagrees with the change condition."""
    kind: str  # "missed_event" or "spurious_change"
    x: int
    y: int
    frame: int
    event: Optional[int] = None

    def __str__(self):
        where = f"pixel ({self.x}, {self.y}) at frame {self.frame}"
        if self.event is None:
            return f"[{self.kind}] {where}"
        return f"[{self.kind}] event {self.event}: {where}"


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _lambert(depth: FloatRaster, light: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(depth.values.astype(np.float64))
    normals = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    return np.clip(normals @ light, 0.0, None)


def shade(depth: FloatRaster, albedo: RGBImage, amplitude: float,
          light: np.ndarray = LIGHT_DIRECTION, relief: Optional[FloatRaster] = None) -> np.ndarray:
    """
    Noise-free Lambertian intensities (float64, unclamped). Normals come from
    `relief` when given, otherwise from `depth`.
    """
    surface = depth if relief is None else relief
    for raster in (surface, albedo):
        if (raster.width, raster.height) != (depth.width, depth.height):
            raise ValueError("depth, relief and albedo differ in size")
    return albedo.values.astype(np.float64) * (amplitude * _lambert(surface, light))[..., None]


def render(depth: FloatRaster, albedo: RGBImage, amplitude: float, noise_sigma: float,
           rng: np.random.Generator, light: np.ndarray = LIGHT_DIRECTION,
           relief: Optional[FloatRaster] = None) -> RGBImage:
    """
    Render one frame.

    Args:
        depth: Depth raster whose surface normals drive the shading
        albedo: Surface colour
        amplitude: Lighting gain of this frame
        noise_sigma: Std of additive Gaussian pixel noise (0 draws nothing)
        rng: Generator for the noise
        light: Unit light direction
        relief: Surface for the normals when it differs from depth (defaults to depth)

    Returns:
        RGBImage clamped to [0, 255]
    """
    intensities = shade(depth, albedo, amplitude, light, relief)
    if noise_sigma > 0:
        intensities = intensities + rng.normal(0.0, noise_sigma, intensities.shape)
    return RGBImage(np.clip(intensities, 0.0, 255.0))


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _smooth_field(rng: np.random.Generator, height: int, width: int, sigma: float) -> np.ndarray:
    field_ = gaussian_filter(rng.standard_normal((height, width)), sigma=sigma, mode="reflect")
    spread = field_.std()
    return field_ / spread if spread > 0 else np.zeros_like(field_)


def _star_polygon(rng: np.random.Generator, cx: float, cy: float, radius: float) -> PolygonAnnotation:
    n = int(rng.integers(6, 11))
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    radii = radius * rng.uniform(0.75, 1.25, n)
    vertices = [(round(cx + r * math.cos(a), 3), round(cy + r * math.sin(a), 3))
                for a, r in zip(angles, radii)]
    return PolygonAnnotation(tuple(vertices))


class SyntheticSequenceGenerator:
    """Builds seeded sequences; every random draw comes from one PCG64 stream."""

    def __init__(self, config: SynthConfig):
        """
        Initialize the generator.

        Args:
            config: Validated generation parameters
        """
        self.config = config
        self.rng = np.random.default_rng(config.seed)

    def _base_depth(self) -> np.ndarray:
        c = self.config
        variation = _smooth_field(self.rng, c.height, c.width, max(c.width, c.height) / 8)
        peak = np.abs(variation).max()
        if peak > 0:
            variation = variation / peak
        offset = 10.0 + BASE_DEPTH_AMPLITUDE + c.depth_drop_range[1]
        return (offset + BASE_DEPTH_AMPLITUDE * variation).astype(np.float32)

    def _base_albedo(self) -> np.ndarray:
        c = self.config
        texture = _smooth_field(self.rng, c.height, c.width, TEXTURE_SIGMA)
        grey = np.clip(ALBEDO_MEAN + ALBEDO_SPREAD * texture, 10.0, 250.0)
        return grey[..., None] * ALBEDO_TINT

    def _place_region(self, occupied: np.ndarray) -> Tuple[PolygonAnnotation, np.ndarray]:
        c = self.config
        lo, hi = c.event_area_range
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            target = self.rng.uniform(lo, hi)
            radius = math.sqrt(target / math.pi)
            reach = 1.25 * radius + 1
            if 2 * reach >= min(c.width, c.height):
                continue
            cx = self.rng.uniform(reach, c.width - reach)
            cy = self.rng.uniform(reach, c.height - reach)
            polygon = _star_polygon(self.rng, cx, cy, radius)
            if not polygon.is_simple():
                continue
            mask = rasterize_polygon(polygon, c.width, c.height).bits
            area = int(mask.sum())
            if not lo <= area <= hi or (mask & occupied).any():
                continue
            return polygon, mask
        raise PlacementError(
            f"Could not place event region after {MAX_PLACEMENT_ATTEMPTS} attempts; "
            f"reduce n_events or event_area_range")

    def _paste_offset(self, mask: np.ndarray) -> Tuple[int, int]:
        """Shift (dx, dy) to a source window that lies in the image and misses the region."""
        c = self.config
        ys, xs = np.nonzero(mask)
        x0, x1, y0, y1 = xs.min(), xs.max() + 1, ys.min(), ys.max() + 1
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            dx = int(self.rng.integers(-x0, c.width - x1 + 1))
            dy = int(self.rng.integers(-y0, c.height - y1 + 1))
            if abs(dx) >= x1 - x0 or abs(dy) >= y1 - y0:
                return dx, dy
        raise PlacementError("No albedo source window outside the event region")

    def generate(self) -> SynthSequence:
        c = self.config
        depth = self._base_depth()
        # event drops are constant per region, so shading keeps the untouched terrain
        relief = FloatRaster(depth)
        albedo = self._base_albedo()
        gains = MEAN_GAIN * (1.0 + c.lighting_drift * self.rng.uniform(-1.0, 1.0, c.n_frames))

        events: List[SynthEvent] = []
        masks: List[np.ndarray] = []
        occupied = np.zeros((c.height, c.width), dtype=bool)
        for _ in range(c.n_events):
            polygon, mask = self._place_region(occupied)
            onset = int(self.rng.integers(1, c.n_frames - 1))
            drop = float(self.rng.uniform(*c.depth_drop_range))
            offset = self._paste_offset(mask)
            events.append(SynthEvent(polygon, onset, drop, offset))
            masks.append(mask)
            occupied |= binary_dilation(mask, iterations=EVENT_MARGIN)

        order = sorted(range(len(events)), key=lambda e: (events[e].onset, e))
        images: List[RGBImage] = []
        depths: List[FloatRaster] = []
        for t in range(c.n_frames):
            for e in order:
                event = events[e]
                if event.onset != t:
                    continue
                mask = masks[e]
                depth[mask] = depth[mask] - np.float32(event.depth_drop)
                dx, dy = event.paste_offset
                ys, xs = np.nonzero(mask)
                albedo[ys, xs] = albedo[ys + dy, xs + dx]
            depth_t = FloatRaster(depth)
            depths.append(depth_t)
            images.append(render(depth_t, RGBImage(albedo), float(gains[t]), c.noise_sigma, self.rng,
                                 relief=relief))

        manifest = self._manifest(events)
        logger.info("Generated %d frames with %d event(s) (seed %d)", c.n_frames, len(events), c.seed)
        return SynthSequence(tuple(images), DepthStack(tuple(depths)), tuple(events), manifest, c)

    def _manifest(self, events: Sequence[SynthEvent]) -> Manifest:
        c = self.config
        frames = [Frame(t, START_TIME + t * c.frame_interval, f"images/frame_{t:03d}.png")
                  for t in range(c.n_frames)]
        by_onset: Dict[int, List[PolygonAnnotation]] = {}
        for event in events:
            by_onset.setdefault(event.onset, []).append(event.region)
        pairs = []
        for b in range(1, c.n_frames):
            if b in by_onset:
                pairs.append(AnnotatedPair(b - 1, b, tuple(by_onset[b])))
            elif c.annotate_quiet_pairs:
                pairs.append(AnnotatedPair(b - 1, b, ()))
        site = Site(c.site_name, c.split, c.width, c.height, tuple(frames), tuple(pairs))
        return Manifest(sites=(site,))


def generate(config: SynthConfig) -> SynthSequence:
    """Generate a sequence; equal configs give bit-identical output."""
    return SyntheticSequenceGenerator(config).generate()


# ---------------------------------------------------------------------------
# Definition check
# ---------------------------------------------------------------------------

def change_condition(depth: DepthStack, epsilon: float, tau: int) -> np.ndarray:
    """
    Boolean (T, H, W): entry i holds where some i < j < k with k - i < tau has
    |z_j - z_i| > epsilon and |z_k - z_i| > epsilon.
    """
    z = depth.as_array()
    n = len(depth)
    out = np.zeros(z.shape, dtype=bool)
    for i in range(n):
        stop = min(i + tau, n)
        if stop - (i + 1) < 2:
            continue
        exceed = np.abs(z[i + 1:stop] - z[i]) > epsilon
        out[i] = exceed.sum(axis=0) >= 2
    return out


def verify_definition(depth: DepthStack, events: Sequence[SynthEvent], epsilon: float,
                      tau: int) -> Tuple[bool, List[DefinitionViolation]]:
    """
    Check every event pixel changes at onset - 1 and no other pixel ever does.

    Returns:
        (ok, violations)
    """
    condition = change_condition(depth, epsilon, tau)
    width, height = depth.width, depth.height
    violations: List[DefinitionViolation] = []
    event_pixels = np.zeros((height, width), dtype=bool)

    for e, event in enumerate(events):
        mask = rasterize_polygon(event.region, width, height).bits
        event_pixels |= mask
        i = event.onset - 1
        if not 0 <= i < len(depth):
            ys, xs = np.nonzero(mask)
            violations.extend(DefinitionViolation("missed_event", int(x), int(y), i, e)
                              for y, x in zip(ys, xs))
            continue
        ys, xs = np.nonzero(mask & ~condition[i])
        violations.extend(DefinitionViolation("missed_event", int(x), int(y), i, e)
                          for y, x in zip(ys, xs))

    spurious = condition & ~event_pixels
    if spurious.any():
        first = spurious.argmax(axis=0)
        ys, xs = np.nonzero(spurious.any(axis=0))
        violations.extend(DefinitionViolation("spurious_change", int(x), int(y), int(first[y, x]))
                          for y, x in zip(ys, xs))

    if violations:
        logger.warning("Definition check found %d violation(s)", len(violations))
    return not violations, violations


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def save_sequence(sequence: SynthSequence, out_dir) -> Path:
    """
    Write images/*.png, depth/*.fr32, manifest.json, events.json and synth_config.json.

    Returns:
        Path to the written manifest
    """
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)

    for t, (image, depth) in enumerate(zip(sequence.images, sequence.depth.frames)):
        write_rgb(image, root / "images" / f"frame_{t:03d}.png")
        write_raster(depth, root / "depth" / f"frame_{t:03d}.fr32")

    manifest_path = root / "manifest.json"
    save_manifest(sequence.manifest, manifest_path)
    events = [event.to_dict() for event in sequence.events]
    (root / "events.json").write_text(json.dumps(events, indent=2, sort_keys=True) + "\n")
    if sequence.config is not None:
        (root / "synth_config.json").write_text(
            json.dumps(sequence.config.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest_path
