"""
Dataset Schema Module

Defines the time-lapse dataset index (sites, splits, frames, annotated pairs),
loads and validates JSON manifests, and samples labeled and unlabeled image pairs.
"""

import json
import logging
import statistics
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import ManifestError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ONE_WEEK_SECONDS = 604800


class Split(Enum):
    """Dataset split a site belongs to."""
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"

    @classmethod
    def parse(cls, value: str) -> "Split":
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ManifestError(f"Unknown split: {value!r}") from None


@dataclass(frozen=True)
class PolygonAnnotation:
    """A change event outline in pixel coordinates, implicitly closed."""
    vertices: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        vertices = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(vertices) < 3:
            raise ManifestError(f"Polygon needs at least 3 vertices, got {len(vertices)}")
        object.__setattr__(self, "vertices", vertices)

    def edges(self):
        """Yield (p, q) vertex pairs in order, closing back to the first vertex."""
        n = len(self.vertices)
        for i in range(n):
            yield self.vertices[i], self.vertices[(i + 1) % n]

    def area(self) -> float:
        """Geometric (shoelace) area."""
        return abs(sum(p[0] * q[1] - q[0] * p[1] for p, q in self.edges())) / 2.0

    def bounds(self) -> Tuple[float, float, float, float]:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)

    def translated(self, dx: float, dy: float) -> "PolygonAnnotation":
        return PolygonAnnotation(tuple((x + dx, y + dy) for x, y in self.vertices))

    def is_simple(self) -> bool:
        """True if no two non-adjacent edges touch or cross."""
        edges = list(self.edges())
        n = len(edges)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(edges[i][0], edges[i][1], edges[j][0], edges[j][1]):
                    return False
        return True

    def to_list(self) -> List[List[float]]:
        return [[x, y] for x, y in self.vertices]


def _orientation(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _on_segment(p, q, r) -> bool:
    return (min(p[0], q[0]) <= r[0] <= max(p[0], q[0])
            and min(p[1], q[1]) <= r[1] <= max(p[1], q[1]))


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = _orientation(q1, q2, p1)
    d2 = _orientation(q1, q2, p2)
    d3 = _orientation(p1, p2, q1)
    d4 = _orientation(p1, p2, q2)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    if d1 == 0 and _on_segment(q1, q2, p1):
        return True
    if d2 == 0 and _on_segment(q1, q2, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, q1):
        return True
    if d4 == 0 and _on_segment(p1, p2, q2):
        return True
    return False


@dataclass(frozen=True)
class Frame:
    """A single timestamped image of a site."""
    index: int
    timestamp: float  # seconds since epoch, UTC
    image_path: str

    def __post_init__(self):
        if self.timestamp < 0:
            raise ManifestError(f"Frame {self.index}: negative timestamp {self.timestamp}")
        if not self.image_path:
            raise ManifestError(f"Frame {self.index}: empty image_path")


@dataclass(frozen=True)
class AnnotatedPair:
    """Two frames of a site with the change polygons between them (empty = no change)."""
    frame_a: int
    frame_b: int
    polygons: Tuple[PolygonAnnotation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "polygons", tuple(self.polygons))


@dataclass(frozen=True)
class Site:
    """A camera viewpoint with its frames and annotations."""
    name: str
    split: Split
    width: int
    height: int
    frames: Tuple[Frame, ...] = ()
    annotated_pairs: Tuple[AnnotatedPair, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "annotated_pairs", tuple(self.annotated_pairs))

    def frame(self, index: int) -> Optional[Frame]:
        for frame in self.frames:
            if frame.index == index:
                return frame
        return None


@dataclass(frozen=True)
class Manifest:
    """Dataset index: every site with its split, frames and annotated pairs."""
    schema_version: int = SCHEMA_VERSION
    sites: Tuple[Site, ...] = ()
    root: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))

    def site(self, name: str) -> Site:
        for site in self.sites:
            if site.name == name:
                return site
        raise KeyError(name)

    def resolve(self, relative_path: str) -> Path:
        """Resolve a frame path relative to the manifest directory."""
        base = self.root if self.root is not None else Path(".")
        return base / relative_path


@dataclass(frozen=True)
class FramePair:
    """Two frames of one site, ordered in time."""
    site: str
    frame_a: int
    frame_b: int
    gap_seconds: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "site": self.site,
            "frame_a": self.frame_a,
            "frame_b": self.frame_b,
            "gap_seconds": self.gap_seconds,
        }


# ---------------------------------------------------------------------------
# Parsing and serialization
# ---------------------------------------------------------------------------

def _parse_timestamp(value: Any) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        try:
            datetime.fromtimestamp(value, tz=timezone.utc)
        except (OverflowError, OSError, ValueError):
            raise ManifestError(f"Timestamp out of range: {value!r}") from None
        return float(value)
    if not isinstance(value, str):
        raise ManifestError(f"Timestamp must be an ISO-8601 string, got {value!r}")
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError:
        raise ManifestError(f"Invalid ISO-8601 timestamp: {value!r}") from None
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.timestamp()


def format_timestamp(seconds: float) -> str:
    """Epoch seconds to ISO-8601 UTC with a trailing Z."""
    moment = datetime.fromtimestamp(seconds, tz=timezone.utc)
    text = moment.isoformat()
    return text.replace("+00:00", "Z")


def _as_int(value: Any, field_name: str, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ManifestError(f"{where}: {field_name} must be an integer, got {value!r}")
    try:
        number = int(value)
    except (ValueError, OverflowError):
        raise ManifestError(f"{where}: {field_name} must be an integer, got {value!r}") from None
    if isinstance(value, float) and number != value:
        raise ManifestError(f"{where}: {field_name} must be an integer, got {value!r}")
    return number


def _as_list(value: Any, field_name: str, where: str) -> list:
    if not isinstance(value, list):
        raise ManifestError(f"{where}: {field_name} must be a list")
    return value


def _require(mapping: Dict[str, Any], key: str, where: str) -> Any:
    if not isinstance(mapping, dict):
        raise ManifestError(f"{where}: expected an object")
    if key not in mapping:
        raise ManifestError(f"{where}: missing field {key!r}")
    return mapping[key]


def _parse_site(data: Dict[str, Any]) -> Site:
    name = _require(data, "name", "site")
    where = f"site {name!r}"
    if not isinstance(name, str) or not name:
        raise ManifestError("site: name must be a non-empty string")

    frames = []
    for frame_data in _as_list(_require(data, "frames", where), "frames", where):
        frames.append(Frame(
            index=_as_int(_require(frame_data, "index", where), "index", where),
            timestamp=_parse_timestamp(_require(frame_data, "timestamp", where)),
            image_path=str(_require(frame_data, "image_path", where)),
        ))

    pairs = []
    for pair_data in _as_list(data.get("annotated_pairs", []), "annotated_pairs", where):
        polygons = []
        for raw in _as_list(_require(pair_data, "polygons", where), "polygons", where):
            try:
                vertices = tuple((float(x), float(y)) for x, y in raw)
            except (TypeError, ValueError):
                raise ManifestError(f"{where}: polygon vertices must be [x, y] pairs") from None
            polygons.append(PolygonAnnotation(vertices))
        pairs.append(AnnotatedPair(
            frame_a=_as_int(_require(pair_data, "frame_a", where), "frame_a", where),
            frame_b=_as_int(_require(pair_data, "frame_b", where), "frame_b", where),
            polygons=tuple(polygons),
        ))

    width = _as_int(_require(data, "width", where), "width", where)
    height = _as_int(_require(data, "height", where), "height", where)

    return Site(
        name=name,
        split=Split.parse(_require(data, "split", where)),
        width=width,
        height=height,
        frames=tuple(frames),
        annotated_pairs=tuple(pairs),
    )


def parse_manifest(document: bytes, root: Optional[Path] = None) -> Manifest:
    """
    Parse a manifest document.

    Args:
        document: UTF-8 JSON bytes (str is accepted too)
        root: Directory frame paths are relative to

    Returns:
        Manifest object

    Raises:
        ManifestError: malformed document, unknown schema_version or duplicate site names
    """
    try:
        text = document.decode("utf-8") if isinstance(document, (bytes, bytearray)) else document
        data = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"Malformed manifest: {exc}") from None

    version = _require(data, "schema_version", "manifest")
    if version != SCHEMA_VERSION:
        raise ManifestError(f"Unknown schema_version: {version!r}")

    sites = []
    seen = set()
    for site_data in _as_list(_require(data, "sites", "manifest"), "sites", "manifest"):
        site = _parse_site(site_data)
        if site.name in seen:
            raise ManifestError(f"Duplicate site name: {site.name!r}")
        seen.add(site.name)
        sites.append(site)

    return Manifest(schema_version=version, sites=tuple(sites), root=root)


def manifest_to_dict(manifest: Manifest) -> Dict[str, Any]:
    """Convert to the JSON document structure."""
    return {
        "schema_version": manifest.schema_version,
        "sites": [
            {
                "name": site.name,
                "split": site.split.value,
                "width": site.width,
                "height": site.height,
                "frames": [
                    {
                        "index": frame.index,
                        "timestamp": format_timestamp(frame.timestamp),
                        "image_path": frame.image_path,
                    }
                    for frame in site.frames
                ],
                "annotated_pairs": [
                    {
                        "frame_a": pair.frame_a,
                        "frame_b": pair.frame_b,
                        "polygons": [polygon.to_list() for polygon in pair.polygons],
                    }
                    for pair in site.annotated_pairs
                ],
            }
            for site in manifest.sites
        ],
    }


def serialize_manifest(manifest: Manifest) -> bytes:
    """Canonical UTF-8 JSON encoding of a manifest."""
    text = json.dumps(manifest_to_dict(manifest), indent=2, sort_keys=True)
    return (text + "\n").encode("utf-8")


def load_manifest(path: str) -> Manifest:
    """Read a manifest file; frame paths resolve against its directory."""
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"Manifest file not found: {file_path}")
    return parse_manifest(file_path.read_bytes(), root=file_path.parent)


def save_manifest(manifest: Manifest, path: str) -> str:
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    file_path.write_bytes(serialize_manifest(manifest))
    return str(file_path)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    """A single invariant violation found by validate()."""
    code: str
    site: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.site}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> List[str]:
        return [v.code for v in self.violations]


def _validate_polygon(site: Site, pair_label: str, k: int, polygon: PolygonAnnotation,
                      out: List[Violation]) -> None:
    where = f"{pair_label} polygon {k}"
    for x, y in polygon.vertices:
        if not (0 <= x <= site.width and 0 <= y <= site.height):
            out.append(Violation("out_of_bounds", site.name,
                                 f"{where}: vertex ({x:g}, {y:g}) outside "
                                 f"[0,{site.width}]x[0,{site.height}]"))
            break
    if not polygon.is_simple():
        out.append(Violation("self_intersecting", site.name, f"{where}: polygon is not simple"))
    else:
        # Imported here: raster depends on this module.
        from .raster import rasterize_polygon
        if polygon.area() == 0 or rasterize_polygon(polygon, site.width, site.height).count() == 0:
            out.append(Violation("degenerate_polygon", site.name,
                                 f"{where}: zero rasterized area"))


def validate(manifest: Manifest) -> ValidationReport:
    """
    Check every manifest invariant.

    Args:
        manifest: Manifest to check (not modified)

    Returns:
        ValidationReport listing all violations; empty means valid
    """
    out: List[Violation] = []

    splits_by_name: Dict[str, set] = {}
    for site in manifest.sites:
        splits_by_name.setdefault(site.name, set()).add(site.split)
    for name, splits in splits_by_name.items():
        count = sum(1 for s in manifest.sites if s.name == name)
        if len(splits) > 1:
            out.append(Violation("split_conflict", name,
                                 "site assigned to splits "
                                 + ", ".join(sorted(s.value for s in splits))))
        elif count > 1:
            out.append(Violation("duplicate_site", name, f"site name used {count} times"))

    for site in manifest.sites:
        if site.width < 1 or site.height < 1:
            out.append(Violation("bad_dimensions", site.name,
                                 f"width/height must be >= 1, got {site.width}x{site.height}"))

        previous = None
        paths = set()
        for position, frame in enumerate(site.frames):
            if frame.index != position:
                out.append(Violation("frame_index", site.name,
                                     f"frame at position {position} has index {frame.index}"))
            if previous is not None and frame.timestamp <= previous.timestamp:
                out.append(Violation("timestamp_order", site.name,
                                     f"frame {frame.index} is not after frame {previous.index}"))
            if frame.image_path in paths:
                out.append(Violation("duplicate_path", site.name,
                                     f"frame {frame.index} reuses {frame.image_path}"))
            paths.add(frame.image_path)
            previous = frame

        indices = {frame.index for frame in site.frames}
        seen_pairs = set()
        for pair in site.annotated_pairs:
            label = f"pair ({pair.frame_a}, {pair.frame_b})"
            for ref in (pair.frame_a, pair.frame_b):
                if ref not in indices:
                    out.append(Violation("dangling_reference", site.name,
                                         f"{label} references missing frame {ref}"))
            if pair.frame_a >= pair.frame_b:
                out.append(Violation("pair_order", site.name, f"{label}: frame_a must be < frame_b"))
            if (pair.frame_a, pair.frame_b) in seen_pairs:
                out.append(Violation("duplicate_pair", site.name, f"{label} annotated twice"))
            seen_pairs.add((pair.frame_a, pair.frame_b))
            if site.width >= 1 and site.height >= 1:
                for k, polygon in enumerate(pair.polygons):
                    _validate_polygon(site, label, k, polygon, out)

    return ValidationReport(tuple(out))


# ---------------------------------------------------------------------------
# Pair selection
# ---------------------------------------------------------------------------

def _sites_in(manifest: Manifest, split: Split) -> List[Site]:
    split = Split.parse(split.value if isinstance(split, Split) else split)
    return sorted((s for s in manifest.sites if s.split is split), key=lambda s: s.name)


def _make_pair(site: Site, a: int, b: int) -> FramePair:
    frame_a, frame_b = site.frame(a), site.frame(b)
    gap = frame_b.timestamp - frame_a.timestamp
    return FramePair(site=site.name, frame_a=a, frame_b=b, gap_seconds=gap)


def labeled_pairs(manifest: Manifest, split, changes_only: bool = False
                  ) -> List[Tuple[FramePair, Tuple[PolygonAnnotation, ...]]]:
    """
    All annotated pairs of the sites in a split, ordered by (site, frame_a, frame_b).

    Args:
        manifest: A valid manifest
        split: Split (or its name)
        changes_only: Drop pairs whose polygon list is empty

    Returns:
        List of (FramePair, polygons)
    """
    result = []
    for site in _sites_in(manifest, split):
        for pair in sorted(site.annotated_pairs, key=lambda p: (p.frame_a, p.frame_b)):
            if changes_only and not pair.polygons:
                continue
            result.append((_make_pair(site, pair.frame_a, pair.frame_b), pair.polygons))
    return result


def sample_unlabeled_pairs(manifest: Manifest, split, max_gap: float, count: int,
                           seed: int) -> List[FramePair]:
    """
    Uniformly sample unannotated same-site pairs with 0 < gap <= max_gap.

    Sampling is without replacement from the eligible pool using numpy's PCG64
    generator seeded with `seed`; the result is sorted by (site, frame_a, frame_b).
    """
    if max_gap <= 0:
        raise ValueError(f"max_gap must be > 0, got {max_gap}")
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")

    pool: List[FramePair] = []
    for site in _sites_in(manifest, split):
        annotated = {(p.frame_a, p.frame_b) for p in site.annotated_pairs}
        frames = sorted(site.frames, key=lambda f: f.timestamp)
        for i, first in enumerate(frames):
            for second in frames[i + 1:]:
                gap = second.timestamp - first.timestamp
                if gap > max_gap:
                    break
                if gap <= 0:
                    continue
                a, b = first.index, second.index
                if (a, b) in annotated:
                    continue
                pool.append(_make_pair(site, a, b))

    if count == 0 or not pool:
        return []

    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(pool), size=min(count, len(pool)), replace=False)
    picked = [pool[int(i)] for i in chosen]
    return sorted(picked, key=lambda p: (p.site, p.frame_a, p.frame_b))


def mix_ratio_plan(n_labeled: int, labeled_fraction: float) -> int:
    """
    Number of unlabeled pairs so that labeled pairs make up `labeled_fraction`
    of the total, rounded half up.

    Examples:
        mix_ratio_plan(40, 0.4) == 60
        mix_ratio_plan(7, 0.4) == 11
    """
    if labeled_fraction <= 0 or labeled_fraction > 1:
        raise ValueError(f"labeled_fraction must be in (0, 1], got {labeled_fraction}")
    if n_labeled < 0:
        raise ValueError(f"n_labeled must be >= 0, got {n_labeled}")
    fraction = Fraction(labeled_fraction).limit_denominator(10**9)
    exact = Fraction(n_labeled) * (1 - fraction) / fraction
    return int((exact + Fraction(1, 2)) // 1)


def plan_training_mix(manifest: Manifest, split, labeled_fraction: float,
                      max_gap: float = ONE_WEEK_SECONDS, seed: int = 0):
    """
    Labeled pairs with changes plus enough sampled unlabeled pairs to reach the mix.

    Returns:
        Tuple of (labeled list of (FramePair, polygons), unlabeled list of FramePair)
    """
    labeled = labeled_pairs(manifest, split, changes_only=True)
    n_unlabeled = mix_ratio_plan(len(labeled), labeled_fraction)
    unlabeled = sample_unlabeled_pairs(manifest, split, max_gap, n_unlabeled, seed)
    if len(unlabeled) < n_unlabeled:
        logger.warning("Only %d unlabeled pairs eligible (wanted %d)", len(unlabeled), n_unlabeled)
    return labeled, unlabeled


# ---------------------------------------------------------------------------
# Summary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SiteSummary:
    """Per-site dataset content row."""
    name: str
    split: str
    resolution: str
    n_frames: int
    n_annotated_pairs: int
    n_events: int
    median_event_area: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "site": self.name,
            "split": self.split,
            "resolution": self.resolution,
            "frames": self.n_frames,
            "annotated_pairs": self.n_annotated_pairs,
            "events": self.n_events,
            "median_event_area": self.median_event_area,
        }


def dataset_summary(manifest: Manifest) -> List[SiteSummary]:
    """Per-site counts and median polygon area, ordered by split then name."""
    order = {Split.TEST: 0, Split.VALIDATION: 1, Split.TRAIN: 2}
    rows = []
    for site in sorted(manifest.sites, key=lambda s: (order[s.split], s.name)):
        areas = [poly.area() for pair in site.annotated_pairs for poly in pair.polygons]
        rows.append(SiteSummary(
            name=site.name,
            split=site.split.value,
            resolution=f"{site.width}x{site.height}",
            n_frames=len(site.frames),
            n_annotated_pairs=len(site.annotated_pairs),
            n_events=len(areas),
            median_event_area=float(statistics.median(areas)) if areas else 0.0,
        ))
    return rows
