"""Scenario configuration, presets, district loading and synthetic districts.

Scenario files are UTF-8 text with one ``key: value`` per line; ``#``
starts a comment. Keys match the :class:`ScenarioConfig` field names and
anything not listed there is rejected.
"""

from __future__ import annotations

import dataclasses
import json
import math
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .geometry import (
    Point,
    Polygon,
    Polyline,
    SpatialIndex,
    distance,
    point_segment_distance,
    segment_distance,
)
from .network import BLOCKED_WEIGHT, DEFAULT_SNAP_TOLERANCE
from .world import DamageLevel, District, DistrictError, GreenSpace, ObstacleLevel, Building

PRESETS = ("survey", "optimistic", "night")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    # behaviour classes 1..6
    p1: float = 0.15
    p2: float = 0.40
    p3: float = 0.10
    p4: float = 0.05
    p5: float = 0.20
    p6: float = 0.10
    people_in_buildings: float = 60.0
    leader_fraction: float = 0.1
    occupancy_per_apartment: float = 3.8
    street_population: int = 0
    perception_radius: float = 20.0
    base_speed: float = 1.3
    medium_slowdown_factor: float = 0.5
    give_up_threshold: int = 3
    seeker_patience: int = 10
    follower_loss_cycles: int = 5
    damage_none: float = 0.45
    damage_slight: float = 0.25
    damage_moderate: float = 0.17
    damage_extensive: float = 0.10
    damage_complete: float = 0.03
    casualty_none: float = 0.0
    casualty_slight: float = 0.0
    casualty_moderate: float = 0.02
    casualty_extensive: float = 0.1
    casualty_complete: float = 0.4
    radius_factor_big: float = 1.5
    radius_factor_medium: float = 1.0
    radius_factor_small: float = 0.5
    blocked_weight: float = BLOCKED_WEIGHT
    max_cycles: int = 3600
    histogram_bucket_seconds: int = 60

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.type == "int":
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ScenarioError(f"{f.name}: expected an integer, got {value!r}")
            elif isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ScenarioError(f"{f.name}: expected a finite number, got {value!r}")
        self._validate()

    def _validate(self) -> None:
        def bounded(key: str, lo: float, hi: float) -> None:
            v = getattr(self, key)
            if not lo <= v <= hi:
                raise ScenarioError(f"{key}: {v} outside [{lo}, {hi}]")

        def positive(key: str) -> None:
            if not getattr(self, key) > 0:
                raise ScenarioError(f"{key}: must be positive, got {getattr(self, key)}")

        probs = ("p1", "p2", "p3", "p4", "p5", "p6")
        for key in probs:
            bounded(key, 0.0, 1.0)
        total = math.fsum(getattr(self, k) for k in probs)
        if abs(total - 1.0) > 1e-9:
            raise ScenarioError(f"{', '.join(probs)} must sum to 1 (got {total:.12g})")
        damage = ("damage_none", "damage_slight", "damage_moderate", "damage_extensive", "damage_complete")
        for key in damage:
            bounded(key, 0.0, 1.0)
        total = math.fsum(getattr(self, k) for k in damage)
        if abs(total - 1.0) > 1e-9:
            raise ScenarioError(f"{', '.join(damage)} must sum to 1 (got {total:.12g})")
        for key in ("casualty_none", "casualty_slight", "casualty_moderate", "casualty_extensive", "casualty_complete"):
            bounded(key, 0.0, 1.0)
        bounded("people_in_buildings", 0.0, 100.0)
        bounded("leader_fraction", 0.0, 1.0)
        bounded("medium_slowdown_factor", 0.0, 1.0)
        for key in ("occupancy_per_apartment", "perception_radius", "base_speed", "medium_slowdown_factor",
                    "radius_factor_big", "radius_factor_medium", "radius_factor_small"):
            positive(key)
        if self.give_up_threshold not in (2, 3):
            raise ScenarioError(f"give_up_threshold: must be 2 or 3, got {self.give_up_threshold}")
        for key in ("seeker_patience", "follower_loss_cycles", "max_cycles", "histogram_bucket_seconds"):
            if getattr(self, key) < 1:
                raise ScenarioError(f"{key}: must be >= 1, got {getattr(self, key)}")
        if self.street_population < 0:
            raise ScenarioError("street_population: must be >= 0")
        if self.blocked_weight != BLOCKED_WEIGHT:
            raise ScenarioError(f"blocked_weight: fixed at {BLOCKED_WEIGHT:g}, got {self.blocked_weight:g}")

    def behaviour_weights(self) -> list[float]:
        return [self.p1, self.p2, self.p3, self.p4, self.p5, self.p6]

    @property
    def damage_distribution(self) -> dict[DamageLevel, float]:
        return {
            DamageLevel.NONE: self.damage_none,
            DamageLevel.SLIGHT: self.damage_slight,
            DamageLevel.MODERATE: self.damage_moderate,
            DamageLevel.EXTENSIVE: self.damage_extensive,
            DamageLevel.COMPLETE: self.damage_complete,
        }

    @property
    def casualty_rates(self) -> dict[DamageLevel, float]:
        return {
            DamageLevel.NONE: self.casualty_none,
            DamageLevel.SLIGHT: self.casualty_slight,
            DamageLevel.MODERATE: self.casualty_moderate,
            DamageLevel.EXTENSIVE: self.casualty_extensive,
            DamageLevel.COMPLETE: self.casualty_complete,
        }

    @property
    def radius_factors(self) -> dict[ObstacleLevel, float]:
        return {
            ObstacleLevel.BIG: self.radius_factor_big,
            ObstacleLevel.MEDIUM: self.radius_factor_medium,
            ObstacleLevel.SMALL: self.radius_factor_small,
        }

    def replace(self, **changes: Any) -> ScenarioConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k}: {v!r}\n" for k, v in self.to_dict().items())


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}


def parse_scenario(text: str, source: str = "<scenario>") -> ScenarioConfig:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ScenarioError(f"{source}:{lineno}: expected 'key: value', got {raw.strip()!r}")
        if key not in _FIELD_TYPES:
            raise ScenarioError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ScenarioError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = int(value) if _FIELD_TYPES[key] == "int" else float(value)
        except ValueError:
            kind = "an integer" if _FIELD_TYPES[key] == "int" else "a number"
            raise ScenarioError(f"{source}:{lineno}: {key} must be {kind}, got {value!r}") from None
    return ScenarioConfig(**values)


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), str(path))


def preset(name: str) -> ScenarioConfig:
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if name == "night":
        return preset("survey").replace(people_in_buildings=100.0)
    text = resources.files("quake_evac").joinpath("presets", f"{name}.txt").read_text(encoding="utf-8")
    return parse_scenario(text, f"preset:{name}")


def resolve_scenario(spec: str) -> ScenarioConfig:
    """A preset name or a path to a scenario file."""
    if spec in PRESETS:
        return preset(spec)
    path = Path(spec)
    if not path.exists() and not path.suffix and len(path.parts) == 1:
        # a bare word is far more likely a mistyped preset than a missing file
        raise ScenarioError(f"unknown preset {spec!r}; choose from {', '.join(PRESETS)} or give a scenario file")
    return load_scenario(path)


# -- districts ---------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticParams:
    blocks: int = 10
    street_spacing: float = 100.0
    buildings_per_block: int = 4
    storey_range: tuple[int, int] = (2, 8)
    apartment_range: tuple[int, int] = (1, 4)
    green_space_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.blocks < 2:
            raise DistrictError(f"blocks must be >= 2, got {self.blocks}")
        if not (math.isfinite(self.street_spacing) and self.street_spacing > 0):
            raise DistrictError(f"street spacing must be positive, got {self.street_spacing}")
        if self.buildings_per_block < 0:
            raise DistrictError("buildings per block must be >= 0")
        lo, hi = self.storey_range
        if not 1 <= lo <= hi:
            raise DistrictError(f"invalid storey range {self.storey_range}")
        lo, hi = self.apartment_range
        if not 0 <= lo <= hi:
            raise DistrictError(f"invalid apartment range {self.apartment_range}")
        if not 0.0 <= self.green_space_fraction <= 1.0:
            raise DistrictError(f"green space fraction must be in [0, 1], got {self.green_space_fraction}")


_SYNTHETIC_KEYS = {
    "blocks": ("blocks", int),
    "spacing": ("street_spacing", float),
    "street_spacing": ("street_spacing", float),
    "buildings_per_block": ("buildings_per_block", int),
    "green_fraction": ("green_space_fraction", float),
    "green_space_fraction": ("green_space_fraction", float),
    "seed": ("seed", int),
}


def parse_synthetic(spec: str) -> SyntheticParams:
    """Parse ``"blocks=5,spacing=80,..."``; ``"default"`` or an empty string gives defaults.

    Ranges use a dash: ``storeys=2-8``, ``apartments=1-6``.
    """
    kwargs: dict[str, Any] = {}
    spec = spec.strip()
    if spec in ("", "default"):
        return SyntheticParams()
    for item in spec.split(","):
        key, sep, value = item.partition("=")
        key, value = key.strip().replace("-", "_"), value.strip()
        try:
            if key in ("storeys", "storey_range", "apartments", "apartment_range"):
                lo, _, hi = value.partition("-")
                name = "storey_range" if key.startswith("storey") else "apartment_range"
                kwargs[name] = (int(lo), int(hi or lo))
            elif sep and key in _SYNTHETIC_KEYS:
                name, conv = _SYNTHETIC_KEYS[key]
                kwargs[name] = conv(value)
            else:
                raise DistrictError(f"unknown synthetic district parameter {item.strip()!r}")
        except ValueError as exc:
            if isinstance(exc, DistrictError):
                raise
            raise DistrictError(f"bad value in {item.strip()!r}") from None
    return SyntheticParams(**kwargs)


def generate_synthetic(params: SyntheticParams, seed: int | None = None) -> District:
    """Square grid of ``blocks x blocks`` city blocks.

    Streets are the grid segments, so the network has ``(B+1)^2`` nodes and
    ``2B(B+1)`` edges. Each non-green block is split into a near-square grid
    of lots with one rectangular building per lot, pushed up to the street.
    """
    rng = random.Random(params.seed if seed is None else seed)
    b, sp = params.blocks, params.street_spacing
    streets: list[Polyline] = []
    for j in range(b + 1):
        for i in range(b):
            streets.append(Polyline((Point(i * sp, j * sp), Point((i + 1) * sp, j * sp))))
    for i in range(b + 1):
        for j in range(b):
            streets.append(Polyline((Point(i * sp, j * sp), Point(i * sp, (j + 1) * sp))))

    blocks = [(i, j) for j in range(b) for i in range(b)]
    n_green = int(math.floor(params.green_space_fraction * len(blocks) + 0.5))
    green = set(rng.sample(range(len(blocks)), n_green))
    # narrow old-town streets: facades sit 2% of the spacing from the centreline
    setback = 0.02 * sp
    greens: list[GreenSpace] = []
    buildings: list[Building] = []
    k = params.buildings_per_block
    cols = max(1, math.ceil(math.sqrt(k))) if k else 0
    rows = math.ceil(k / cols) if k else 0
    for idx, (i, j) in enumerate(blocks):
        x0, y0 = i * sp + setback, j * sp + setback
        x1, y1 = (i + 1) * sp - setback, (j + 1) * sp - setback
        if idx in green:
            greens.append(GreenSpace(len(greens), Polygon(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))))
            continue
        lot_w, lot_h = (x1 - x0) / max(cols, 1), (y1 - y0) / max(rows, 1)
        for n in range(k):
            c, r = n % cols, n // cols
            w = rng.uniform(0.75, 0.95) * lot_w
            h = rng.uniform(0.75, 0.95) * lot_h
            bx0 = _align(x0 + c * lot_w, lot_w, w, c, cols)
            by0 = _align(y0 + r * lot_h, lot_h, h, r, rows)
            ring = ((bx0, by0), (bx0 + w, by0), (bx0 + w, by0 + h), (bx0, by0 + h))
            buildings.append(
                Building(
                    len(buildings),
                    Polygon(ring),
                    storeys=rng.randint(*params.storey_range),
                    apartments=rng.randint(*params.apartment_range),
                )
            )
    return District(streets, buildings, greens)


def _align(start: float, lot: float, size: float, index: int, count: int) -> float:
    """Push a building against the street side of its lot; interior lots stay centred."""
    if index == 0:
        return start
    if index == count - 1:
        return start + lot - size
    return start + (lot - size) / 2.0


def _feature_id(feature: Mapping[str, Any], index: int) -> str:
    props = feature.get("properties") or {}
    fid = feature.get("id", props.get("id"))
    return str(fid) if fid is not None else f"#{index}"


def _ring(coords: Any, fid: str) -> Polygon:
    try:
        return Polygon(tuple(Point(float(x), float(y)) for x, y, *_ in coords[0]))
    except (TypeError, ValueError, IndexError) as exc:
        raise DistrictError(f"feature {fid}: invalid polygon ({exc})") from None


def check_noded(streets: list[Polyline], ids: list[str], tol: float) -> None:
    """Reject street pairs that touch anywhere except at a shared end point."""
    index = SpatialIndex(max(sum(s.length for s in streets) / max(len(streets), 1), 1.0))
    for n, s in enumerate(streets):
        x0, y0, x1, y1 = s.bbox()
        index.insert(n, (x0 - tol, y0 - tol, x1 + tol, y1 + tol))
    for a, sa in enumerate(streets):
        ends_a = (sa.start, sa.end)
        for b in index.candidates(sa.bbox()):
            if b <= a:
                continue
            sb = streets[b]
            ends_b = (sb.start, sb.end)
            for a0, a1 in zip(sa.points, sa.points[1:]):
                for b0, b1 in zip(sb.points, sb.points[1:]):
                    if segment_distance(a0, a1, b0, b1) > tol:
                        continue
                    if not _shared_junction(a0, a1, b0, b1, ends_a, ends_b, tol):
                        raise DistrictError(f"streets {ids[a]!r} and {ids[b]!r} cross without a shared node")


def _shared_junction(a0, a1, b0, b1, ends_a, ends_b, tol: float) -> bool:
    for pa, fa in ((a0, a1), (a1, a0)):
        if pa not in ends_a:
            continue
        for pb, fb in ((b0, b1), (b1, b0)):
            if pb in ends_b and distance(pa, pb) <= tol:
                # touching only at the junction, not running along each other
                if point_segment_distance(fa, b0, b1) > tol and point_segment_distance(fb, a0, a1) > tol:
                    return True
    return False


def load_geojson(path: str | Path, snap_tolerance: float = DEFAULT_SNAP_TOLERANCE) -> District:
    """Read a district FeatureCollection in planar meters.

    Layers come from ``properties.layer``: ``street`` (LineString),
    ``building`` (Polygon with integer ``storeys`` and ``apartments``, optional
    ``damage``), ``green`` and ``school`` (Polygon), ``safe`` (Point).
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DistrictError(f"{path}: not valid JSON ({exc})") from None
    return district_from_geojson(doc, snap_tolerance)


def district_from_geojson(doc: Mapping[str, Any], snap_tolerance: float = DEFAULT_SNAP_TOLERANCE) -> District:
    if doc.get("type") != "FeatureCollection":
        raise DistrictError("expected a GeoJSON FeatureCollection")
    streets: list[Polyline] = []
    street_ids: list[str] = []
    buildings: list[Building] = []
    greens: list[GreenSpace] = []
    schools: list[Polygon] = []
    points: list[Point] = []
    for index, feature in enumerate(doc.get("features", [])):
        fid = _feature_id(feature, index)
        props = feature.get("properties") or {}
        geom = feature.get("geometry") or {}
        layer = props.get("layer")
        gtype, coords = geom.get("type"), geom.get("coordinates")
        if layer is None:
            raise DistrictError(f"feature {fid}: missing required property 'layer'")
        expected = {"street": "LineString", "building": "Polygon", "green": "Polygon", "school": "Polygon", "safe": "Point"}
        if layer not in expected:
            raise DistrictError(f"feature {fid}: unknown layer {layer!r}")
        if gtype != expected[layer]:
            raise DistrictError(f"feature {fid}: layer {layer!r} needs {expected[layer]} geometry, got {gtype!r}")
        if layer == "street":
            try:
                streets.append(Polyline(tuple(Point(float(x), float(y)) for x, y, *_ in coords)))
            except (TypeError, ValueError) as exc:
                raise DistrictError(f"feature {fid}: invalid street ({exc})") from None
            street_ids.append(fid)
        elif layer == "building":
            for key in ("storeys", "apartments"):
                if key not in props:
                    raise DistrictError(f"feature {fid}: missing required property {key!r}")
                if isinstance(props[key], bool) or not isinstance(props[key], int):
                    raise DistrictError(f"feature {fid}: property {key!r} must be an integer")
            given = props.get("damage")
            try:
                given = DamageLevel(given) if given is not None else None
            except ValueError:
                raise DistrictError(f"feature {fid}: unknown damage level {given!r}") from None
            try:
                buildings.append(
                    Building(len(buildings), _ring(coords, fid), props["storeys"], props["apartments"], given_damage=given)
                )
            except DistrictError:
                raise
            except ValueError as exc:
                raise DistrictError(f"feature {fid}: {exc}") from None
        elif layer == "green":
            greens.append(GreenSpace(len(greens), _ring(coords, fid)))
        elif layer == "school":
            schools.append(_ring(coords, fid))
        else:
            try:
                points.append(Point(float(coords[0]), float(coords[1])))
            except (TypeError, ValueError, IndexError):
                raise DistrictError(f"feature {fid}: invalid point") from None
    if not streets:
        raise DistrictError("district has no street features")
    check_noded(streets, street_ids, snap_tolerance)
    return District(streets, buildings, greens, schools, points, street_ids, snap_tolerance)


def district_to_geojson(district: District) -> dict[str, Any]:
    def poly(p: Polygon) -> dict[str, Any]:
        ring = [list(pt) for pt in p.ring]
        return {"type": "Polygon", "coordinates": [ring + [ring[0]]]}

    features: list[dict[str, Any]] = []
    for n, s in enumerate(district.streets):
        fid = district.street_ids[n] if district.street_ids else f"s{n}"
        features.append({
            "type": "Feature",
            "id": fid,
            "properties": {"layer": "street"},
            "geometry": {"type": "LineString", "coordinates": [list(p) for p in s.points]},
        })
    for bld in district.buildings:
        props: dict[str, Any] = {"layer": "building", "storeys": bld.storeys, "apartments": bld.apartments}
        if bld.given_damage is not None:
            props["damage"] = bld.given_damage.value
        features.append({"type": "Feature", "id": f"b{bld.id}", "properties": props, "geometry": poly(bld.footprint)})
    for g in district.green_spaces:
        features.append({"type": "Feature", "id": f"g{g.id}", "properties": {"layer": "green"}, "geometry": poly(g.footprint)})
    for n, s in enumerate(district.schools):
        features.append({"type": "Feature", "id": f"school{n}", "properties": {"layer": "school"}, "geometry": poly(s)})
    for n, p in enumerate(district.safe_points):
        features.append({"type": "Feature", "id": f"safe{n}", "properties": {"layer": "safe"},
                         "geometry": {"type": "Point", "coordinates": list(p)}})
    return {"type": "FeatureCollection", "features": features}


def write_geojson(district: District, path: str | Path) -> None:
    Path(path).write_text(json.dumps(district_to_geojson(district)), encoding="utf-8")


@dataclass(frozen=True)
class DistrictSpec:
    geojson_path: str | None = None
    synthetic: SyntheticParams | None = None

    def __post_init__(self) -> None:
        if (self.geojson_path is None) == (self.synthetic is None):
            raise DistrictError("give exactly one of a GeoJSON path or synthetic parameters")

    def load(self) -> District:
        if self.geojson_path is not None:
            return load_geojson(self.geojson_path)
        return generate_synthetic(self.synthetic)

    def describe(self) -> dict[str, Any]:
        if self.geojson_path is not None:
            return {"geojson": self.geojson_path}
        return {"synthetic": dataclasses.asdict(self.synthetic)}
