"""Planar geometry in projected meters, plus a uniform-grid spatial index."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence


class Point(NamedTuple):
    x: float
    y: float


def distance(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _check_finite(points: Iterable[Point]) -> None:
    for p in points:
        if not (math.isfinite(p[0]) and math.isfinite(p[1])):
            raise ValueError(f"non-finite coordinate {tuple(p)!r}")


@dataclass(frozen=True)
class Polyline:
    """Ordered open chain of at least two points."""

    points: tuple[Point, ...]
    cumulative: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        pts = tuple(Point(float(p[0]), float(p[1])) for p in self.points)
        if len(pts) < 2:
            raise ValueError("polyline needs at least two points")
        _check_finite(pts)
        cum = [0.0]
        for a, b in zip(pts, pts[1:]):
            seg = distance(a, b)
            if seg == 0.0:
                raise ValueError(f"repeated consecutive point {tuple(a)!r}")
            cum.append(cum[-1] + seg)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cumulative", tuple(cum))

    @property
    def length(self) -> float:
        return self.cumulative[-1]

    @property
    def start(self) -> Point:
        return self.points[0]

    @property
    def end(self) -> Point:
        return self.points[-1]

    def reversed(self) -> Polyline:
        return Polyline(self.points[::-1])

    def point_at(self, s: float) -> Point:
        """Point at arc length ``s`` from the start, clamped to the chain."""
        pts = self.points
        if len(pts) == 2:
            total = self.cumulative[1]
            t = min(max(s / total, 0.0), 1.0)
            a, b = pts
            return Point(a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t)
        cum = self.cumulative
        if s <= 0.0:
            return pts[0]
        if s >= cum[-1]:
            return pts[-1]
        lo, hi = 0, len(cum) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if cum[mid] <= s:
                lo = mid
            else:
                hi = mid
        t = (s - cum[lo]) / (cum[hi] - cum[lo])
        a, b = pts[lo], pts[hi]
        return Point(a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t)

    def project(self, p: Point) -> tuple[float, float]:
        """Return ``(distance, arc_length)`` of the closest point to ``p``.

        Ties between segments resolve to the smaller arc length.
        """
        best_d = math.inf
        best_s = 0.0
        for i, (a, b) in enumerate(zip(self.points, self.points[1:])):
            t = _segment_param(p, a, b)
            q = (a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t)
            d = math.hypot(p[0] - q[0], p[1] - q[1])
            if d < best_d:
                best_d = d
                best_s = self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i])
        return best_d, best_s

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class Polygon:
    """Simple polygon given by its ring; the closing vertex is implicit."""

    ring: tuple[Point, ...]

    def __post_init__(self) -> None:
        pts = [Point(float(p[0]), float(p[1])) for p in self.ring]
        if len(pts) >= 2 and pts[0] == pts[-1]:
            pts.pop()
        if len(pts) < 3:
            raise ValueError("polygon needs at least three distinct vertices")
        _check_finite(pts)
        object.__setattr__(self, "ring", tuple(pts))
        if self.area <= 0.0:
            raise ValueError("degenerate polygon (zero area)")
        if _ring_self_intersects(self.ring):
            raise ValueError("self-intersecting polygon ring")

    @property
    def signed_area(self) -> float:
        ring = self.ring
        acc = 0.0
        for i in range(len(ring)):
            x0, y0 = ring[i]
            x1, y1 = ring[(i + 1) % len(ring)]
            acc += x0 * y1 - x1 * y0
        return acc / 2.0

    @property
    def area(self) -> float:
        return abs(self.signed_area)

    @property
    def centroid(self) -> Point:
        ring = self.ring
        a = self.signed_area
        cx = cy = 0.0
        for i in range(len(ring)):
            x0, y0 = ring[i]
            x1, y1 = ring[(i + 1) % len(ring)]
            cross = x0 * y1 - x1 * y0
            cx += (x0 + x1) * cross
            cy += (y0 + y1) * cross
        return Point(cx / (6.0 * a), cy / (6.0 * a))

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.ring]
        ys = [p[1] for p in self.ring]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class Circle:
    center: Point
    radius: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.radius) and self.radius > 0.0):
            raise ValueError(f"circle radius must be finite and positive, got {self.radius}")
        _check_finite([self.center])

    def contains(self, p: Point) -> bool:
        return distance(self.center, p) <= self.radius

    def bbox(self) -> tuple[float, float, float, float]:
        (x, y), r = self.center, self.radius
        return x - r, y - r, x + r, y + r


def _segment_param(p: Sequence[float], a: Sequence[float], b: Sequence[float]) -> float:
    dx, dy = b[0] - a[0], b[1] - a[1]
    den = dx * dx + dy * dy
    if den == 0.0:
        return 0.0
    t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / den
    return 0.0 if t < 0.0 else 1.0 if t > 1.0 else t


def point_segment_distance(p: Point, a: Point, b: Point) -> float:
    t = _segment_param(p, a, b)
    return math.hypot(p[0] - (a[0] + (b[0] - a[0]) * t), p[1] - (a[1] + (b[1] - a[1]) * t))


def segment_intersects_circle(a: Point, b: Point, c: Circle) -> bool:
    """True when the closed segment ``ab`` comes within ``c.radius`` of the center."""
    if a == b:
        raise ValueError("segment endpoints coincide")
    return point_segment_distance(c.center, a, b) <= c.radius


def polyline_intersects_circle(line: Polyline, c: Circle) -> bool:
    pts = line.points
    return any(point_segment_distance(c.center, a, b) <= c.radius for a, b in zip(pts, pts[1:]))


def circle_spans_on_polyline(line: Polyline, center: Point, radius: float) -> list[tuple[float, float]]:
    """Arc-length intervals of ``line`` lying inside the closed disc.

    Intervals are sorted and touching pieces from adjacent segments are merged.
    """
    out: list[tuple[float, float]] = []
    cx, cy = center
    r2 = radius * radius
    cum = line.cumulative
    pts = line.points
    for i in range(len(pts) - 1):
        (ax, ay), (bx, by) = pts[i], pts[i + 1]
        dx, dy = bx - ax, by - ay
        fx, fy = ax - cx, ay - cy
        qa = dx * dx + dy * dy
        qb = 2.0 * (fx * dx + fy * dy)
        qc = fx * fx + fy * fy - r2
        if qa == 0.0:
            # segment too short to resolve: treat it as a point
            if qc > 0.0:
                continue
            t0, t1 = 0.0, 1.0
        else:
            disc = qb * qb - 4.0 * qa * qc
            if disc < 0.0:
                continue
            root = math.sqrt(disc)
            t0 = (-qb - root) / (2.0 * qa)
            t1 = (-qb + root) / (2.0 * qa)
            if t1 < 0.0 or t0 > 1.0:
                continue
            t0, t1 = max(t0, 0.0), min(t1, 1.0)
        seg = cum[i + 1] - cum[i]
        lo, hi = cum[i] + t0 * seg, cum[i] + t1 * seg
        if out and lo <= out[-1][1] + 1e-9:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def _orient(a: Point, b: Point, c: Point) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a: Point, b: Point, p: Point) -> bool:
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool:
    """Closed-segment intersection test, including touching and collinear overlap."""
    o1, o2 = _orient(a, b, c), _orient(a, b, d)
    o3, o4 = _orient(c, d, a), _orient(c, d, b)
    if ((o1 > 0 > o2) or (o1 < 0 < o2)) and ((o3 > 0 > o4) or (o3 < 0 < o4)):
        return True
    if o1 == 0 and _on_segment(a, b, c):
        return True
    if o2 == 0 and _on_segment(a, b, d):
        return True
    if o3 == 0 and _on_segment(c, d, a):
        return True
    if o4 == 0 and _on_segment(c, d, b):
        return True
    return False


def segment_distance(a: Point, b: Point, c: Point, d: Point) -> float:
    if segments_intersect(a, b, c, d):
        return 0.0
    return min(
        point_segment_distance(a, c, d),
        point_segment_distance(b, c, d),
        point_segment_distance(c, a, b),
        point_segment_distance(d, a, b),
    )


def _ring_self_intersects(ring: Sequence[Point]) -> bool:
    n = len(ring)
    if n == 3:
        return False
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        for j in range(i + 1, n):
            # adjacent edges share a vertex by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            c, d = ring[j], ring[(j + 1) % n]
            if segments_intersect(a, b, c, d):
                return True
    return False


def point_in_polygon(p: Point, poly: Polygon) -> bool:
    """Even-odd containment test; points on the boundary count as inside."""
    ring = poly.ring
    n = len(ring)
    inside = False
    px, py = p
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        if _orient(a, b, p) == 0 and _on_segment(a, b, p):
            return True
        (x0, y0), (x1, y1) = a, b
        if (y0 > py) != (y1 > py):
            xcross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            if px < xcross:
                inside = not inside
    return inside


def convex_hull(points: Iterable[Point]) -> list[Point]:
    """Monotone-chain hull, counter-clockwise, without collinear vertices."""
    pts = sorted(set((float(p[0]), float(p[1])) for p in points))
    if len(pts) <= 2:
        return [Point(*p) for p in pts]

    def half(seq):
        chain: list = []
        for p in seq:
            while len(chain) >= 2 and _orient(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower, upper = half(pts), half(reversed(pts))
    return [Point(*p) for p in lower[:-1] + upper[:-1]]


class SpatialIndex:
    """Uniform grid mapping cells to the ids of entities whose bbox overlaps them.

    Queries return a superset of the true hits, sorted by id; callers filter
    with an exact test.
    """

    def __init__(self, cell_size: float) -> None:
        if not cell_size > 0:
            raise ValueError("cell size must be positive")
        self.cell_size = float(cell_size)
        self._cells: dict[tuple[int, int], list[int]] = {}
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def _span(self, lo: float, hi: float) -> range:
        s = self.cell_size
        return range(math.floor(lo / s), math.floor(hi / s) + 1)

    def insert(self, entity_id: int, bbox: tuple[float, float, float, float]) -> None:
        x0, y0, x1, y1 = bbox
        cells = self._cells
        for i in self._span(x0, x1):
            for j in self._span(y0, y1):
                cells.setdefault((i, j), []).append(entity_id)
        self._count += 1

    def insert_point(self, entity_id: int, p: Point) -> None:
        s = self.cell_size
        self._cells.setdefault((math.floor(p[0] / s), math.floor(p[1] / s)), []).append(entity_id)
        self._count += 1

    def candidates(self, bbox: tuple[float, float, float, float]) -> list[int]:
        x0, y0, x1, y1 = bbox
        found: set[int] = set()
        cells = self._cells
        for i in self._span(x0, x1):
            for j in self._span(y0, y1):
                bucket = cells.get((i, j))
                if bucket:
                    found.update(bucket)
        return sorted(found)

    def query(self, zone: Circle) -> list[int]:
        return self.candidates(zone.bbox())


def spatial_query(index: SpatialIndex, zone: Circle) -> list[int]:
    return index.query(zone)
