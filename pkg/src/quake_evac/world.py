"""District state after the quake: buildings, safe places, obstacles and casualties."""

from __future__ import annotations

import dataclasses
import enum
import math
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .geometry import (
    Circle,
    Point,
    Polygon,
    Polyline,
    SpatialIndex,
    circle_spans_on_polyline,
    convex_hull,
    distance,
    point_segment_distance,
    polyline_intersects_circle,
)
from .network import DEFAULT_SNAP_TOLERANCE, GraphPosition, StreetGraph, build_graph

if TYPE_CHECKING:
    from .agents import HumanAgent
    from .scenario import ScenarioConfig


class DamageLevel(str, enum.Enum):
    NONE = "None"
    SLIGHT = "Slight"
    MODERATE = "Moderate"
    EXTENSIVE = "Extensive"
    COMPLETE = "Complete"


class ObstacleLevel(str, enum.Enum):
    BIG = "Big"
    MEDIUM = "Medium"
    SMALL = "Small"


class SafeKind(str, enum.Enum):
    GREEN = "Green"
    SCHOOL = "School"
    CITY_EXIT = "CityExit"
    STREET_POINT = "StreetPoint"


DAMAGE_TO_OBSTACLE = {
    DamageLevel.COMPLETE: ObstacleLevel.BIG,
    DamageLevel.EXTENSIVE: ObstacleLevel.MEDIUM,
    DamageLevel.MODERATE: ObstacleLevel.SMALL,
}
DEFAULT_RADIUS_FACTORS = {ObstacleLevel.BIG: 1.5, ObstacleLevel.MEDIUM: 1.0, ObstacleLevel.SMALL: 0.5}
DEFAULT_CASUALTY_RATES = {
    DamageLevel.NONE: 0.0,
    DamageLevel.SLIGHT: 0.0,
    DamageLevel.MODERATE: 0.02,
    DamageLevel.EXTENSIVE: 0.1,
    DamageLevel.COMPLETE: 0.4,
}
DEFAULT_OCCUPANCY = 3.8


class DistrictError(ValueError):
    pass


@dataclass
class Building:
    id: int
    footprint: Polygon
    storeys: int
    apartments: int
    damage: DamageLevel | None = None
    occupants: int = 0
    # damage fixed by the input data instead of sampled
    given_damage: DamageLevel | None = None

    def __post_init__(self) -> None:
        if self.storeys < 1:
            raise DistrictError(f"building {self.id}: storeys must be >= 1")
        if self.apartments < 0:
            raise DistrictError(f"building {self.id}: apartments must be >= 0")


@dataclass(frozen=True)
class GreenSpace:
    id: int
    footprint: Polygon


@dataclass(frozen=True)
class SafePlace:
    id: int
    kind: SafeKind
    location: Point
    node: int


@dataclass(frozen=True)
class Quake:
    time: int = 0
    intensity: str = "M7"


@dataclass(frozen=True)
class Obstacle:
    id: int
    level: ObstacleLevel
    zone: Circle
    source_building: int


@dataclass
class District:
    """Raw district geometry as loaded or generated."""

    streets: list[Polyline]
    buildings: list[Building]
    green_spaces: list[GreenSpace] = field(default_factory=list)
    schools: list[Polygon] = field(default_factory=list)
    safe_points: list[Point] = field(default_factory=list)
    street_ids: list[str] | None = None
    snap_tolerance: float = DEFAULT_SNAP_TOLERANCE


@dataclass(frozen=True)
class ZoneSpan:
    """Part of an edge (arc-length interval) covered by an obstacle disc."""

    obstacle: int
    level: ObstacleLevel
    lo: float
    hi: float


class World:
    """Mutable district state owned by one simulation run."""

    def __init__(self, district: District) -> None:
        if not district.streets:
            raise DistrictError("district has no streets")
        self.district = district
        self.graph: StreetGraph = build_graph(district.streets, district.snap_tolerance)
        # copies, so runs sharing a district never see each other's damage
        self.buildings: list[Building] = [dataclasses.replace(b) for b in district.buildings]
        self.green_spaces: list[GreenSpace] = district.green_spaces
        self.quake = Quake()
        self.obstacles: list[Obstacle] = []
        self.agents: list[HumanAgent] = []
        self.cycle = 0
        self.building_node = [self.graph.nearest_node(b.footprint.centroid) for b in self.buildings]
        self.building_egress: list[GraphPosition] = [self.graph.project(b.footprint.centroid) for b in self.buildings]
        self.safe_places = self._safe_places(district)
        self.safe_kinds: dict[int, set[SafeKind]] = {}
        for sp in self.safe_places:
            self.safe_kinds.setdefault(sp.node, set()).add(sp.kind)
        self.sight_radius = 0.0
        self.edge_spans: list[list[ZoneSpan]] = [[] for _ in self.graph.edges]
        self.edge_sight: list[list[ZoneSpan]] = [[] for _ in self.graph.edges]
        # edges from which some big zone is within sight somewhere along them
        self.big_in_sight: list[bool] = [False] * len(self.graph.edges)
        self.blocks_by_obstacle: dict[int, list[int]] = {}
        self.obstacle_index = SpatialIndex(1.0)

    def _safe_places(self, district: District) -> list[SafePlace]:
        g = self.graph
        places: list[SafePlace] = []

        def add(kind: SafeKind, loc: Point, node: int) -> None:
            places.append(SafePlace(len(places), kind, loc, node))

        for gs in district.green_spaces:
            c = gs.footprint.centroid
            add(SafeKind.GREEN, c, g.nearest_node(c))
        for poly in district.schools:
            c = poly.centroid
            add(SafeKind.SCHOOL, c, g.nearest_node(c))
        for p in district.safe_points:
            add(SafeKind.STREET_POINT, p, g.nearest_node(p))
        for n in city_exit_nodes(g):
            add(SafeKind.CITY_EXIT, g.nodes[n].position, n)
        return places

    def point_of(self, pos: GraphPosition) -> Point:
        return pos.point(self.graph)

    def set_obstacles(self, obstacles: Sequence[Obstacle], sight_radius: float) -> set[int]:
        """Install the quake's obstacles and derive blocked streets and edge spans."""
        self.obstacles = list(obstacles)
        blocked = block_streets(self.obstacles, self.graph)
        for e in self.graph.edges:
            e.blocked = e.id in blocked
        self.blocks_by_obstacle = {
            o.id: [e.id for e in self.graph.edges if polyline_intersects_circle(e.geometry, o.zone)]
            for o in self.obstacles
            if o.level is ObstacleLevel.BIG
        }
        self.sight_radius = sight_radius
        largest = max((o.zone.radius for o in self.obstacles), default=1.0)
        self.obstacle_index = SpatialIndex(max(largest + sight_radius, 1.0))
        for o in self.obstacles:
            self.obstacle_index.insert(o.id, o.zone.bbox())
        self.edge_spans = [[] for _ in self.graph.edges]
        self.edge_sight = [[] for _ in self.graph.edges]
        self.big_in_sight = [False] * len(self.graph.edges)
        locator = self.graph._edge_locator()
        for o in self.obstacles:
            reach = o.zone.radius + sight_radius
            (cx, cy) = o.zone.center
            for eid in locator.candidates((cx - reach, cy - reach, cx + reach, cy + reach)):
                geom = self.graph.edges[eid].geometry
                for lo, hi in circle_spans_on_polyline(geom, o.zone.center, o.zone.radius):
                    self.edge_spans[eid].append(ZoneSpan(o.id, o.level, lo, hi))
                for lo, hi in circle_spans_on_polyline(geom, o.zone.center, reach):
                    self.edge_sight[eid].append(ZoneSpan(o.id, o.level, lo, hi))
                    if o.level is ObstacleLevel.BIG:
                        self.big_in_sight[eid] = True
        return blocked

    def obstacles_at(self, p: Point) -> list[Obstacle]:
        return [
            self.obstacles[i]
            for i in self.obstacle_index.candidates((p[0], p[1], p[0], p[1]))
            if self.obstacles[i].zone.contains(p)
        ]

    def is_safe_node(self, node: int) -> bool:
        return node in self.safe_kinds

    def is_city_exit(self, node: int) -> bool:
        return SafeKind.CITY_EXIT in self.safe_kinds.get(node, ())


def city_exit_nodes(graph: StreetGraph, tol: float = 1e-6) -> list[int]:
    """Nodes lying on the convex hull boundary of all node positions."""
    hull = convex_hull(n.position for n in graph.nodes)
    if len(hull) < 3:
        return [n.id for n in graph.nodes if any(distance(n.position, h) <= tol for h in hull)]
    segs = list(zip(hull, hull[1:] + hull[:1]))
    return [n.id for n in graph.nodes if any(point_segment_distance(n.position, a, b) <= tol for a, b in segs)]


def _validate_distribution(dist: Mapping[DamageLevel, float]) -> None:
    if any(p < 0 or not math.isfinite(p) for p in dist.values()):
        raise ValueError("damage probabilities must be finite and non-negative")
    total = math.fsum(dist.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"damage distribution sums to {total}, expected 1")


def assign_damage(building: Building, distribution: Mapping[DamageLevel, float], rng: random.Random) -> DamageLevel:
    """Draw a damage level from a categorical distribution, unless the input fixes it.

    One uniform draw is consumed per call either way, so fixed levels do not
    shift the stream for later buildings.
    """
    _validate_distribution(distribution)
    u = rng.random()
    if building.given_damage is not None:
        building.damage = building.given_damage
        return building.damage
    acc = 0.0
    chosen = None
    for level in DamageLevel:
        p = distribution.get(level, 0.0)
        if p <= 0.0:
            continue
        acc += p
        chosen = level
        if u < acc:
            break
    building.damage = chosen
    return chosen


def obstacle_from_building(
    building: Building,
    radius_factors: Mapping[ObstacleLevel, float] = DEFAULT_RADIUS_FACTORS,
    obstacle_id: int | None = None,
) -> Obstacle | None:
    if building.damage is None:
        raise ValueError(f"building {building.id} has no damage level yet")
    level = DAMAGE_TO_OBSTACLE.get(building.damage)
    if level is None:
        return None
    equivalent_radius = math.sqrt(building.footprint.area / math.pi)
    zone = Circle(building.footprint.centroid, radius_factors[level] * equivalent_radius)
    return Obstacle(building.id if obstacle_id is None else obstacle_id, level, zone, building.id)


def block_streets(obstacles: Iterable[Obstacle], graph: StreetGraph) -> set[int]:
    """Edges whose geometry touches a big obstacle; medium and small ones never block."""
    blocked: set[int] = set()
    big = [o for o in obstacles if o.level is ObstacleLevel.BIG]
    if not big:
        return blocked
    locator = graph._edge_locator()
    for o in big:
        for eid in locator.query(o.zone):
            if eid not in blocked and polyline_intersects_circle(graph.edges[eid].geometry, o.zone):
                blocked.add(eid)
    return blocked


def initial_casualties(
    agents: Sequence[HumanAgent],
    world: World,
    casualty_rates: Mapping[DamageLevel, float],
    rng: random.Random,
) -> int:
    """Apply quake deaths: anyone outdoors in a big zone, indoor agents by damage rate.

    Indoor agents draw one uniform each, in id order, whatever their building's rate.
    """
    from .agents import Status

    victims = 0
    for agent in agents:
        if agent.status is not Status.ALIVE:
            continue
        if agent.building is None:
            if any(o.level is ObstacleLevel.BIG for o in world.obstacles_at(agent.point(world))):
                agent.status = Status.DEAD
                victims += 1
            continue
        u = rng.random()
        damage = world.buildings[agent.building].damage or DamageLevel.NONE
        if u < casualty_rates.get(damage, 0.0):
            agent.status = Status.DEAD
            victims += 1
    return victims


def occupancy(apartments: int, per_apartment: float) -> int:
    return int(math.floor(apartments * per_apartment + 0.5))


def populate(world: World, config: ScenarioConfig, population_rng: random.Random, behaviour_rng: random.Random) -> list[HumanAgent]:
    """Create building occupants plus the configured street population.

    Each occupant is indoors with probability ``people_in_buildings`` percent,
    otherwise dropped uniformly (by length) on the street network.
    """
    from .agents import HumanAgent

    if not world.buildings and config.street_population == 0:
        raise DistrictError("empty district: no buildings and no street population")
    graph = world.graph
    cumulative = []
    acc = 0.0
    for e in graph.edges:
        acc += e.length
        cumulative.append(acc)

    def street_position() -> GraphPosition:
        r = population_rng.random() * acc
        lo, hi = 0, len(cumulative) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if cumulative[mid] > r:
                hi = mid
            else:
                lo = mid + 1
        e = graph.edges[lo]
        s = min(max(r - (cumulative[lo] - e.length), 0.0), e.length)
        return GraphPosition(e.id, e.u, e.v, s)

    weights = config.behaviour_weights()
    classes = list(range(1, 7))
    indoor_p = config.people_in_buildings / 100.0
    agents: list[HumanAgent] = []

    def spawn(building: int | None, pos: GraphPosition, home: int | None) -> None:
        behaviour = behaviour_rng.choices(classes, weights)[0]
        leader = behaviour_rng.random() < config.leader_fraction
        agents.append(
            HumanAgent.create(
                len(agents),
                pos,
                behaviour=behaviour,
                leader_candidate=leader and behaviour == 3,
                building=building,
                home=home,
                base_speed=config.base_speed,
                perception_radius=config.perception_radius,
                graph=graph,
            )
        )

    for b in world.buildings:
        b.occupants = occupancy(b.apartments, config.occupancy_per_apartment)
        for _ in range(b.occupants):
            if population_rng.random() < indoor_p:
                spawn(b.id, world.building_egress[b.id], b.id)
            else:
                spawn(None, street_position(), b.id)
    for _ in range(config.street_population):
        spawn(None, street_position(), None)
    return agents
