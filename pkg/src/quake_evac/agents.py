"""Human agents: target choice, movement, perception, obstacles and imitation.

An agent on the street sits on one edge, ``offset`` meters past ``origin``
and walking towards ``heading``. Its remaining plan is a queue of
``(edge, next node)`` steps to take once ``heading`` is reached. Agents
inside a building stand at the footprint centroid until they start to move,
at which point they step out onto the building's nearest street point.
"""

from __future__ import annotations

import enum
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

from .geometry import Circle, Point, distance, polyline_intersects_circle
from .network import BLOCKED_WEIGHT, BeliefOverlay, GraphPosition, Router, StreetGraph, descend
from .world import ObstacleLevel, SafeKind, World

if TYPE_CHECKING:
    from .scenario import ScenarioConfig

EPS = 1e-9
# safe-place kinds every resident knows; leaders know all of them
COMMON_SAFE_KINDS = frozenset({SafeKind.GREEN, SafeKind.CITY_EXIT})


class Role(str, enum.Enum):
    STAYER = "Stayer"
    MOVER = "Mover"
    SEEKER = "Seeker"
    FOLLOWER = "Follower"
    WANDERER = "Wanderer"


class Status(str, enum.Enum):
    ALIVE = "Alive"
    DEAD = "Dead"
    ARRIVED = "Arrived"
    GAVE_UP = "GaveUp"


MOVING_ROLES = frozenset({Role.MOVER, Role.FOLLOWER, Role.WANDERER})


@dataclass(eq=False)
class HumanAgent:
    id: int
    behaviour: int
    edge: int
    origin: int
    heading: int
    offset: float
    edge_length: float
    belief: BeliefOverlay
    base_speed: float
    perception_radius: float
    building: int | None = None
    home: int | None = None
    leader_candidate: bool = False
    role: Role | None = None
    is_leader: bool = False
    leader_id: int | None = None
    status: Status = Status.ALIVE
    target: int | None = None
    path: deque = field(default_factory=deque)
    plan_cost: float = 0.0
    last_node: int = -1
    speed_cap: float = 0.0
    effective_speed: float = 0.0
    encounter_count: int = 0
    exposed_seconds: int = 0
    exposed_now: bool = False
    backtracking: bool = False
    needs_replan: bool = False
    seek_cycles: int = 0
    lost_cycles: int = 0
    arrival_node: int | None = None
    trace: list | None = None

    @classmethod
    def create(
        cls,
        agent_id: int,
        pos: GraphPosition,
        *,
        behaviour: int,
        graph: StreetGraph,
        base_speed: float = 1.3,
        perception_radius: float = 20.0,
        building: int | None = None,
        home: int | None = None,
        leader_candidate: bool = False,
    ) -> HumanAgent:
        if behaviour not in range(1, 7):
            raise ValueError(f"behaviour class must be 1..6, got {behaviour}")
        length = graph.edges[pos.edge].length
        agent = cls(
            id=agent_id,
            behaviour=behaviour,
            edge=pos.edge,
            origin=pos.origin,
            heading=pos.heading,
            offset=pos.offset,
            edge_length=length,
            belief=BeliefOverlay(graph),
            base_speed=base_speed,
            perception_radius=perception_radius,
            building=building,
            home=home,
            leader_candidate=leader_candidate,
        )
        agent.speed_cap = agent.effective_speed = base_speed
        agent.last_node = pos.origin if pos.offset <= length / 2.0 else pos.heading
        return agent

    @property
    def position(self) -> GraphPosition:
        return GraphPosition(self.edge, self.origin, self.heading, self.offset)

    @property
    def indoors(self) -> bool:
        return self.building is not None

    @property
    def at_node(self) -> bool:
        return self.offset >= self.edge_length - EPS

    def arc_length(self, graph: StreetGraph) -> float:
        return self.offset if self.origin == graph.edges[self.edge].u else self.edge_length - self.offset

    def point(self, world: World) -> Point:
        if self.building is not None:
            return world.buildings[self.building].footprint.centroid
        return world.graph.edges[self.edge].geometry.point_at(self.arc_length(world.graph))

    def log(self, cycle: int, kind: str, *data) -> None:
        if self.trace is not None:
            self.trace.append((cycle, kind, *data))


@dataclass(frozen=True)
class Percept:
    obstacles: tuple[int, ...] = ()
    leaders: tuple[int, ...] = ()
    blocked_edges: tuple[int, ...] = ()

    @property
    def empty(self) -> bool:
        return not (self.obstacles or self.leaders or self.blocked_edges)


@dataclass(frozen=True)
class LeaderView:
    id: int
    point: Point
    last_node: int
    status: Status
    arrival_node: int | None
    moving: bool


class LeaderBoard:
    """Leader positions published at the start of a cycle.

    Every read of another agent during the cycle goes through this snapshot.
    Moving leaders are bucketed in a square grid one perception radius wide.
    """

    def __init__(
        self,
        leaders: Iterable[HumanAgent],
        world: World,
        cell_size: float,
        settled: dict[int, LeaderView] | None = None,
    ) -> None:
        # views of leaders that can no longer change may be passed in ready-made
        self.views: dict[int, LeaderView] = dict(settled) if settled else {}
        self.cell = max(cell_size, 1.0)
        self.grid: dict[tuple[int, int], list[LeaderView]] = {}
        # cells from which some moving leader may be within one cell width
        self.hot: set[tuple[int, int]] = set()
        for a in leaders:
            if a.id in self.views:
                continue
            moving = a.status is Status.ALIVE and a.role is Role.MOVER
            view = LeaderView(a.id, a.point(world), a.last_node, a.status, a.arrival_node, moving)
            self.views[a.id] = view
            if moving:
                i, j = math.floor(view.point[0] / self.cell), math.floor(view.point[1] / self.cell)
                self.grid.setdefault((i, j), []).append(view)
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        self.hot.add((i + di, j + dj))

    @property
    def any_moving(self) -> bool:
        return bool(self.grid)

    def visible(self, p: Point, radius: float, exclude: int) -> tuple[int, ...]:
        c = self.cell
        x, y = p
        if radius <= c and (math.floor(x / c), math.floor(y / c)) not in self.hot:
            return ()
        r2 = radius * radius
        hits = []
        for i in range(math.floor((x - radius) / c), math.floor((x + radius) / c) + 1):
            for j in range(math.floor((y - radius) / c), math.floor((y + radius) / c) + 1):
                for v in self.grid.get((i, j), ()):
                    dx, dy = v.point[0] - x, v.point[1] - y
                    if v.id != exclude and dx * dx + dy * dy <= r2:
                        hits.append(v.id)
        hits.sort()
        return tuple(hits)


def _in_spans(spans, s: float, levels) -> bool:
    for sp in spans:
        if sp.level in levels and sp.lo <= s <= sp.hi:
            return True
    return False


_EXPOSING = (ObstacleLevel.MEDIUM, ObstacleLevel.SMALL)
_SLOWING = (ObstacleLevel.MEDIUM,)


def slowdown(agent: HumanAgent, world: World, factor: float) -> float:
    if agent.building is not None:
        return 1.0
    spans = world.edge_spans[agent.edge]
    if spans and _in_spans(spans, agent.arc_length(world.graph), _SLOWING):
        return factor
    return 1.0


def perceive(
    agent: HumanAgent,
    world: World,
    board: LeaderBoard | None = None,
    want_leaders: bool = True,
    skip: frozenset[int] | set[int] = frozenset(),
) -> Percept:
    """Obstacles and leaders within the perception circle, plus the blocked streets seen.

    Edges in ``skip`` are left out of ``blocked_edges``; the scheduler passes
    what the agent already knows, to save the geometry tests.
    """
    radius = agent.perception_radius
    graph = world.graph
    if agent.building is None and radius == world.sight_radius:
        s = agent.arc_length(graph)
        visible = sorted({sp.obstacle for sp in world.edge_sight[agent.edge] if sp.lo <= s <= sp.hi})
        p = None
    else:
        p = agent.point(world)
        visible = [
            oid
            for oid in world.obstacle_index.query(Circle(p, radius))
            if distance(world.obstacles[oid].zone.center, p) <= world.obstacles[oid].zone.radius + radius
        ]
    blocked: set[int] = set()
    if visible:
        for oid in visible:
            edges = world.blocks_by_obstacle.get(oid)
            if not edges:
                continue
            if p is None:
                p = agent.point(world)
            sight = Circle(p, radius)
            for eid in edges:
                if eid not in blocked and eid not in skip and (
                    (eid == agent.edge and agent.building is None)
                    or polyline_intersects_circle(graph.edges[eid].geometry, sight)
                ):
                    blocked.add(eid)
    leaders: tuple[int, ...] = ()
    if want_leaders and board is not None and board.grid:
        if p is None:
            p = agent.point(world)
        leaders = board.visible(p, radius, agent.id)
    return Percept(tuple(visible), leaders, tuple(sorted(blocked)))


# -- routing ---------------------------------------------------------------


def _partial_penalty(agent: HumanAgent, world: World, forward: bool) -> float:
    """Extra weight for walking the rest of the current edge in one direction.

    Only applies when the agent knows the edge is blocked and a big zone lies
    on the portion it would walk.
    """
    if agent.edge not in agent.belief.blocked:
        return 0.0
    e = world.graph.edges[agent.edge]
    s = agent.arc_length(world.graph)
    toward_v = (agent.heading == e.v) == forward
    for sp in world.edge_spans[agent.edge]:
        if sp.level is not ObstacleLevel.BIG:
            continue
        if (toward_v and sp.hi >= s) or (not toward_v and sp.lo <= s):
            return BLOCKED_WEIGHT
    return 0.0


def _reverse(agent: HumanAgent) -> None:
    agent.origin, agent.heading = agent.heading, agent.origin
    agent.offset = max(agent.edge_length - agent.offset, 0.0)


def step_out(agent: HumanAgent, world: World, cycle: int = 0) -> None:
    """Leave the building for its nearest street point."""
    if agent.building is None:
        return
    pos = world.building_egress[agent.building]
    agent.building = None
    agent.edge, agent.origin, agent.heading, agent.offset = pos.edge, pos.origin, pos.heading, pos.offset
    agent.edge_length = world.graph.edges[pos.edge].length
    agent.last_node = pos.origin if pos.offset <= agent.edge_length / 2.0 else pos.heading
    agent.log(cycle, "egress", pos.edge)


def plan_route(agent: HumanAgent, target: int, world: World, router: Router, cycle: int = 0) -> bool:
    """Shortest route from the agent's current spot to ``target`` under its own beliefs.

    Either end of the current edge may start the route; equal costs go to the
    smaller node id. Returns False when the target is unreachable.
    """
    step_out(agent, world, cycle)
    belief = agent.belief
    fwd_node, back_node = agent.heading, agent.origin
    dist = router.field(belief, target, (fwd_node, back_node))
    options = []
    for forward, node, partial in (
        (True, fwd_node, agent.edge_length - agent.offset),
        (False, back_node, agent.offset),
    ):
        if dist[node] == float("inf"):
            continue
        cost = partial + _partial_penalty(agent, world, forward) + dist[node]
        options.append((cost, node, forward))
    agent.target = target
    agent.path.clear()
    if not options:
        agent.plan_cost = float("inf")
        agent.log(cycle, "plan", target, agent.edge, None, (), float("inf"), frozenset(belief.blocked))
        return False
    cost, node, forward = min(options)
    if not forward:
        _reverse(agent)
    route = descend(world.graph, belief, dist, node)
    agent.path.extend(zip(route.edges, route.nodes[1:]))
    agent.plan_cost = cost
    agent.log(cycle, "plan", target, agent.edge, node, route.edges, cost, frozenset(belief.blocked))
    return True


def _component_nodes(world: World) -> dict[int, list[int]]:
    cache = getattr(world, "_component_nodes", None)
    if cache is None:
        cache = {}
        for n, lab in enumerate(world.graph.components()):
            cache.setdefault(lab, []).append(n)
        world._component_nodes = cache
    return cache


def random_target(agent: HumanAgent, world: World, rng: random.Random) -> int:
    """Uniform node within the agent's own street component."""
    lab = world.graph.components()[agent.heading]
    return rng.choice(_component_nodes(world)[lab])


def _random_building_node(agent: HumanAgent, world: World, rng: random.Random) -> int | None:
    cache = getattr(world, "_building_nodes", None)
    if cache is None:
        comps = world.graph.components()
        cache = {}
        for n in world.building_node:
            cache.setdefault(comps[n], []).append(n)
        world._building_nodes = cache
    nodes = cache.get(world.graph.components()[agent.heading])
    return rng.choice(nodes) if nodes else None


def nearest_safe_target(agent: HumanAgent, world: World, router: Router) -> int | None:
    kinds = set(SafeKind) if agent.is_leader else COMMON_SAFE_KINDS
    sources = [sp.node for sp in world.safe_places if sp.kind in kinds]
    if not sources:
        return None
    dist, label = router.nearest_field(agent.belief, sources)
    best = None
    for forward, node, partial in (
        (True, agent.heading, agent.edge_length - agent.offset),
        (False, agent.origin, agent.offset),
    ):
        if dist[node] == float("inf"):
            continue
        key = (partial + _partial_penalty(agent, world, forward) + dist[node], label[node])
        if best is None or key < best:
            best = key
    return None if best is None else best[1]


def set_role(agent: HumanAgent, role: Role, cycle: int = 0) -> None:
    if agent.role is not role:
        agent.role = role
        agent.log(cycle, "role", role.value)


def decide_target(agent: HumanAgent, world: World, router: Router, rng: random.Random, cycle: int = 0) -> None:
    """Map the behaviour class to a role and, for movers, a target and route."""
    b = agent.behaviour
    if b in (2, 5):
        set_role(agent, Role.STAYER, cycle)
        agent.target = None
        return
    if b == 6:
        set_role(agent, Role.SEEKER, cycle)
        agent.target = None
        return
    step_out(agent, world, cycle)
    if b == 1:
        target = random_target(agent, world, rng)
    elif b == 3:
        agent.is_leader = agent.leader_candidate
        target = nearest_safe_target(agent, world, router)
    else:
        target = _random_building_node(agent, world, rng)
    if target is None or not plan_route(agent, target, world, router, cycle):
        agent.is_leader = False
        agent.target = None
        set_role(agent, Role.STAYER, cycle)
        return
    set_role(agent, Role.MOVER, cycle)


# -- movement --------------------------------------------------------------


def _arrive(agent: HumanAgent, node: int, cycle: int) -> None:
    agent.status = Status.ARRIVED
    agent.arrival_node = node
    agent.path.clear()
    agent.log(cycle, "arrive", node)


def step_move(agent: HumanAgent, world: World, cycle: int, slowdown_factor: float = 0.5, board: LeaderBoard | None = None) -> None:
    """Advance one second along the plan, crossing intersections as needed.

    Speed is the agent's cap times the slowdown at its starting spot. Any
    overshoot past the final node is dropped.
    """
    if agent.role not in MOVING_ROLES or agent.status is not Status.ALIVE:
        raise RuntimeError(f"agent {agent.id} is not a moving agent")
    if agent.target is None:
        raise RuntimeError(f"agent {agent.id} has no route")
    slow = slowdown(agent, world, slowdown_factor) if world.edge_spans[agent.edge] else 1.0
    agent.effective_speed = agent.speed_cap * slow
    remaining = agent.effective_speed
    edges = world.graph.edges
    while True:
        gap = agent.edge_length - agent.offset
        if remaining < gap - EPS:
            agent.offset += remaining
            return
        remaining = max(remaining - gap, 0.0)
        agent.offset = agent.edge_length
        node = agent.heading
        if agent.last_node != node or agent.backtracking:
            agent.log(cycle, "visit", node)
        agent.last_node = node
        if agent.backtracking:
            agent.backtracking = False
            agent.needs_replan = True
            return
        if not agent.path:
            if node == agent.target and _may_arrive(agent, node, board):
                _arrive(agent, node, cycle)
            return
        edge, nxt = agent.path.popleft()
        agent.edge, agent.origin, agent.heading, agent.offset = edge, node, nxt, 0.0
        agent.edge_length = edges[edge].length
        agent.log(cycle, "enter", edge, edge in agent.belief.blocked, agent.plan_cost)
        if remaining <= EPS:
            return


def _may_arrive(agent: HumanAgent, node: int, board: LeaderBoard | None) -> bool:
    if agent.role is not Role.FOLLOWER:
        return True
    # followers only settle where their leader has already arrived
    view = board.views.get(agent.leader_id) if board is not None else None
    return view is not None and view.status is Status.ARRIVED and view.arrival_node == node


def give_up(agent: HumanAgent, cycle: int) -> None:
    agent.status = Status.GAVE_UP
    agent.path.clear()
    agent.backtracking = False
    set_role(agent, Role.STAYER, cycle)
    agent.log(cycle, "give_up", agent.encounter_count)


# -- obstacles -------------------------------------------------------------


def obstacle_ahead(agent: HumanAgent, percept: Percept, world: World) -> bool:
    """A visible big zone lies on the stretch of the current edge still to walk."""
    if agent.building is not None or agent.at_node or not percept.obstacles:
        return False
    spans = world.edge_spans[agent.edge]
    if not spans:
        return False
    e = world.graph.edges[agent.edge]
    s = agent.arc_length(world.graph)
    seen = set(percept.obstacles)
    toward_v = agent.heading == e.v
    for sp in spans:
        if sp.level is ObstacleLevel.BIG and sp.obstacle in seen:
            if (toward_v and sp.hi >= s) or (not toward_v and sp.lo <= s):
                return True
    return False


def handle_obstacle_ahead(
    agent: HumanAgent,
    percept: Percept,
    world: World,
    router: Router,
    config: ScenarioConfig,
    cycle: int = 0,
) -> str | None:
    """Update street knowledge from a percept and react to blocked streets.

    Returns what happened: ``"ahead"`` when the agent turns back towards the
    intersection it came from, ``"gave_up"`` when that was one encounter too
    many, ``"replanned"`` for a blocked street seen elsewhere on its route,
    ``"marked"`` when only its knowledge changed, or None.
    """
    belief = agent.belief.blocked
    new = [e for e in percept.blocked_edges if e not in belief]
    belief.update(new)
    if new:
        agent.log(cycle, "mark", tuple(new))
    if agent.role not in MOVING_ROLES or agent.status is not Status.ALIVE or agent.building is not None:
        return "marked" if new else None
    if not agent.backtracking and obstacle_ahead(agent, percept, world):
        agent.encounter_count = min(agent.encounter_count + 1, config.give_up_threshold)
        agent.log(cycle, "encounter", agent.edge, agent.encounter_count)
        if agent.encounter_count >= config.give_up_threshold and agent.role is not Role.FOLLOWER:
            give_up(agent, cycle)
            return "gave_up"
        _reverse(agent)
        agent.path.clear()
        agent.backtracking = True
        return "ahead"
    if new and not agent.backtracking and agent.target is not None:
        fresh = set(new)
        if any(e in fresh for e, _ in agent.path):
            plan_route(agent, agent.target, world, router, cycle)
            return "replanned"
    return "marked" if new else None


def after_backtrack(
    agent: HumanAgent, world: World, router: Router, rng: random.Random, cycle: int
) -> None:
    """Choose how to carry on once back at the previous intersection."""
    agent.needs_replan = False
    if agent.role is Role.WANDERER:
        plan_route(agent, random_target(agent, world, rng), world, router, cycle)
    elif agent.role is Role.FOLLOWER:
        become_seeker(agent, cycle)
    elif agent.target is not None:
        if not plan_route(agent, agent.target, world, router, cycle):
            give_up(agent, cycle)


# -- imitation -------------------------------------------------------------


def become_seeker(agent: HumanAgent, cycle: int) -> None:
    agent.leader_id = None
    agent.target = None
    agent.path.clear()
    agent.backtracking = False
    agent.seek_cycles = 0
    agent.lost_cycles = 0
    set_role(agent, Role.SEEKER, cycle)


def seek_and_follow(
    agent: HumanAgent,
    percept: Percept,
    board: LeaderBoard,
    world: World,
    router: Router,
    config: ScenarioConfig,
    imitation_rng: random.Random,
    target_rng: random.Random,
    cycle: int = 0,
) -> None:
    role = agent.role
    if role in (Role.SEEKER, Role.WANDERER):
        if agent.backtracking:
            return
        if percept.leaders:
            leader = imitation_rng.choice(sorted(percept.leaders))
            view = board.views[leader]
            agent.leader_id = leader
            agent.lost_cycles = 0
            set_role(agent, Role.FOLLOWER, cycle)
            plan_route(agent, view.last_node, world, router, cycle)
            return
        if role is Role.SEEKER:
            agent.seek_cycles += 1
            if agent.seek_cycles >= config.seeker_patience:
                step_out(agent, world, cycle)
                set_role(agent, Role.WANDERER, cycle)
                plan_route(agent, random_target(agent, world, target_rng), world, router, cycle)
        return
    if role is not Role.FOLLOWER:
        return
    view = board.views.get(agent.leader_id)
    if view is None or view.status in (Status.DEAD, Status.GAVE_UP):
        become_seeker(agent, cycle)
        return
    if view.status is Status.ARRIVED:
        if agent.target != view.arrival_node and not agent.backtracking:
            plan_route(agent, view.arrival_node, world, router, cycle)
        return
    if distance(agent.point(world), view.point) <= agent.perception_radius:
        agent.lost_cycles = 0
    else:
        agent.lost_cycles += 1
        if agent.lost_cycles >= config.follower_loss_cycles:
            become_seeker(agent, cycle)
            return
    if view.last_node != agent.target and not agent.backtracking:
        plan_route(agent, view.last_node, world, router, cycle)


def leader_adjust_speed(leader: HumanAgent, followers: Sequence[HumanAgent], slow: float = 1.0) -> float:
    """Cap the leader at its slowest current follower; ``slow`` is its own spot's slowdown."""
    cap = leader.base_speed
    for f in followers:
        if f.effective_speed < cap:
            cap = f.effective_speed
    leader.speed_cap = cap
    leader.effective_speed = cap * slow
    return leader.effective_speed


def is_exposed(agent: HumanAgent, world: World) -> bool:
    """Standing inside a medium or small zone right now."""
    if agent.status not in (Status.ALIVE, Status.GAVE_UP):
        return False
    if agent.building is not None:
        return any(o.level in _EXPOSING for o in world.obstacles_at(agent.point(world)))
    spans = world.edge_spans[agent.edge]
    return bool(spans) and _in_spans(spans, agent.arc_length(world.graph), _EXPOSING)


def accrue_exposure(agent: HumanAgent, world: World) -> bool:
    exposed = agent.exposed_now = is_exposed(agent, world)
    if exposed:
        agent.exposed_seconds += 1
    return exposed
