from __future__ import annotations

import math
import random
from typing import Sequence

from quake_evac.agents import HumanAgent, Role, Status, plan_route, set_role
from quake_evac.engine import MetricsFrame, SeededRng, Simulation
from quake_evac.geometry import Circle, Point, Polygon, Polyline
from quake_evac.network import GraphPosition, Router, build_graph
from quake_evac.scenario import ScenarioConfig, SyntheticParams, generate_synthetic
from quake_evac.world import Building, District, Obstacle, ObstacleLevel, World


def line(*pts: tuple[float, float]) -> Polyline:
    return Polyline(tuple(Point(*p) for p in pts))


def square(x0: float, y0: float, side: float) -> Polygon:
    return Polygon(((x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)))


def grid_streets(n: int, spacing: float = 100.0) -> list[Polyline]:
    """(n+1) x (n+1) node grid, horizontal streets first."""
    streets = []
    for j in range(n + 1):
        for i in range(n):
            streets.append(line((i * spacing, j * spacing), ((i + 1) * spacing, j * spacing)))
    for i in range(n + 1):
        for j in range(n):
            streets.append(line((i * spacing, j * spacing), (i * spacing, (j + 1) * spacing)))
    return streets


def config(**overrides) -> ScenarioConfig:
    """Quiet defaults for hand-built fixtures: no damage, nobody dies, nobody indoors."""
    base = dict(
        damage_none=1.0, damage_slight=0.0, damage_moderate=0.0, damage_extensive=0.0, damage_complete=0.0,
        people_in_buildings=0.0,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def world_with(streets: Sequence[Polyline], obstacles: Sequence[Obstacle] = (), radius: float = 20.0,
               buildings: Sequence[Building] = (), **district) -> World:
    world = World(District(list(streets), list(buildings), **district))
    world.set_obstacles(list(obstacles), radius)
    return world


def big(oid: int, center: tuple[float, float], radius: float, level: ObstacleLevel = ObstacleLevel.BIG) -> Obstacle:
    return Obstacle(oid, level, Circle(Point(*center), radius), source_building=-1)


def agent_at(world: World, edge: int, origin: int, offset: float, *, agent_id: int = 0, behaviour: int = 3,
             speed: float = 1.3, radius: float = 20.0) -> HumanAgent:
    e = world.graph.edges[edge]
    heading = e.other(origin)
    a = HumanAgent.create(agent_id, GraphPosition(edge, origin, heading, offset), behaviour=behaviour,
                          graph=world.graph, base_speed=speed, perception_radius=radius)
    a.trace = []
    return a


def install(world: World, agents: list[HumanAgent], cfg: ScenarioConfig, seed: int = 0) -> Simulation:
    """A simulation over hand-placed agents whose roles and routes are already set."""
    sim = Simulation(world, agents, cfg, SeededRng(seed))
    sim.activate()
    return sim


def assert_conserved(frame: MetricsFrame, population: int) -> None:
    assert frame.partition_total == population, frame


# busy mix for property tests: every behaviour class, plenty of leaders, heavy damage
BUSY = dict(
    p1=0.2, p2=0.1, p3=0.3, p4=0.1, p5=0.1, p6=0.2, leader_fraction=0.3, people_in_buildings=50.0,
    damage_none=0.3, damage_slight=0.2, damage_moderate=0.2, damage_extensive=0.15, damage_complete=0.15,
    max_cycles=400,
)


def random_sim(seed: int, blocks: int = 3, **overrides) -> Simulation:
    """Traced simulation on a small synthetic district, ready to run."""
    district = generate_synthetic(SyntheticParams(blocks=blocks, street_spacing=60.0, seed=seed))
    return Simulation.initialize(district, ScenarioConfig(**{**BUSY, **overrides}), seed, trace=True)


def random_integer_graph(rng: random.Random, max_nodes: int = 12):
    """Random street graph whose edge lengths are integers.

    Streets are L-shaped axis-aligned polylines between distinct integer
    points, so every path sum is exact in floating point.
    """
    n = rng.randint(2, max_nodes)
    pts = rng.sample([(x, y) for x in range(0, 200, 10) for y in range(0, 200, 10)], n)
    streets = []
    pairs = set()
    for _ in range(rng.randint(1, 3 * n)):
        a, b = rng.sample(range(n), 2)
        if (min(a, b), max(a, b)) in pairs:
            continue
        pairs.add((min(a, b), max(a, b)))
        (x0, y0), (x1, y1) = pts[a], pts[b]
        # streets join only at their endpoints, so crossings elsewhere are harmless
        chain = [pts[a], pts[b]] if x0 == x1 or y0 == y1 else [pts[a], (x1, y0), pts[b]]
        streets.append(Polyline(tuple(Point(*p) for p in chain)))
    return build_graph(streets), n


def floyd_warshall(graph, overlay):
    n = len(graph.nodes)
    d = [[math.inf] * n for _ in range(n)]
    for i in range(n):
        d[i][i] = 0.0
    for e in graph.edges:
        w = overlay.weight(e.id)
        if w < d[e.u][e.v]:
            d[e.u][e.v] = d[e.v][e.u] = w
    for k in range(n):
        for i in range(n):
            dik = d[i][k]
            if dik == math.inf:
                continue
            for j in range(n):
                if dik + d[k][j] < d[i][j]:
                    d[i][j] = dik + d[k][j]
    return d


def mover(world: World, agent: HumanAgent, target: int) -> HumanAgent:
    """Plan the agent's route to ``target`` and make it a mover."""
    assert plan_route(agent, target, world, Router(world.graph))
    set_role(agent, Role.MOVER)
    return agent


def backtrack_fixture(seed: int = 0):
    """Agent on a 3x3 grid walking east from node 0, a big zone ahead on its own street.

    The seed varies where the agent starts and where the zone sits.
    """
    rng = random.Random(seed)
    start, centre = rng.uniform(5.0, 40.0), rng.uniform(70.0, 90.0)
    w = world_with(grid_streets(2), [big(0, (centre, 0), 5)])
    a = mover(w, agent_at(w, 0, 0, start), 2)
    return w, a, install(w, [a], config(), seed)


def dead_end_fixture(threshold: int = 3, keep_running: bool = False):
    """The only way to the target runs through a big zone.

    With ``keep_running`` a slow walker on a separate street keeps the run
    going long after the first agent has given up.
    """
    streets = [line((0, 0), (100, 0)), line((100, 0), (200, 0))]
    if keep_running:
        streets.append(line((0, 500), (300, 500)))
    w = world_with(streets, [big(0, (160, 0), 5)])
    a = mover(w, agent_at(w, 0, 0, 50), 2)
    agents = [a]
    if keep_running:
        agents.append(mover(w, agent_at(w, 2, 3, 0, agent_id=1, speed=1.0), 4))
    return w, a, install(w, agents, config(give_up_threshold=threshold))
