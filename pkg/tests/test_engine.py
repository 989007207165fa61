from __future__ import annotations

import csv
import io
import math

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from helpers import agent_at, big, config, grid_streets, install, line, random_sim, square, world_with
from quake_evac.agents import Role, Status, plan_route, set_role
from quake_evac.engine import FRAME_COLUMNS, RNG_STREAMS, SeededRng, Simulation, SimulationError, run
from quake_evac.network import Router
from quake_evac.scenario import ScenarioConfig, SyntheticParams, generate_synthetic
from quake_evac.world import Building, District, ObstacleLevel


def walker(world, edge, offset, target, *, role=Role.MOVER, agent_id=0, speed=1.3, leader=False):
    a = agent_at(world, edge, world.graph.edges[edge].u, offset, agent_id=agent_id, speed=speed)
    assert plan_route(a, target, world, Router(world.graph))
    set_role(a, role)
    a.is_leader = leader
    return a


def stayer(world, edge, offset, agent_id):
    a = agent_at(world, edge, world.graph.edges[edge].u, offset, agent_id=agent_id, behaviour=2)
    set_role(a, Role.STAYER)
    return a


def small_district(**kw) -> District:
    return generate_synthetic(SyntheticParams(blocks=2, street_spacing=60.0, **kw))


# -- rng -------------------------------------------------------------------


def test_streams_are_independent_of_each_other():
    a, b = SeededRng(42), SeededRng(42)
    for _ in range(1000):
        a.stream("population").random()
    assert [a.stream("damage").random() for _ in range(5)] == [b.stream("damage").random() for _ in range(5)]
    assert a.stream("damage") is a.stream("damage")


def test_streams_differ_by_name_and_seed():
    first = {name: SeededRng(1).stream(name).random() for name in RNG_STREAMS}
    assert len(set(first.values())) == len(RNG_STREAMS)
    assert SeededRng(2).stream("damage").random() != first["damage"]


@pytest.mark.parametrize("seed", [-1, 2**64, 1.5, True])
def test_seed_range(seed):
    with pytest.raises(ValueError):
        SeededRng(seed)


# -- initialization --------------------------------------------------------


def test_undamaged_district_has_no_obstacles_or_deaths():
    sim = Simulation.initialize(small_district(), config(people_in_buildings=50.0), 3)
    assert sim.world.obstacles == [] and sim.victims == 0
    assert all(a.status is Status.ALIVE for a in sim.agents)
    assert sim.cycle == 0


def test_everyone_dead_terminates_at_cycle_zero():
    cfg = config(damage_none=0.0, damage_complete=1.0, people_in_buildings=100.0, casualty_complete=1.0)
    result = run(small_district(), cfg, 5)
    assert result.cycles == 0 and result.frames == []
    assert result.termination_reason == "settled"
    assert result.victims == result.population > 0
    assert all(a.final_status is Status.DEAD for a in result.per_agent)
    assert result.histogram == [] and result.histogram_document()["total"] == 0


def test_initialize_labels_failing_phase():
    empty = District(grid_streets(1), [])
    with pytest.raises(SimulationError, match="^populate: ") as info:
        Simulation.initialize(empty, config(), 0)
    assert info.value.phase == "populate"


def test_initialize_decides_every_survivor():
    sim = Simulation.initialize(small_district(), ScenarioConfig(max_cycles=5), 9)
    for a in sim.agents:
        assert (a.role is None) == (a.status is Status.DEAD)
        if a.role in (Role.MOVER,):
            assert a.target is not None


# -- stepping and termination ----------------------------------------------


def test_single_mover_arrives_at_cycle_77():
    w = world_with([line((0, 0), (100, 0))])
    a = walker(w, 0, 0.0, 1)
    result = install(w, [a], config()).run()
    assert a.status is Status.ARRIVED
    assert [t[0] for t in a.trace if t[1] == "arrive"] == [math.ceil(100 / 1.3)] == [77]
    assert result.cycles == 77 and result.termination_reason == "settled"


def test_leader_walking_13m_terminates_at_cycle_10():
    w = world_with([line((0, 0), (13, 0))])
    a = walker(w, 0, 0.0, 1, leader=True)
    result = install(w, [a], config()).run()
    assert result.cycles == 10 and result.termination_reason == "settled"
    assert result.frames[-1].leaders == 0 and result.frames[0].leaders == 1


def test_only_stayers_terminate_at_cycle_one():
    w = world_with(grid_streets(2))
    agents = [stayer(w, i, 10.0, i) for i in range(5)]
    result = install(w, agents, config()).run()
    assert result.cycles == 1 and result.termination_reason == "settled"
    assert result.frames[0].staying == 5


def test_stayer_frames_identical_but_for_cycle():
    w = world_with([line((0, 0), (5000, 0))])
    agents = [walker(w, 0, 0.0, 1, speed=1.0), stayer(w, 0, 10.0, 1)]
    result = install(w, agents, config(max_cycles=30)).run()
    assert len({(f.staying, f.moving, f.dead) for f in result.frames}) == 1


def test_perpetual_walker_hits_max_cycles():
    w = world_with([line((0, 0), (100, 0))])
    a = walker(w, 0, 0.0, 1, role=Role.WANDERER, speed=0.01)
    result = install(w, [a], config()).run()
    assert result.cycles == 3600 and result.termination_reason == "max_cycles"
    assert a.status is Status.ALIVE


def test_each_step_appends_one_frame_and_hooks_run_in_order():
    sim = random_sim(1)
    phases = []
    for expected in range(1, 13):
        frame = sim.step(lambda phase, s: phases.append((s.cycle, phase)))
        assert frame.cycle == expected == sim.cycle == len(sim.frames)
    assert [p for c, p in phases if c == 0] == ["snapshot", "perceive", "move"]
    # the frame hook sees the advanced counter
    assert [p for c, p in phases if c == 9] == ["frame", "snapshot", "perceive", "adjust_speed", "move"]
    assert phases[-1] == (12, "frame")


# -- results ---------------------------------------------------------------


def test_stationary_exposure_fills_longest_bucket():
    # everyone indoors in one house with a small zone on it; nobody moves
    house = Building(0, square(40, 5, 10), 2, 10)
    cfg = config(p1=0, p2=1.0, p3=0, p4=0, p5=0, p6=0, people_in_buildings=100.0, damage_none=0.0,
                 damage_moderate=1.0, casualty_moderate=0.0, histogram_bucket_seconds=1)
    result = run(District([line((0, 0), (100, 0))], [house]), cfg, 0)
    assert result.cycles == 1
    assert result.histogram == [0, 38]
    # same house, kept running by a slow walker on a separate street
    w = world_with([line((0, 0), (100, 0)), line((0, 50), (100, 50))], [big(0, (45, 0), 5, ObstacleLevel.SMALL)])
    agents = [stayer(w, 0, 45.0, i) for i in range(3)] + [walker(w, 1, 0.0, 3, agent_id=3, speed=0.5)]
    result = install(w, agents, config(histogram_bucket_seconds=60)).run()
    assert result.cycles == 200
    assert result.histogram == [1, 0, 0, 3]


def test_histogram_counts_living_at_start():
    sim = random_sim(6)
    result = sim.run()
    living = sum(1 for a in result.per_agent if a.final_status is not Status.DEAD)
    assert sum(result.histogram) == living == len(sim.living_at_start)
    assert len(result.histogram) == result.cycles // result.bucket_seconds + 1
    doc = result.histogram_document()
    assert doc["total"] == living
    assert doc["buckets"][0] == {"fromSeconds": 0, "toSeconds": 60, "count": result.histogram[0]}


def test_frames_csv_layout():
    result = random_sim(2).run()
    rows = list(csv.reader(io.StringIO(result.frames_csv())))
    assert tuple(rows[0]) == FRAME_COLUMNS
    assert [int(r[0]) for r in rows[1:]] == list(range(1, result.cycles + 1))
    last = dict(zip(rows[0], map(int, rows[-1])))
    f = result.frames[-1]
    assert last["arrivedSafe"] == f.arrived_safe and last["exposedNow"] == f.exposed_now


def test_agents_document_layout():
    result = random_sim(2).run()
    doc = result.agents_document()
    assert doc["formatVersion"] == 1
    first = doc["agents"][0]
    assert list(first) == ["id", "behaviour", "finalStatus", "finalRole", "exposedSeconds", "leader"]
    assert [a["id"] for a in doc["agents"]] == list(range(result.population))


def test_totals_and_median():
    result = random_sim(3).run()
    totals = result.totals()
    assert totals["victims"] == sum(a.final_status is Status.DEAD for a in result.per_agent)
    assert totals["totalExposedSeconds"] == sum(a.exposed_seconds for a in result.per_agent)
    assert totals["arrivedSafe"] == result.frames[-1].arrived_safe
    assert totals["gaveUp"] == result.frames[-1].gave_up
    exposed = sorted(a.exposed_seconds for a in result.per_agent if a.exposed_seconds)
    if exposed:
        assert exposed[0] <= result.median_exposure <= exposed[-1]


def test_exposed_now_matches_agents():
    sim = random_sim(8)

    def hook(phase, s):
        if phase == "frame":
            assert s.frames[-1].exposed_now == sum(1 for a in s.agents if a.exposed_now)

    sim.run(hook)


# -- run-level properties --------------------------------------------------


@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(seed=st.integers(0, 2**32))
def test_conservation_every_cycle(seed, conservation_hook):
    sim = random_sim(seed)
    sim.run(conservation_hook(len(sim.agents)))
    assert sim.frames


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32))
def test_runs_are_deterministic(seed):
    a, b = random_sim(seed).run(), random_sim(seed).run()
    assert a.frames_csv() == b.frames_csv()
    assert a.agents_document() == b.agents_document()
    assert a.histogram_document() == b.histogram_document()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32))
def test_monotone_counters_and_bounded_exposure(seed):
    result = random_sim(seed).run()
    frames = result.frames
    assert [f.cycle for f in frames] == list(range(1, len(frames) + 1))
    assert len({f.dead for f in frames}) <= 1 and frames[0].dead == result.victims
    for prev, cur in zip(frames, frames[1:]):
        assert cur.arrived_safe >= prev.arrived_safe
        assert cur.gave_up >= prev.gave_up
        assert cur.outside_city >= prev.outside_city
    assert all(a.exposed_seconds <= result.cycles for a in result.per_agent)


def test_shared_district_is_not_mutated():
    district = small_district()
    cfg = ScenarioConfig(damage_none=0.0, damage_complete=0.5, damage_moderate=0.5, damage_slight=0.0,
                         damage_extensive=0.0, max_cycles=50)
    first = run(district, cfg, 1)
    assert all(b.damage is None for b in district.buildings)
    assert run(district, cfg, 1).frames_csv() == first.frames_csv()
