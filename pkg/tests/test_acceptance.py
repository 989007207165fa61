"""Acceptance checks, one test per criterion.

Each test prints a ``PASS``/``FAIL`` line for its criterion before asserting,
so ``pytest -v -s tests/test_acceptance.py`` gives a readable report.
"""
from __future__ import annotations

import math
import random
import statistics
import time
from collections import deque

import pytest

from helpers import backtrack_fixture, dead_end_fixture, floyd_warshall, random_integer_graph, random_sim
from quake_evac.agents import Role, Status
from quake_evac.cli import main
from quake_evac.engine import Simulation
from quake_evac.network import BLOCKED_WEIGHT, BeliefOverlay, shortest_path
from quake_evac.scenario import ScenarioConfig, SyntheticParams, generate_synthetic, preset


@pytest.fixture
def report(capsys):
    def emit(criterion: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
        assert ok, detail

    return emit


def conserving(population: int):
    def hook(phase: str, sim: Simulation) -> None:
        if phase == "frame":
            assert sim.frames[-1].partition_total == population

    return hook


# -- 1: routing against an all-pairs oracle ---------------------------------


def test_criterion_1_routing_matches_floyd_warshall(report):
    rng = random.Random(2024)
    mismatches = checked = 0
    start = time.perf_counter()
    for _ in range(200):
        graph, _ = random_integer_graph(rng)
        blocked = [e.id for e in graph.edges if rng.random() < 0.3]
        overlay = BeliefOverlay(graph, blocked)
        d = floyd_warshall(graph, overlay)
        for s in range(len(graph.nodes)):
            for t in range(len(graph.nodes)):
                route = shortest_path(graph, overlay, s, t)
                got = math.inf if route is None else route.cost
                checked += 1
                mismatches += got != d[s][t]
    elapsed = time.perf_counter() - start
    report(1, mismatches == 0 and elapsed < 5.0,
           f"{checked} pairs on 200 graphs, {mismatches} mismatches, {elapsed:.2f} s")


# -- 2: believed-blocked edges only when nothing else is left --------------


def reachable(graph, start: int, blocked: frozenset[int]) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for edge, nxt in graph.adjacency[node]:
            if edge not in blocked and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def avoidance_violations(sim: Simulation) -> tuple[int, int]:
    graph = sim.world.graph
    plans = violations = 0
    for agent in sim.agents:
        for entry in agent.trace or ():
            if entry[1] == "plan":
                _, _, target, edge, start, route, cost, blocked = entry
                if start is None:
                    continue
                plans += 1
                if not any(e in blocked for e in route):
                    continue
                # a clean way out: straight on, or back along a current edge not believed blocked
                exits = [start]
                if edge is not None and edge not in blocked:
                    exits.append(graph.edges[edge].other(start))
                if any(target in reachable(graph, x, blocked) for x in exits):
                    violations += 1
            elif entry[1] == "enter" and entry[3] and entry[4] < BLOCKED_WEIGHT:
                violations += 1
    return plans, violations


def test_criterion_2_blocked_edges_avoided_when_possible(report):
    plans = violations = 0
    for seed in range(100):
        sim = random_sim(seed)
        sim.run(conserving(len(sim.agents)))
        p, v = avoidance_violations(sim)
        plans += p
        violations += v
    report(2, violations == 0 and plans > 0, f"{plans} logged plans over 100 runs, {violations} violations")


# -- 3: backtrack to the previous intersection ------------------------------


def test_criterion_3_backtrack_visits_previous_intersection(report):
    ok = 0
    for seed in range(20):
        world, agent, sim = backtrack_fixture(seed)
        previous = world.graph.edges[agent.edge].u
        sim.run(conserving(1))
        kinds = [t[1] for t in agent.trace]
        first_encounter = kinds.index("encounter")
        next_enter = kinds.index("enter", first_encounter)
        visits = [t[2] for t in agent.trace[first_encounter:next_enter] if t[1] == "visit"]
        ok += previous in visits and agent.status is Status.ARRIVED
    report(3, ok == 20, f"previous intersection revisited in {ok}/20 seeds")


# -- 4: give up after the threshold and stay put ----------------------------


def test_criterion_4_give_up_after_three_encounters(report):
    world, agent, sim = dead_end_fixture(3, keep_running=True)
    positions = []

    def hook(phase, s):
        if phase == "frame" and agent.status is Status.GAVE_UP:
            positions.append((agent.edge, agent.offset, agent.point(world)))

    sim.run(hook)
    encounters = [t[3] for t in agent.trace if t[1] == "encounter"]
    ok = (agent.status is Status.GAVE_UP and encounters == [1, 2, 3] and len(positions) > 100
          and len(set(positions)) == 1)
    report(4, ok, f"encounters {encounters}, status {agent.status.value}, "
                  f"{len(set(positions))} distinct positions over {len(positions)} cycles after giving up")


# -- 5: leaders walk no faster than their slowest follower -----------------


def test_criterion_5_leader_speed_capped_by_followers(report):
    checks = violations = 0
    for seed in range(50):
        sim = random_sim(seed, leader_fraction=0.1, p3=0.5, p6=0.3, p1=0.1, p2=0.0, p4=0.1, p5=0.0)

        def hook(phase, s):
            nonlocal checks, violations
            if phase != "adjust_speed":
                return
            # the counter advances after the move, so this step is cycle s.cycle + 1
            assert (s.cycle + 1) % 10 == 0
            followers: dict[int, list[float]] = {}
            for a in s.agents:
                if a.status is Status.ALIVE and a.role is Role.FOLLOWER and a.leader_id is not None:
                    followers.setdefault(a.leader_id, []).append(a.effective_speed)
            for leader in s.leaders:
                if leader.status is Status.ALIVE and leader.id in followers:
                    checks += 1
                    violations += leader.effective_speed > min(followers[leader.id])

        sim.run(hook)
    report(5, violations == 0 and checks > 0, f"{checks} leader checks over 50 runs, {violations} violations")


# -- 6 and 7: survey against optimistic on the default district ------------


@pytest.fixture(scope="module")
def scenario_runs():
    rows = []
    start = time.perf_counter()
    for seed in range(10):
        district = generate_synthetic(SyntheticParams(seed=seed))
        row = {}
        for name in ("survey", "optimistic"):
            sim = Simulation.initialize(district, preset(name), seed)
            row[name] = sim.run(conserving(len(sim.agents)))
        rows.append(row)
    return rows, time.perf_counter() - start


def test_criterion_6_optimistic_exposes_less_and_saves_more(report, scenario_runs):
    rows, elapsed = scenario_runs
    less_exposure = sum(
        r["optimistic"].totals()["totalExposedSeconds"] < r["survey"].totals()["totalExposedSeconds"] for r in rows
    )
    more_arrivals = sum(r["optimistic"].arrived_safe > r["survey"].arrived_safe for r in rows)
    ok = less_exposure >= 9 and more_arrivals >= 9 and elapsed < 60.0
    report(6, ok, f"lower exposure in {less_exposure}/10, more arrivals in {more_arrivals}/10, {elapsed:.1f} s")


def test_criterion_7_median_exposure_shifts_down(report, scenario_runs):
    rows, _ = scenario_runs
    medians = [(r["optimistic"].median_exposure, r["survey"].median_exposure) for r in rows]
    wins = sum(o <= s for o, s in medians)
    detail = ", ".join(f"{o:g}<={s:g}" if o <= s else f"{o:g}>{s:g}" for o, s in medians)
    report(7, wins >= 9, f"optimistic median <= survey median in {wins}/10 ({detail})")


# -- 8: population partition every cycle ------------------------------------


def test_criterion_8_population_partition_every_cycle(report):
    frames = runs = 0
    for seed in range(30):
        sim = random_sim(seed)
        result = sim.run(conserving(len(sim.agents)))
        frames += len(result.frames)
        runs += 1
    district = generate_synthetic(SyntheticParams(blocks=5))
    for name in ("survey", "optimistic", "night"):
        sim = Simulation.initialize(district, preset(name), 1)
        frames += len(sim.run(conserving(len(sim.agents))).frames)
        runs += 1
    # the engine itself raises on a broken partition, so reaching here means every frame held
    report(8, frames > 0, f"partition held in all {frames} frames of {runs} runs")


# -- 9: byte-identical reruns -----------------------------------------------


def test_criterion_9_cli_runs_are_byte_identical(report, tmp_path):
    outs = [tmp_path / "first", tmp_path / "second"]
    for out in outs:
        assert main(["run", "--synthetic", "blocks=6", "--scenario", "survey", "--seed", "11", "--out", str(out)]) == 0
    same = {name: (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
            for name in ("frames.csv", "histogram.json")}
    report(9, all(same.values()), ", ".join(f"{k} {'identical' if v else 'differs'}" for k, v in same.items()))


# -- 10: indoor casualty counts ---------------------------------------------


def test_criterion_10_casualties_are_binomial(report):
    # 100 buildings of 25 apartments at 4 people each: 10,000 people, nobody outdoors
    district = generate_synthetic(SyntheticParams(blocks=5, apartment_range=(25, 25), green_space_fraction=0.0))
    cfg = ScenarioConfig(
        p1=0.0, p2=1.0, p3=0.0, p4=0.0, p5=0.0, p6=0.0, people_in_buildings=100.0, occupancy_per_apartment=4.0,
        damage_none=0.0, damage_slight=0.0, damage_moderate=0.0, damage_extensive=0.0, damage_complete=1.0,
        casualty_complete=0.4,
    )
    n, p = 10_000, 0.4
    sigma = math.sqrt(n * p * (1 - p))
    victims = []
    for seed in range(20):
        sim = Simulation.initialize(district, cfg, seed)
        assert len(sim.agents) == n and all(a.building is not None for a in sim.agents)
        victims.append(sim.victims)
    inside = sum(abs(v - n * p) <= 3 * sigma for v in victims)
    report(10, inside >= 19, f"{inside}/20 seeds within 3 sigma ({3 * sigma:.1f}) of {n * p:.0f}; "
                             f"mean {statistics.fmean(victims):.1f}")


# -- 11: performance ----------------------------------------------------------


def test_criterion_11_ten_thousand_agents_thousand_cycles(report):
    district = generate_synthetic(SyntheticParams(blocks=50, buildings_per_block=1, apartment_range=(1, 1)))
    start = time.perf_counter()
    indoors = 4 * len(district.buildings)
    cfg = preset("survey").replace(street_population=10_000 - indoors, max_cycles=1000)
    sim = Simulation.initialize(district, cfg, 0)
    result = sim.run()
    elapsed = time.perf_counter() - start
    edges = len(sim.world.graph.edges)
    ok = len(sim.agents) == 10_000 and result.cycles == 1000 and elapsed < 60.0
    report(11, ok, f"{len(sim.agents)} agents, {edges} edges, {result.cycles} cycles in {elapsed:.1f} s")
