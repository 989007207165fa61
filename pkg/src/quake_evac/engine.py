"""Discrete-time scheduler: quake application, cycle ordering, termination and metrics.

One cycle is one simulated second. Within a cycle living agents are
processed in id order through fixed phases:

1. publish the leader snapshot every agent reads from,
2. perceive, seek/follow and react to blocked streets,
3. leader speed adjustment on cycles divisible by 10,
4. move and accrue exposure,
5. record the metrics frame.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import random
import statistics
from collections import Counter
from dataclasses import dataclass, fields
from typing import Any, Callable

from .agents import (
    EPS,
    HumanAgent,
    LeaderBoard,
    LeaderView,
    Percept,
    Role,
    Status,
    accrue_exposure,
    after_backtrack,
    decide_target,
    handle_obstacle_ahead,
    is_exposed,
    leader_adjust_speed,
    perceive,
    seek_and_follow,
    slowdown,
    step_move,
)
from .network import Router
from .world import District, World, assign_damage, initial_casualties, obstacle_from_building, populate

FORMAT_VERSION = 1
RNG_STREAMS = ("damage", "casualties", "population", "behaviour", "imitation", "targets")
_EMPTY = Percept()

Hook = Callable[[str, "Simulation"], None]


class SimulationError(RuntimeError):
    """An initialization failure, labelled with the phase it happened in."""

    def __init__(self, phase: str, cause: Exception) -> None:
        super().__init__(f"{phase}: {cause}")
        self.phase = phase
        self.cause = cause


class ConservationError(RuntimeError):
    """A frame's population partition did not add up to the population."""


class SeededRng:
    """Independent named random streams derived from one 64-bit seed."""

    def __init__(self, seed: int) -> None:
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ValueError(f"seed must be an integer in [0, 2**64), got {seed!r}")
        self.seed = seed
        self._streams: dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            digest = hashlib.blake2b(f"{self.seed}:{name}".encode(), digest_size=16).digest()
            rng = self._streams[name] = random.Random(int.from_bytes(digest, "big"))
        return rng


@dataclass(frozen=True)
class MetricsFrame:
    cycle: int
    moving: int
    staying: int
    seeking: int
    following: int
    wandering: int
    leaders: int
    dead: int
    arrived_safe: int
    arrived_other: int
    gave_up: int
    exposed_now: int
    outside_city: int

    @property
    def partition_total(self) -> int:
        return (
            self.dead + self.arrived_safe + self.arrived_other + self.gave_up
            + self.moving + self.staying + self.seeking + self.following + self.wandering
        )


FRAME_COLUMNS = (
    "cycle", "moving", "staying", "seeking", "following", "wandering", "leaders", "dead",
    "arrivedSafe", "arrivedOther", "gaveUp", "exposedNow", "outsideCity",
)
_FRAME_FIELDS = tuple(f.name for f in fields(MetricsFrame))


@dataclass(frozen=True)
class AgentSummary:
    id: int
    behaviour: int
    final_status: Status
    final_role: Role | None
    exposed_seconds: int
    is_leader: bool
    arrival_node: int | None


@dataclass(frozen=True)
class RunResult:
    frames: list[MetricsFrame]
    per_agent: list[AgentSummary]
    histogram: list[int]
    bucket_seconds: int
    termination_reason: str
    cycles: int
    victims: int
    arrived_safe: int
    outside_city: int

    @property
    def population(self) -> int:
        return len(self.per_agent)

    @property
    def gave_up(self) -> int:
        return sum(1 for a in self.per_agent if a.final_status is Status.GAVE_UP)

    @property
    def total_exposed_seconds(self) -> int:
        return sum(a.exposed_seconds for a in self.per_agent)

    @property
    def median_exposure(self) -> float:
        """Median exposure among agents exposed at all; 0 when nobody was."""
        exposed = [a.exposed_seconds for a in self.per_agent if a.exposed_seconds > 0]
        return float(statistics.median(exposed)) if exposed else 0.0

    def totals(self) -> dict[str, float]:
        return {
            "victims": self.victims,
            "totalExposedSeconds": self.total_exposed_seconds,
            "arrivedSafe": self.arrived_safe,
            "outsideCity": self.outside_city,
            "gaveUp": self.gave_up,
        }

    def frames_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(FRAME_COLUMNS)
        for f in self.frames:
            writer.writerow([getattr(f, name) for name in _FRAME_FIELDS])
        return buf.getvalue()

    def agents_document(self) -> dict[str, Any]:
        return {
            "formatVersion": FORMAT_VERSION,
            "agents": [
                {
                    "id": a.id,
                    "behaviour": a.behaviour,
                    "finalStatus": a.final_status.value,
                    "finalRole": a.final_role.value if a.final_role is not None else None,
                    "exposedSeconds": a.exposed_seconds,
                    "leader": a.is_leader,
                }
                for a in self.per_agent
            ],
        }

    def histogram_document(self) -> dict[str, Any]:
        b = self.bucket_seconds
        return {
            "formatVersion": FORMAT_VERSION,
            "bucketSeconds": b,
            "total": sum(self.histogram),
            "buckets": [
                {"fromSeconds": i * b, "toSeconds": (i + 1) * b, "count": c} for i, c in enumerate(self.histogram)
            ],
        }


def dumps(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


class Simulation:
    """One run's mutable state plus the scheduler driving it."""

    def __init__(
        self, world: World, agents: list[HumanAgent], config, rng: SeededRng, victims: int = 0
    ) -> None:
        self.world = world
        self.agents = agents
        world.agents = agents
        self.config = config
        self.rng = rng
        self.router = Router(world.graph)
        self.cycle = 0
        self.frames: list[MetricsFrame] = []
        self.victims = victims
        self.living_at_start = [a for a in agents if a.status is Status.ALIVE]
        self.leaders: list[HumanAgent] = []
        self.active: list[HumanAgent] = []
        self.stationary_exposed: list[HumanAgent] = []
        self.settled: Counter[str] = Counter()
        self._settled_views: dict[int, LeaderView] = {}
        self._targets_rng = rng.stream("targets")
        self._imitation_rng = rng.stream("imitation")

    @classmethod
    def initialize(cls, district: District, config, seed: int, trace: bool = False) -> Simulation:
        rng = SeededRng(seed)

        def phase(name: str, fn, *args):
            try:
                return fn(*args)
            except (ValueError, IndexError, KeyError) as exc:
                raise SimulationError(name, exc) from exc

        world = phase("build graph", World, district)
        agents = phase("populate", populate, world, config, rng.stream("population"), rng.stream("behaviour"))
        if trace:
            for a in agents:
                a.trace = []
        damage_rng = rng.stream("damage")
        distribution = config.damage_distribution
        for b in world.buildings:
            phase("assign damage", assign_damage, b, distribution, damage_rng)
        obstacles = []
        for b in world.buildings:
            o = phase("obstacles", obstacle_from_building, b, config.radius_factors, len(obstacles))
            if o is not None:
                obstacles.append(o)
        phase("block streets", world.set_obstacles, obstacles, config.perception_radius)
        victims = phase("casualties", initial_casualties, agents, world, config.casualty_rates, rng.stream("casualties"))
        sim = cls(world, agents, config, rng, victims)
        phase("decide targets", sim._decide_all)
        return sim

    def _decide_all(self) -> None:
        for agent in self.agents:
            if agent.status is Status.ALIVE:
                decide_target(agent, self.world, self.router, self._targets_rng, 0)
        self.activate()

    def activate(self) -> None:
        """Split agents into active ones and settled counts; call once roles are decided."""
        self.leaders = [a for a in self.agents if a.is_leader and a.status is Status.ALIVE]
        self.active = []
        for agent in self.agents:
            if agent.status is Status.ALIVE and agent.role is not Role.STAYER:
                self.active.append(agent)
            else:
                agent.exposed_now = is_exposed(agent, self.world)
                self._settle(agent)

    def _settle(self, agent: HumanAgent) -> None:
        """Book an agent that will never act again into the fixed counters."""
        status = agent.status
        if status is Status.DEAD:
            self.settled["dead"] += 1
            return
        if status is Status.ARRIVED:
            node = agent.arrival_node
            if self.world.is_safe_node(node):
                self.settled["arrived_safe"] += 1
            else:
                self.settled["arrived_other"] += 1
            if self.world.is_city_exit(node):
                self.settled["outside_city"] += 1
            return
        self.settled["gave_up" if status is Status.GAVE_UP else "staying"] += 1
        # stationary from now on, so exposure is fixed too
        if agent.exposed_now:
            self.stationary_exposed.append(agent)

    # -- cycle -------------------------------------------------------------

    def terminated(self) -> tuple[bool, str | None]:
        if self.cycle == 0:
            if not any(a.status is Status.ALIVE for a in self.agents):
                return True, "settled"
            return False, None
        if not self.active:
            return True, "settled"
        if self.cycle >= self.config.max_cycles:
            return True, "max_cycles"
        return False, None

    def step(self, hook: Hook | None = None) -> MetricsFrame:
        cycle = self.cycle + 1
        world, router, config = self.world, self.router, self.config
        board = LeaderBoard(self.leaders, world, config.perception_radius, self._settled_views)
        if len(self._settled_views) < len(self.leaders):
            for view in board.views.values():
                if view.status is not Status.ALIVE:
                    self._settled_views[view.id] = view
        have_leaders = board.any_moving
        big_in_sight = world.big_in_sight
        alive, seeker, wanderer, follower, mover = Status.ALIVE, Role.SEEKER, Role.WANDERER, Role.FOLLOWER, Role.MOVER
        if hook:
            hook("snapshot", self)

        for agent in self.active:
            if agent.status is not alive:
                continue
            role = agent.role
            seeking = role is seeker or role is wanderer
            # only big zones and leaders change behaviour; skip the scan when neither can be in sight
            if agent.building is None and not big_in_sight[agent.edge] and not (seeking and have_leaders):
                percept = _EMPTY
            else:
                percept = perceive(agent, world, board, want_leaders=seeking, skip=agent.belief.blocked)
            if seeking or role is follower:
                seek_and_follow(
                    agent, percept, board, world, router, config, self._imitation_rng, self._targets_rng, cycle
                )
            if percept.blocked_edges or (percept.obstacles and agent.edge in agent.belief.blocked):
                handle_obstacle_ahead(agent, percept, world, router, config, cycle)
        if hook:
            hook("perceive", self)

        if cycle % 10 == 0 and self.leaders:
            followers: dict[int, list[HumanAgent]] = {}
            for agent in self.active:
                if agent.status is alive and agent.role is follower and agent.leader_id is not None:
                    followers.setdefault(agent.leader_id, []).append(agent)
            for leader in self.leaders:
                if leader.status is alive and leader.role is mover:
                    slow = slowdown(leader, world, config.medium_slowdown_factor)
                    leader_adjust_speed(leader, followers.get(leader.id, ()), slow)
            if hook:
                hook("adjust_speed", self)

        # agents already settled first, so ones settling below are not counted twice
        for agent in self.stationary_exposed:
            agent.exposed_seconds += 1
        edge_spans = world.edge_spans
        factor = config.medium_slowdown_factor
        still: list[HumanAgent] = []
        counts = dict.fromkeys(Role, 0)
        exposed = 0
        for agent in self.active:
            if agent.status is alive:
                role = agent.role
                if (role is mover or role is follower or role is wanderer) and agent.target is not None:
                    speed = agent.speed_cap
                    if agent.building is None and not edge_spans[agent.edge] and speed < agent.edge_length - agent.offset - EPS:
                        # mid-edge on open street: nothing to cross, same result as step_move
                        agent.effective_speed = speed
                        agent.offset += speed
                        agent.exposed_now = False
                        still.append(agent)
                        counts[role] += 1
                        continue
                    step_move(agent, world, cycle, factor, board)
                    if agent.needs_replan:
                        after_backtrack(agent, world, router, self._targets_rng, cycle)
            if agent.building is None and not edge_spans[agent.edge]:
                agent.exposed_now = False
            else:
                exposed += accrue_exposure(agent, world)
            if agent.status is alive and agent.role is not Role.STAYER:
                still.append(agent)
                counts[agent.role] += 1
            else:
                exposed -= agent.exposed_now
                self._settle(agent)
        self.active = still
        if hook:
            hook("move", self)

        s = self.settled
        frame = MetricsFrame(
            cycle=cycle,
            moving=counts[Role.MOVER],
            staying=s["staying"],
            seeking=counts[Role.SEEKER],
            following=counts[Role.FOLLOWER],
            wandering=counts[Role.WANDERER],
            leaders=sum(1 for a in self.leaders if a.status is alive),
            dead=s["dead"],
            arrived_safe=s["arrived_safe"],
            arrived_other=s["arrived_other"],
            gave_up=s["gave_up"],
            exposed_now=exposed + len(self.stationary_exposed),
            outside_city=s["outside_city"],
        )
        if frame.partition_total != len(self.agents):
            raise ConservationError(f"cycle {cycle}: partition sums to {frame.partition_total}, "
                                    f"population is {len(self.agents)}")
        self.frames.append(frame)
        self.cycle = cycle
        world.cycle = cycle
        if hook:
            hook("frame", self)
        return frame

    def run(self, hook: Hook | None = None) -> RunResult:
        while True:
            done, reason = self.terminated()
            if done:
                break
            self.step(hook)
        return self.result(reason)

    def result(self, reason: str | None = None) -> RunResult:
        if reason is None:
            reason = self.terminated()[1] or "incomplete"
        bucket = self.config.histogram_bucket_seconds
        histogram = [0] * (self.cycle // bucket + 1) if self.living_at_start else []
        for agent in self.living_at_start:
            histogram[agent.exposed_seconds // bucket] += 1
        per_agent = [
            AgentSummary(a.id, a.behaviour, a.status, a.role, a.exposed_seconds, a.is_leader, a.arrival_node)
            for a in self.agents
        ]
        return RunResult(
            frames=list(self.frames),
            per_agent=per_agent,
            histogram=histogram,
            bucket_seconds=bucket,
            termination_reason=reason,
            cycles=self.cycle,
            victims=self.victims,
            arrived_safe=self.settled["arrived_safe"],
            outside_city=self.settled["outside_city"],
        )


def run(district: District, config, seed: int, hook: Hook | None = None) -> RunResult:
    return Simulation.initialize(district, config, seed).run(hook)
