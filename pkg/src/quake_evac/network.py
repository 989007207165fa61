"""Street graph, per-agent belief overlays and shortest-path routing.

Routes are extracted from a distance-to-target field: starting at the
origin, each step moves to the neighbour minimising ``weight + dist``, with
ties going to the smaller node id and then the smaller edge id. Blocked
streets stay in the graph with a huge weight, so a route always exists
inside a connected component.
"""

from __future__ import annotations

import heapq
import math
from array import array
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .geometry import Point, Polyline, SpatialIndex, distance

BLOCKED_WEIGHT = 1e9
DEFAULT_SNAP_TOLERANCE = 0.5


class GraphBuildError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    position: Point


@dataclass
class Edge:
    id: int
    u: int
    v: int
    geometry: Polyline
    length: float
    blocked: bool = False

    @property
    def endpoints(self) -> tuple[int, int]:
        return self.u, self.v

    def other(self, node: int) -> int:
        if node == self.u:
            return self.v
        if node == self.v:
            return self.u
        raise ValueError(f"node {node} is not an endpoint of edge {self.id}")


@dataclass
class StreetGraph:
    nodes: list[Node]
    edges: list[Edge]
    # node id -> [(edge id, neighbour id), ...] sorted by (neighbour, edge)
    adjacency: list[list[tuple[int, int]]] = field(repr=False)

    def __post_init__(self) -> None:
        self.lengths = array("d", (e.length for e in self.edges))
        self._components: list[int] | None = None
        self._locator: SpatialIndex | None = None
        self._node_locator: SpatialIndex | None = None

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def check_node(self, node: int) -> None:
        if not (isinstance(node, int) and 0 <= node < len(self.nodes)):
            raise IndexError(f"invalid node id {node!r}")

    def components(self) -> list[int]:
        """Component label per node; labels are the smallest node id in each component."""
        if self._components is None:
            label = [-1] * len(self.nodes)
            for start in range(len(self.nodes)):
                if label[start] != -1:
                    continue
                label[start] = start
                stack = [start]
                while stack:
                    n = stack.pop()
                    for _, m in self.adjacency[n]:
                        if label[m] == -1:
                            label[m] = start
                            stack.append(m)
            self._components = label
        return self._components

    def nearest_node(self, p: Point) -> int:
        """Nearest node by straight-line distance; ties to the smaller id."""
        if self._node_locator is None:
            cell = max(self._edge_locator().cell_size, 1.0)
            idx = SpatialIndex(cell)
            for n in self.nodes:
                idx.insert_point(n.id, n.position)
            self._node_locator = idx
        idx = self._node_locator
        r = idx.cell_size
        while True:
            cands = idx.candidates((p[0] - r, p[1] - r, p[0] + r, p[1] + r))
            if cands:
                d, n = min((distance(p, self.nodes[n].position), n) for n in cands)
                if d <= r or len(cands) == len(self.nodes):
                    return n
            r *= 2.0

    def _edge_locator(self) -> SpatialIndex:
        if self._locator is None:
            total = sum(self.lengths) or 1.0
            cell = max(total / max(len(self.edges), 1), 1.0)
            idx = SpatialIndex(cell)
            for e in self.edges:
                idx.insert(e.id, e.geometry.bbox())
            self._locator = idx
        return self._locator

    def project(self, p: Point) -> GraphPosition:
        return project_to_graph(self, p)


@dataclass(frozen=True)
class GraphPosition:
    """Location on an edge: ``offset`` meters from ``origin`` towards ``heading``."""

    edge: int
    origin: int
    heading: int
    offset: float

    def arc_length(self, graph: StreetGraph) -> float:
        """Distance from the edge's geometric start."""
        e = graph.edges[self.edge]
        return self.offset if self.origin == e.u else e.length - self.offset

    def point(self, graph: StreetGraph) -> Point:
        return graph.edges[self.edge].geometry.point_at(self.arc_length(graph))


@dataclass(frozen=True)
class Route:
    nodes: tuple[int, ...]
    edges: tuple[int, ...]
    cost: float

    @property
    def is_empty(self) -> bool:
        return not self.edges


class BeliefOverlay:
    """One agent's street knowledge: the set of edges it knows to be blocked.

    Every other edge weighs its length.
    """

    __slots__ = ("lengths", "blocked")

    def __init__(self, graph: StreetGraph, blocked: Iterable[int] = ()) -> None:
        self.lengths = graph.lengths
        self.blocked: set[int] = set(blocked)

    def weight(self, edge: int) -> float:
        return BLOCKED_WEIGHT if edge in self.blocked else self.lengths[edge]

    def is_pristine(self) -> bool:
        return not self.blocked

    def copy(self) -> BeliefOverlay:
        clone = BeliefOverlay.__new__(BeliefOverlay)
        clone.lengths = self.lengths
        clone.blocked = set(self.blocked)
        return clone

    def __eq__(self, other: object) -> bool:
        return isinstance(other, BeliefOverlay) and self.blocked == other.blocked

    def __repr__(self) -> str:
        return f"BeliefOverlay(blocked={sorted(self.blocked)})"


def mark_blocked(overlay: BeliefOverlay, edge: int) -> BeliefOverlay:
    if not 0 <= edge < len(overlay.lengths):
        raise IndexError(f"invalid edge id {edge!r}")
    overlay.blocked.add(edge)
    return overlay


def build_graph(
    streets: Sequence[Polyline | Sequence[Sequence[float]]],
    snap_tolerance: float = DEFAULT_SNAP_TOLERANCE,
) -> StreetGraph:
    """Build an undirected graph from pre-noded street polylines.

    Endpoints closer than ``snap_tolerance`` merge into the node that first
    appeared; nodes are numbered by first appearance.
    """
    if snap_tolerance < 0:
        raise GraphBuildError("snap tolerance must be non-negative")
    cell = max(snap_tolerance, 1e-6)
    grid: dict[tuple[int, int], list[int]] = {}
    nodes: list[Node] = []

    def node_for(p: Point) -> int:
        ci, cj = math.floor(p[0] / cell), math.floor(p[1] / cell)
        best = None
        for i in (ci - 1, ci, ci + 1):
            for j in (cj - 1, cj, cj + 1):
                for nid in grid.get((i, j), ()):
                    if distance(nodes[nid].position, p) <= snap_tolerance and (best is None or nid < best):
                        best = nid
        if best is not None:
            return best
        nid = len(nodes)
        nodes.append(Node(nid, Point(p[0], p[1])))
        grid.setdefault((ci, cj), []).append(nid)
        return nid

    edges: list[Edge] = []
    for idx, street in enumerate(streets):
        try:
            line = street if isinstance(street, Polyline) else Polyline(tuple(Point(*p[:2]) for p in street))
        except ValueError as exc:
            raise GraphBuildError(f"street {idx}: {exc}") from exc
        if not line.length > 0:
            raise GraphBuildError(f"street {idx} has zero length")
        u = node_for(line.start)
        v = node_for(line.end)
        if u == v:
            raise GraphBuildError(f"street {idx} starts and ends at the same node {u}")
        edges.append(Edge(len(edges), u, v, line, line.length))

    adjacency: list[list[tuple[int, int]]] = [[] for _ in nodes]
    for e in edges:
        adjacency[e.u].append((e.id, e.v))
        adjacency[e.v].append((e.id, e.u))
    for adj in adjacency:
        adj.sort(key=lambda t: (t[1], t[0]))
    return StreetGraph(nodes, edges, adjacency)


def distance_field(
    graph: StreetGraph,
    overlay: BeliefOverlay | None,
    sources: Iterable[int],
    stop_at: Iterable[int] = (),
) -> array:
    """Multi-source Dijkstra over overlay weights.

    With ``stop_at`` the search ends once all those nodes are settled; other
    entries may then hold upper bounds (or ``inf``), which is still enough for
    route extraction from the stop nodes.
    """
    n = len(graph.nodes)
    dist = array("d", [math.inf]) * n
    done = bytearray(n)
    heap: list[tuple[float, int]] = []
    for s in sources:
        dist[s] = 0.0
        heap.append((0.0, s))
    heapq.heapify(heap)
    pending = set(stop_at)
    lengths = graph.lengths
    blocked = overlay.blocked if overlay is not None else ()
    adjacency = graph.adjacency
    push, pop = heapq.heappush, heapq.heappop
    while heap:
        d, u = pop(heap)
        if done[u]:
            continue
        done[u] = 1
        if pending:
            pending.discard(u)
            if not pending:
                break
        for e, v in adjacency[u]:
            if done[v]:
                continue
            nd = d + (BLOCKED_WEIGHT if e in blocked else lengths[e])
            if nd < dist[v]:
                dist[v] = nd
                push(heap, (nd, v))
    return dist


def descend(graph: StreetGraph, overlay: BeliefOverlay | None, dist: Sequence[float], start: int) -> Route | None:
    """Follow a distance field downhill from ``start`` to a zero-distance node."""
    if math.isinf(dist[start]):
        return None
    lengths = graph.lengths
    blocked = overlay.blocked if overlay is not None else ()
    nodes = [start]
    edges: list[int] = []
    cost = 0.0
    node = start
    while dist[node] != 0.0:
        best = None
        for e, v in graph.adjacency[node]:
            w = BLOCKED_WEIGHT if e in blocked else lengths[e]
            key = (w + dist[v], v, e)
            if best is None or key < best:
                best = key
        node = best[1]
        edges.append(best[2])
        nodes.append(node)
        cost += BLOCKED_WEIGHT if best[2] in blocked else lengths[best[2]]
        if len(nodes) > len(graph.nodes):
            raise RuntimeError("route extraction did not converge")
    return Route(tuple(nodes), tuple(edges), cost)


def shortest_path(graph: StreetGraph, overlay: BeliefOverlay | None, source: int, target: int) -> Route | None:
    """Minimum-weight route from ``source`` to ``target``; ``None`` when unreachable."""
    graph.check_node(source)
    graph.check_node(target)
    if source == target:
        return Route((source,), (), 0.0)
    dist = distance_field(graph, overlay, [target], stop_at=[source])
    return descend(graph, overlay, dist, source)


def route_cost(graph: StreetGraph, overlay: BeliefOverlay | None, edges: Iterable[int]) -> float:
    if overlay is None:
        return sum(graph.lengths[e] for e in edges)
    return sum(overlay.weight(e) for e in edges)


def project_to_graph(graph: StreetGraph, p: Point) -> GraphPosition:
    """Closest point on any street; ties resolve to the smaller edge id.

    The origin is the endpoint nearer along the edge, so a point sitting on a
    node projects to offset 0.
    """
    if not graph.edges:
        raise ValueError("cannot project onto an empty graph")
    locator = graph._edge_locator()
    r = locator.cell_size
    while True:
        cands = locator.candidates((p[0] - r, p[1] - r, p[0] + r, p[1] + r))
        best = None
        for eid in cands:
            d, s = graph.edges[eid].geometry.project(p)
            if best is None or d < best[0]:
                best = (d, eid, s)
        if best is not None and best[0] <= r:
            break
        if len(cands) == len(graph.edges):
            break
        r *= 2.0
    _, eid, s = best
    e = graph.edges[eid]
    if s <= e.length / 2.0:
        return GraphPosition(eid, e.u, e.v, s)
    return GraphPosition(eid, e.v, e.u, e.length - s)


def labelled_distance_field(
    graph: StreetGraph, overlay: BeliefOverlay | None, sources: Iterable[int]
) -> tuple[array, list[int]]:
    """Distance to the nearest source plus which source that is.

    Equal distances resolve to the smaller source id, so the labelling is
    reproducible.
    """
    n = len(graph.nodes)
    dist = array("d", [math.inf]) * n
    label = [-1] * n
    done = bytearray(n)
    heap: list[tuple[float, int, int]] = []
    for s in sorted(set(sources)):
        dist[s] = 0.0
        label[s] = s
        heap.append((0.0, s, s))
    heapq.heapify(heap)
    lengths = graph.lengths
    blocked = overlay.blocked if overlay is not None else ()
    while heap:
        d, lab, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = 1
        for e, v in graph.adjacency[u]:
            if done[v]:
                continue
            nd = d + (BLOCKED_WEIGHT if e in blocked else lengths[e])
            if nd < dist[v] or (nd == dist[v] and lab < label[v]):
                dist[v] = nd
                label[v] = lab
                heapq.heappush(heap, (nd, lab, v))
    return dist, label


class Router:
    """Distance-field provider for one run.

    Agents that know of no blocked street all share the same weights, so
    their fields are cached per target. Agents with private knowledge get a
    fresh search that stops once the nodes they need are settled.
    """

    def __init__(self, graph: StreetGraph) -> None:
        self.graph = graph
        self._fields: dict[int, array] = {}
        self._nearest: dict[frozenset[int], tuple[array, list[int]]] = {}

    def field(self, overlay: BeliefOverlay, target: int, need: Iterable[int] = ()) -> array:
        if overlay.blocked:
            return distance_field(self.graph, overlay, [target], stop_at=need)
        cached = self._fields.get(target)
        if cached is None:
            cached = self._fields[target] = distance_field(self.graph, None, [target])
        return cached

    def nearest_field(self, overlay: BeliefOverlay, sources: Iterable[int]) -> tuple[array, list[int]]:
        key = frozenset(sources)
        if overlay.blocked:
            return labelled_distance_field(self.graph, overlay, key)
        cached = self._nearest.get(key)
        if cached is None:
            cached = self._nearest[key] = labelled_distance_field(self.graph, None, key)
        return cached

    def route(self, overlay: BeliefOverlay, source: int, target: int) -> Route | None:
        if source == target:
            return Route((source,), (), 0.0)
        return descend(self.graph, overlay, self.field(overlay, target, [source]), source)
