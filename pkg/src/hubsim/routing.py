"""Decision-point network and shortest routes over it."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping

from shapely.geometry import LineString, Point

from .geometry import Point2
from .scenario import Infrastructure

ANCHOR_EPS = 0.1


class RoutingError(Exception):
    pass


class DisconnectedNetworkError(RoutingError):
    def __init__(self, components: list[list[str]]):
        self.components = components
        parts = "; ".join("{" + ", ".join(c) + "}" for c in components)
        super().__init__(f"disconnected network: portal anchors split into components {parts}")


class NoRouteError(RoutingError):
    pass


@dataclass(frozen=True)
class Route:
    agent_id: str
    waypoints: tuple[str, ...]

    def length(self, graph: "DecisionGraph") -> float:
        return sum(graph.adjacency[a][b] for a, b in zip(self.waypoints, self.waypoints[1:]))


@dataclass
class DecisionGraph:
    """Visibility graph over declared decision points and one anchor per portal.

    ``adjacency[u][v]`` is the Euclidean edge length. ``inward[pid]`` is the
    unit normal of portal ``pid`` pointing into the walkable area.
    """

    nodes: dict[str, Point2]
    adjacency: dict[str, dict[str, float]]
    portal_nodes: frozenset[str] = frozenset()
    inward: Mapping[str, Point2] = field(default_factory=dict)
    _route_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def edges(self) -> list[tuple[str, str, float]]:
        return [(u, v, w) for u, nbrs in self.adjacency.items() for v, w in nbrs.items() if u < v]

    def position(self, node: str) -> Point2:
        return self.nodes[node]

    def route(self, agent_id: str, origin: str, dest: str) -> Route:
        key = (origin, dest)
        wp = self._route_cache.get(key)
        if wp is None:
            wp = shortest_route(self, origin, dest).waypoints
            self._route_cache[key] = wp
        return Route(agent_id, wp)


def _inward_normal(inf: Infrastructure, seg) -> Point2:
    (x0, y0), (x1, y1) = seg
    length = math.hypot(x1 - x0, y1 - y0)
    nx, ny = -(y1 - y0) / length, (x1 - x0) / length
    mx, my = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    if inf.walkable_geom.contains(Point(mx + ANCHOR_EPS * nx, my + ANCHOR_EPS * ny)):
        return (nx, ny)
    return (-nx, -ny)


def visible(inf: Infrastructure, a: Point2, b: Point2) -> bool:
    """True if the open segment ab stays in the walkable area and misses every obstacle interior."""
    if a == b:
        return True
    seg = LineString([a, b])
    if not inf.walkable_geom.covers(seg):
        return False
    for obs in inf.obstacle_geoms:
        if seg.relate_pattern(obs, "T********"):
            return False
    return True


def build_decision_graph(inf: Infrastructure) -> DecisionGraph:
    nodes: dict[str, Point2] = {d.id: tuple(d.position) for d in inf.decision_points}
    inward: dict[str, Point2] = {}
    for p in inf.portals:
        n = _inward_normal(inf, p.segment)
        inward[p.id] = n
        mx, my = p.midpoint
        nodes[p.id] = (mx + ANCHOR_EPS * n[0], my + ANCHOR_EPS * n[1])
    adjacency: dict[str, dict[str, float]] = {k: {} for k in nodes}
    for u, v in itertools.combinations(sorted(nodes), 2):
        a, b = nodes[u], nodes[v]
        if visible(inf, a, b):
            w = math.hypot(b[0] - a[0], b[1] - a[1])
            adjacency[u][v] = w
            adjacency[v][u] = w
    g = DecisionGraph(nodes, adjacency, frozenset(inward), inward)

    portals = sorted(inward)
    if portals:
        reach = _component(g, portals[0])
        if not all(p in reach for p in portals):
            comps: list[list[str]] = []
            left = set(portals)
            while left:
                start = min(left)
                c = _component(g, start)
                comps.append(sorted(p for p in c if p in inward))
                left -= c
            raise DisconnectedNetworkError(comps)
    return g


def _component(g: DecisionGraph, start: str) -> set[str]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in g.adjacency[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def shortest_route(g: DecisionGraph, origin: str, dest: str, agent_id: str = "") -> Route:
    """Dijkstra keyed on (length, node sequence) so equal-length ties resolve lexicographically."""
    if origin not in g.nodes or dest not in g.nodes:
        raise KeyError(origin if origin not in g.nodes else dest)
    heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (origin,))]
    done: set[str] = set()
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        if u == dest:
            return Route(agent_id, path)
        done.add(u)
        for v, w in g.adjacency[u].items():
            if v not in done:
                heapq.heappush(heap, (d + w, path + (v,)))
    raise NoRouteError(f"no route from {origin} to {dest}")
