import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hubsim.routing import (
    DecisionGraph,
    DisconnectedNetworkError,
    NoRouteError,
    build_decision_graph,
    shortest_route,
    visible,
)
from hubsim.scenario import DecisionPoint, Portal

from conftest import square_infrastructure


def make_graph(nodes, edges):
    adj = {k: {} for k in nodes}
    for u, v, w in edges:
        adj[u][v] = w
        adj[v][u] = w
    return DecisionGraph(dict(nodes), adj, frozenset(), {})


def random_graph(rng, n, p=0.45, integer=False):
    names = [f"n{i}" for i in range(n)]
    pos = {k: tuple(rng.uniform(0, 10, 2)) for k in names}
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                if integer:
                    w = float(rng.integers(1, 4))
                else:
                    a, b = pos[names[i]], pos[names[j]]
                    w = math.hypot(a[0] - b[0], a[1] - b[1])
                edges.append((names[i], names[j], w))
    return make_graph(pos, edges), edges


def brute_force(nodes, edges, o, d):
    """Minimum over every simple path; ties by node sequence."""
    g = nx.Graph()
    g.add_nodes_from(nodes)
    g.add_weighted_edges_from(edges)
    if o == d:
        return 0.0, (o,)
    best = None
    for path in nx.all_simple_paths(g, o, d):
        length = sum(g[a][b]["weight"] for a, b in zip(path, path[1:]))
        cand = (length, tuple(path))
        if best is None or length < best[0] - 1e-9:
            best = cand
        elif abs(length - best[0]) <= 1e-9 and cand[1] < best[1]:
            best = cand
    return best


def test_empty_hall_three_nodes_complete():
    inf = square_infrastructure(
        portals=(Portal("A", ((0.0, 6.0), (0.0, 4.0)), "entrance"),
                 Portal("B", ((10.0, 4.0), (10.0, 6.0)), "entrance")),
        decision_points=(DecisionPoint("C", (5.0, 8.0)),))
    g = build_decision_graph(inf)
    assert len(g.edges) == 3


def test_wall_with_gap_node():
    # a thin wall splits the hall except for a doorway; the door node is the only bridge
    wall_lo = ((4.9, 0.0), (5.1, 0.0), (5.1, 7.5), (4.9, 7.5))
    wall_hi = ((4.9, 8.5), (5.1, 8.5), (5.1, 10.0), (4.9, 10.0))
    inf = square_infrastructure(obstacles=(wall_lo, wall_hi),
                                decision_points=(DecisionPoint("G", (5.0, 8.0)),))
    g = build_decision_graph(inf)
    assert sorted(tuple(sorted(e[:2])) for e in g.edges) == [("A", "G"), ("B", "G")]
    assert shortest_route(g, "A", "B").waypoints == ("A", "G", "B")


def test_disconnected_network_reports_components():
    wall = ((4.9, 0.0), (5.1, 0.0), (5.1, 10.0), (4.9, 10.0))
    inf = square_infrastructure(obstacles=(wall,))
    with pytest.raises(DisconnectedNetworkError) as exc:
        build_decision_graph(inf)
    assert exc.value.components == [["A"], ["B"]]


def test_edges_are_mutually_visible(hub_graph, hub):
    for u, v, w in hub_graph.edges:
        assert visible(hub.infrastructure, hub_graph.position(u), hub_graph.position(v))
        a, b = hub_graph.position(u), hub_graph.position(v)
        assert w == pytest.approx(math.hypot(a[0] - b[0], a[1] - b[1]))
    # the kiosk blocks the direct line between the two side doors
    assert "E4" not in hub_graph.adjacency["E1"]


def test_anchor_nudged_inside(hub_graph):
    assert hub_graph.position("E1") == pytest.approx((0.1, 10.0))
    assert hub_graph.position("P1") == pytest.approx((12.0, 0.1))


def test_origin_equals_destination():
    g, _ = random_graph(np.random.default_rng(0), 4, p=1.0)
    r = shortest_route(g, "n1", "n1")
    assert r.waypoints == ("n1",)
    assert r.length(g) == 0


def test_triangle_direct_edge():
    g = make_graph({"A": (0, 0), "B": (3, 0), "C": (3, 4)},
                   [("A", "B", 3.0), ("B", "C", 4.0), ("A", "C", 5.0)])
    assert shortest_route(g, "A", "B").waypoints == ("A", "B")


def test_no_route():
    g = make_graph({"A": (0, 0), "B": (1, 0), "C": (2, 0)}, [("A", "B", 1.0)])
    with pytest.raises(NoRouteError):
        shortest_route(g, "A", "C")


def test_ties_break_lexicographically():
    g = make_graph({"A": (0, 0), "X": (1, 1), "M": (1, -1), "B": (2, 0)},
                   [("A", "X", 1.0), ("X", "B", 1.0), ("A", "M", 1.0), ("M", "B", 1.0)])
    assert shortest_route(g, "A", "B").waypoints == ("A", "M", "B")


@pytest.mark.parametrize("seed", range(50))
def test_matches_brute_force_on_random_graphs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    g, edges = random_graph(rng, n, integer=seed % 2 == 1)
    names = list(g.nodes)
    for o in names:
        for d in names:
            ref = brute_force(names, edges, o, d)
            if ref is None:
                with pytest.raises(NoRouteError):
                    shortest_route(g, o, d)
                continue
            r = shortest_route(g, o, d)
            assert r.length(g) == pytest.approx(ref[0], abs=1e-9)
            assert r.waypoints == ref[1]


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_route_properties(seed):
    rng = np.random.default_rng(seed)
    g, _ = random_graph(rng, 7, p=0.6)
    names = sorted(g.nodes)
    o, d = names[0], names[-1]
    try:
        r = shortest_route(g, o, d)
    except NoRouteError:
        return
    wp = r.waypoints
    assert len(set(wp)) == len(wp)
    assert all(b in g.adjacency[a] for a, b in zip(wp, wp[1:]))
    a, b = g.position(o), g.position(d)
    assert r.length(g) >= math.hypot(a[0] - b[0], a[1] - b[1]) - 1e-9
    # every prefix is itself shortest
    for k in range(1, len(wp)):
        pre = shortest_route(g, o, wp[k])
        assert pre.length(g) == pytest.approx(route_len(g, wp[:k + 1]), abs=1e-9)
    assert shortest_route(g, o, d) == r


def route_len(g, wp):
    return sum(g.adjacency[a][b] for a, b in zip(wp, wp[1:]))


def test_route_cache_is_deterministic(hub_graph):
    a = hub_graph.route("x", "E1", "E4")
    b = hub_graph.route("y", "E1", "E4")
    assert a.waypoints == b.waypoints and a.agent_id == "x" and b.agent_id == "y"
