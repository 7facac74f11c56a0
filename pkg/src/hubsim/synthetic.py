"""Desk-scale synthetic hubs with known ground truth, for tests and demos."""

from __future__ import annotations

from dataclasses import replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .demand import DemandConfig, LcmParams, TransferTimeEstimates, generate_demand
from .routing import DecisionGraph, build_decision_graph
from .scenario import (
    ActivitySet,
    DecisionPoint,
    Infrastructure,
    ObservationRecord,
    ObservationSet,
    Portal,
    Scenario,
    Schedule,
    VehicleEvent,
)
from .sfm import SfmParams, StationState, simulate

HALL_W = 40.0
HALL_H = 20.0

# classes: city, mall, metro, office (sorted tag order)
HUB_TRUTH = (0.30, 0.27, 0.23, 0.20)
HUB_START = (0.85, 0.05, 0.05, 0.05)
HUB_IN_COUNTS = {"E1": 35, "E2": 30, "E3": 30, "E4": 25}


def hub_infrastructure(tags: Optional[Mapping[str, Sequence[str]]] = None) -> Infrastructure:
    """40 x 20 m hall, a central kiosk, four entrances and two platform stairs."""
    tags = tags or {"E1": ("metro",), "E2": ("city",), "E3": ("office",), "E4": ("mall",)}
    segs = {
        "E1": ((0.0, 12.0), (0.0, 8.0)),
        "E2": ((8.0, 20.0), (12.0, 20.0)),
        "E3": ((28.0, 20.0), (32.0, 20.0)),
        "E4": ((40.0, 8.0), (40.0, 12.0)),
        "P1": ((10.0, 0.0), (14.0, 0.0)),
        "P2": ((26.0, 0.0), (30.0, 0.0)),
    }
    portals = tuple(
        Portal(pid, seg, "platform-access" if pid.startswith("P") else "entrance",
               frozenset(tags.get(pid, ())))
        for pid, seg in segs.items()
    )
    return Infrastructure(
        walkable=(((0.0, 0.0), (HALL_W, 0.0), (HALL_W, HALL_H), (0.0, HALL_H)),),
        obstacles=(((17.0, 8.0), (23.0, 8.0), (23.0, 12.0), (17.0, 12.0)),),
        portals=portals,
        decision_points=(
            DecisionPoint("D1", (15.5, 6.5)),
            DecisionPoint("D2", (24.5, 6.5)),
            DecisionPoint("D3", (24.5, 13.5)),
            DecisionPoint("D4", (15.5, 13.5)),
        ),
    )


def hub_schedule(departure: bool = False, departure_load: int = 20) -> Schedule:
    events = [
        VehicleEvent("T1", "arrival", 120.0, "P1", 100, 40),
        VehicleEvent("T2", "arrival", 480.0, "P2", 100, 40),
    ]
    if departure:
        events.append(VehicleEvent("T3", "departure", 600.0, "P1", 100, departure_load))
    return Schedule(tuple(sorted(events, key=lambda e: (e.time, e.mode_id))))


def hub_scenario(in_counts: Optional[Mapping[str, int]] = None, departure: bool = False,
                 horizon: float = 900.0, **kw) -> Scenario:
    """The hub with entrance in-counts over the whole horizon and no out-counts yet."""
    in_counts = HUB_IN_COUNTS if in_counts is None else in_counts
    obs = ObservationSet(tuple(ObservationRecord(p, "in", 0.0, horizon, int(n))
                               for p, n in in_counts.items()))
    inf = kw.pop("infrastructure", None) or hub_infrastructure(kw.pop("tags", None))
    return Scenario(inf, hub_schedule(departure, **kw), ActivitySet(), obs, horizon)


def two_class_scenario(in_counts: Optional[Mapping[str, int]] = None) -> Scenario:
    """The hub with two single-portal classes: ``a`` at the west door, ``b`` at the east door.

    The north doors and the platforms only feed the hall, so every agent
    from them draws a class and the class split is visible in two exit
    counts.
    """
    tags = {"E1": ("a",), "E4": ("b",)}
    counts = {"E1": 20, "E2": 250, "E3": 250, "E4": 20} if in_counts is None else in_counts
    return hub_scenario(counts, tags=tags)


def corridor_scenario(length: float = 20.0, width: float = 4.0, horizon: float = 60.0) -> Scenario:
    """Straight corridor with a portal at each end and no schedule."""
    inf = Infrastructure(
        walkable=(((0.0, 0.0), (length, 0.0), (length, width), (0.0, width)),),
        obstacles=(),
        portals=(
            Portal("W", ((0.0, width), (0.0, 0.0)), "entrance", frozenset({"west"})),
            Portal("E", ((length, 0.0), (length, width)), "entrance", frozenset({"east"})),
        ),
        decision_points=(),
    )
    return Scenario(inf, Schedule(()), ActivitySet(), None, horizon)


def out_records(state: StationState, portals: Sequence[str], t0: float, t1: float,
                bin_width: Optional[float] = None) -> list[ObservationRecord]:
    """Exit counts of ``state`` through ``portals``, one record per bin."""
    edges = [t0, t1] if bin_width is None else list(np.arange(t0, t1, bin_width)) + [t1]
    exits = [(p, t) for _, p, t in state.exits()]
    out = []
    for pid in portals:
        for a, b in zip(edges[:-1], edges[1:]):
            n = sum(1 for p, t in exits if p == pid and a <= t < b)
            out.append(ObservationRecord(pid, "out", float(a), float(b), n))
    return out


def ground_truth(s: Scenario, weights: Sequence[float], seed: int = 12345,
                 sfm: SfmParams = SfmParams(), config: DemandConfig = DemandConfig(),
                 graph: Optional[DecisionGraph] = None,
                 out_portals: Optional[Sequence[str]] = None,
                 bin_width: Optional[float] = None) -> tuple[Scenario, StationState]:
    """Simulate ``s`` under known LCM weights and attach the resulting exit counts.

    The truth run uses its own seed, so the chain never sees the exact
    random draws that produced the observations.
    """
    graph = graph or build_decision_graph(s.infrastructure)
    params = LcmParams.from_infrastructure(s.infrastructure, weights)
    rng = np.random.default_rng(seed)
    d_seed, s_seed = (int(x) for x in rng.integers(0, 2 ** 63 - 1, size=2))
    transfer = TransferTimeEstimates.straight_line(s.infrastructure, sfm.desired_speed)
    demand = generate_demand(s, params, transfer, "calibration", 1.0, d_seed, config)
    routes = [graph.route(a.id, a.origin, a.destination) for a in demand.agents]
    state = simulate(s, demand, routes, sfm, s_seed, graph, record=False)
    if out_portals is None:
        out_portals = sorted({p for ps in params.class_map.values() for p in ps})
    recs = list(s.observations.records) if s.observations else []
    recs += out_records(state, out_portals, 0.0, s.horizon, bin_width)
    return replace(s, observations=ObservationSet(tuple(recs))), state
