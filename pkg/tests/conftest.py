import numpy as np
import pytest

from hubsim.demand import AgentPlan, Demand, LcmParams, TransferTimeEstimates, generate_demand
from hubsim.routing import Route, build_decision_graph
from hubsim.scenario import (
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
from hubsim.sfm import SfmParams, StationState, Trajectory, simulate
from hubsim.synthetic import HUB_TRUTH, ground_truth, hub_scenario


def square_infrastructure(size=10.0, portals=None, obstacles=(), decision_points=()):
    portals = portals or (
        Portal("A", ((0.0, 6.0), (0.0, 4.0)), "entrance", frozenset({"a"})),
        Portal("B", ((size, 4.0), (size, 6.0)), "entrance", frozenset({"b"})),
    )
    return Infrastructure(
        walkable=(((0.0, 0.0), (size, 0.0), (size, size), (0.0, size)),),
        obstacles=tuple(obstacles),
        portals=tuple(portals),
        decision_points=tuple(decision_points),
    )


def make_state(agents, horizon=900.0, dt=0.05):
    """State without samples. ``agents``: (id, origin, destination, t_dep, exit_time or None[, bound_mode])."""
    plans, trajs = [], []
    for row in agents:
        aid, o, d, t, te = row[:5]
        bound = row[5] if len(row) > 5 else None
        plans.append(AgentPlan(aid, "work", o, d, float(t), bound))
        trajs.append(Trajectory(aid, np.empty((0, 5)), d if te is not None else None, te, float(t)))
    return StationState(Demand(tuple(plans)), tuple(Route(a.id, (a.origin, a.destination)) for a in plans),
                        tuple(trajs), horizon, dt)


@pytest.fixture
def square():
    return square_infrastructure()


@pytest.fixture(scope="session")
def hub():
    return hub_scenario()


@pytest.fixture(scope="session")
def hub_graph(hub):
    return build_decision_graph(hub.infrastructure)


@pytest.fixture(scope="session")
def hub_truth(hub, hub_graph):
    """Hub with exit counts from a ground-truth run, plus that run's state."""
    return ground_truth(hub, HUB_TRUTH, graph=hub_graph)


@pytest.fixture(scope="session")
def hub_state(hub, hub_graph):
    """A recorded simulation of the hub under uniform weights."""
    params = LcmParams.from_infrastructure(hub.infrastructure)
    tr = TransferTimeEstimates.straight_line(hub.infrastructure, 1.34)
    d = generate_demand(hub, params, tr, "calibration", rng=7)
    routes = [hub_graph.route(a.id, a.origin, a.destination) for a in d.agents]
    return simulate(hub, d, routes, SfmParams(), rng=8, graph=hub_graph)
