"""CSV dumps of demands, routes, trajectories, exit logs and chain traces.

Every writer uses fixed column order, fixed float formats and LF line
endings, so two runs with the same seed produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .demand import AgentPlan, Demand, LcmParams
from .routing import DecisionGraph, Route
from .scenario import ObservationRecord
from .sfm import StationState, Trajectory

DEMAND_HEADER = ("agent_id", "activity", "origin", "destination", "t_dep_s", "bound_mode")
ROUTES_HEADER = ("agent_id", "waypoint_index", "node_id", "x_m", "y_m")
TRAJ_HEADER = ("agent_id", "t_s", "x_m", "y_m", "vx", "vy")
EXITS_HEADER = ("agent_id", "portal_id", "t_exit_s")
SPAWNS_HEADER = ("agent_id", "t_spawn_s", "spawn_delay_s")
TRACE_HEADER = ("iter", "proposed_of", "accepted", "best_of", "temperature")
OBJECTIVE_HEADER = ("iteration", "of1", "of2", "y", "combined")
VALIDATION_HEADER = ("portal_id", "direction", "t0_s", "t1_s", "observed", "simulated",
                     "pct_error")


def fmt_float(x: float) -> str:
    return format(float(x), ".10g")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")
    return path


def _read(path: Path, header: Sequence[str]) -> list[dict[str, str]]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != tuple(header):
            raise ValueError(f"{path}: expected header {','.join(header)}, got {r.fieldnames}")
        return list(r)


# --- demand / routes ---------------------------------------------------------


def write_demand(path, demand: Demand) -> Path:
    return write_csv(path, DEMAND_HEADER, (
        (a.id, a.activity, a.origin, a.destination, repr(float(a.t_dep)), a.bound_mode or "")
        for a in demand.agents))


def read_demand(path) -> Demand:
    return Demand(tuple(
        AgentPlan(r["agent_id"], r["activity"], r["origin"], r["destination"], float(r["t_dep_s"]),
                  r["bound_mode"] or None)
        for r in _read(path, DEMAND_HEADER)))


def write_routes(path, routes: Sequence[Route], graph: DecisionGraph) -> Path:
    rows = []
    for rt in routes:
        for k, node in enumerate(rt.waypoints):
            x, y = graph.position(node)
            rows.append((rt.agent_id, k, node, f"{x:.4f}", f"{y:.4f}"))
    return write_csv(path, ROUTES_HEADER, rows)


def read_routes(path) -> list[Route]:
    out: dict[str, list[tuple[int, str]]] = {}
    for r in _read(path, ROUTES_HEADER):
        out.setdefault(r["agent_id"], []).append((int(r["waypoint_index"]), r["node_id"]))
    return [Route(aid, tuple(n for _, n in sorted(wps))) for aid, wps in out.items()]


# --- trajectories / exits ------------------------------------------------------


def write_trajectories(path, state: StationState) -> Path:
    def rows():
        for tr in state.trajectories:
            for t, x, y, vx, vy in tr.samples:
                yield (tr.agent_id, f"{t:.3f}", f"{x:.4f}", f"{y:.4f}", f"{vx:.4f}", f"{vy:.4f}")
    return write_csv(path, TRAJ_HEADER, rows())


def write_exits(path, state: StationState) -> Path:
    return write_csv(path, EXITS_HEADER, (
        (aid, pid, f"{t:.3f}") for aid, pid, t in sorted(state.exits(), key=lambda e: (e[2], e[0]))))


def write_spawns(path, state: StationState) -> Path:
    return write_csv(path, SPAWNS_HEADER, (
        (tr.agent_id, f"{tr.t_spawn:.3f}", f"{tr.spawn_delay:.3f}")
        for tr in state.trajectories if tr.t_spawn is not None))


def read_exits(path) -> list[tuple[str, str, float]]:
    return [(r["agent_id"], r["portal_id"], float(r["t_exit_s"])) for r in _read(path, EXITS_HEADER)]


def read_trajectories(path) -> dict[str, np.ndarray]:
    acc: dict[str, list[list[float]]] = {}
    for r in _read(path, TRAJ_HEADER):
        acc.setdefault(r["agent_id"], []).append(
            [float(r["t_s"]), float(r["x_m"]), float(r["y_m"]), float(r["vx"]), float(r["vy"])])
    return {k: np.array(v, dtype=float).reshape(-1, 5) for k, v in acc.items()}


# --- chain ---------------------------------------------------------------------


def write_trace(path, trace) -> Path:
    return write_csv(path, TRACE_HEADER, (
        (e.iteration, fmt_float(e.proposed_of), int(e.accepted), fmt_float(e.best_of),
         fmt_float(e.temperature)) for e in trace.entries))


def write_objective_log(path, trace) -> Path:
    return write_csv(path, OBJECTIVE_HEADER, (
        (e.iteration, fmt_float(e.of1), fmt_float(e.of2), e.y, fmt_float(e.proposed_of))
        for e in trace.entries))


def write_validation(path, table) -> Path:
    return write_csv(path, VALIDATION_HEADER, (
        (r.portal_id, r.direction, fmt_float(r.t0), fmt_float(r.t1), r.observed, r.simulated,
         f"{r.percent_error:.2f}") for r in table.rows))


def write_params(path, params: LcmParams, rates: Sequence[ObservationRecord] = (),
                 extra: Optional[dict] = None) -> Path:
    """Calibrated parameters: the LCM plus the entrance loading it was fitted with."""
    doc = {
        "lcm": params.as_dict(),
        "entrance_rates": [
            {"portal_id": r.portal_id, "t0_s": r.t0, "t1_s": r.t1, "count": r.count}
            for r in rates
        ],
    }
    if extra:
        doc.update(extra)
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8",
                    newline="")
    return path


def read_params(path) -> tuple[LcmParams, tuple[ObservationRecord, ...]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "lcm" not in doc:
        raise ValueError(f"{path}: missing 'lcm' section")
    rates = tuple(ObservationRecord(r["portal_id"], "in", float(r["t0_s"]), float(r["t1_s"]),
                                    int(r["count"])) for r in doc.get("entrance_rates", []))
    return LcmParams.from_dict(doc["lcm"]), rates


# --- state directory -------------------------------------------------------------


def write_state(out: Path, state: StationState, graph: DecisionGraph) -> None:
    out = Path(out)
    write_demand(out / "demand.csv", state.demand)
    write_routes(out / "routes.csv", state.routes, graph)
    write_spawns(out / "spawns.csv", state)
    write_exits(out / "exits.csv", state)
    write_trajectories(out / "trajectories.csv", state)


def read_state(out: Path, horizon: float, dt: float) -> StationState:
    """Rebuild a state from the CSVs written by :func:`write_state`."""
    out = Path(out)
    demand = read_demand(out / "demand.csv")
    routes = {r.agent_id: r for r in read_routes(out / "routes.csv")}
    exits = {aid: (pid, t) for aid, pid, t in read_exits(out / "exits.csv")}
    spawns = {r["agent_id"]: (float(r["t_spawn_s"]), float(r["spawn_delay_s"]))
              for r in _read(out / "spawns.csv", SPAWNS_HEADER)}
    samples = read_trajectories(out / "trajectories.csv")
    trajs = []
    for a in demand.agents:
        if a.t_dep > horizon:
            continue
        pid, te = exits.get(a.id, (None, None))
        ts, delay = spawns.get(a.id, (None, 0.0))
        trajs.append(Trajectory(a.id, samples.get(a.id, np.empty((0, 5))), pid, te, ts, delay))
    return StationState(demand, tuple(routes[a.id] for a in demand.agents), tuple(trajs),
                        horizon, dt)
