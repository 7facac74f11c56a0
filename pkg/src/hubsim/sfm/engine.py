"""Operational layer: integrate social-force dynamics over a demand."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..geometry import Point2
from ..routing import ANCHOR_EPS, DecisionGraph, Route, build_decision_graph
from ..scenario import Infrastructure, Scenario
from . import kernels as K
from .params import SfmParams

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-stamped samples ``[t, x, y, vx, vy]`` of one agent.

    ``exit_portal``/``t_exit`` are ``None`` when the agent is still inside at
    the horizon; ``t_spawn`` is ``None`` when it never found room to enter.
    """

    agent_id: str
    samples: np.ndarray
    exit_portal: Optional[str]
    t_exit: Optional[float]
    t_spawn: Optional[float]
    spawn_delay: float = 0.0

    @property
    def exited(self) -> bool:
        return self.exit_portal is not None


@dataclass(frozen=True, eq=False)
class StationState:
    demand: "Demand"  # noqa: F821
    routes: tuple[Route, ...]
    trajectories: tuple[Trajectory, ...]
    horizon: float
    dt: float

    def trajectory(self, agent_id: str) -> Trajectory:
        return self._by_id[agent_id]

    @property
    def _by_id(self) -> dict[str, Trajectory]:
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {t.agent_id: t for t in self.trajectories}
            object.__setattr__(self, "_cache", cache)
        return cache

    def exits(self) -> list[tuple[str, str, float]]:
        return [(t.agent_id, t.exit_portal, t.t_exit) for t in self.trajectories if t.exited]

    def still_inside(self) -> list[str]:
        return [t.agent_id for t in self.trajectories if t.t_spawn is not None and not t.exited]

    def spawned(self) -> list[str]:
        return [t.agent_id for t in self.trajectories if t.t_spawn is not None]


def _ring_arrays(rings: Sequence[Sequence[Point2]]) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(rings) + 1, dtype=np.int64)
    pts = []
    for k, r in enumerate(rings):
        pts.extend(r)
        ptr[k + 1] = ptr[k] + len(r)
    xy = np.array(pts, dtype=np.float64).reshape(-1, 2)
    return ptr, xy


@dataclass
class GeometryArrays:
    walls: np.ndarray
    obs_ptr: np.ndarray
    obs_xy: np.ndarray
    walk_ptr: np.ndarray
    walk_xy: np.ndarray
    grid: np.ndarray

    @classmethod
    def build(cls, inf: Infrastructure, cell: float) -> "GeometryArrays":
        walls = np.array([[a[0], a[1], b[0], b[1]] for a, b in inf.wall_segments()],
                         dtype=np.float64).reshape(-1, 4)
        obs_ptr, obs_xy = _ring_arrays(inf.obstacles)
        walk_ptr, walk_xy = _ring_arrays(inf.walkable)
        return cls(walls, obs_ptr, obs_xy, walk_ptr, walk_xy, make_grid(inf.bounds, cell))


def make_grid(bounds, cell: float) -> np.ndarray:
    xmin, ymin, xmax, ymax = bounds
    nx = max(1, int(math.ceil((xmax - xmin) / cell)))
    ny = max(1, int(math.ceil((ymax - ymin) / cell)))
    return np.array([xmin, ymin, cell, nx, ny], dtype=np.float64)


@dataclass
class World:
    """Mutable kinematic state of one simulation run.

    Agents are indexed ``0..n-1``; ``route_xy[route_ptr[i]:route_ptr[i+1]]``
    are the targets of agent ``i`` after its origin anchor.
    """

    params: SfmParams
    geom: GeometryArrays
    pos: np.ndarray
    vel: np.ndarray
    status: np.ndarray
    wp: np.ndarray
    route_ptr: np.ndarray
    route_xy: np.ndarray
    dest_seg: np.ndarray
    orig_seg: np.ndarray
    orig_in: np.ndarray
    spawn_u: np.ndarray
    spawn_step: np.ndarray
    use_hash: bool = True
    step_index: int = 0
    spawned_at: np.ndarray = field(default=None)
    exited_at: np.ndarray = field(default=None)
    order: np.ndarray = field(default=None)
    cursor: np.ndarray = field(default=None)
    _p: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = self.pos.shape[0]
        if self.spawned_at is None:
            self.spawned_at = np.full(n, -1, dtype=np.int64)
        if self.exited_at is None:
            self.exited_at = np.full(n, -1, dtype=np.int64)
        if self.order is None:
            self.order = np.argsort(self.spawn_step, kind="stable").astype(np.int64)
        if self.cursor is None:
            self.cursor = np.zeros(1, dtype=np.int64)
        self._p = self.params.packed()

    @property
    def n(self) -> int:
        return self.pos.shape[0]

    @property
    def time(self) -> float:
        return self.step_index * self.params.dt

    def step(self) -> None:
        """Advance one timestep (no trajectory recording)."""
        rec = np.empty((0, 6))
        K.step_world(self.step_index, self.pos, self.vel, self.status, self.wp, self.route_ptr,
                     self.route_xy, self.dest_seg, self.orig_seg, self.orig_in, self.spawn_u,
                     self.spawn_step, self.order, self.cursor, self.geom.walls, self.geom.obs_ptr,
                     self.geom.obs_xy, self.geom.walk_ptr, self.geom.walk_xy, self._p,
                     self.geom.grid, self.use_hash, ANCHOR_EPS, self.spawned_at, self.exited_at,
                     rec, 0, False)
        self.step_index += 1

    def run(self, n_steps: int, record: bool = True) -> np.ndarray:
        """Integrate up to ``n_steps``; returns recorded rows ``[i, t, x, y, vx, vy]``."""
        cap = max(1024, 64 * self.n) if record else 0
        rec = np.empty((cap, 6))
        n_rec = 0
        step = self.step_index
        while True:
            step, n_rec = K.run_world(
                step, n_steps, self.pos, self.vel, self.status, self.wp, self.route_ptr,
                self.route_xy, self.dest_seg, self.orig_seg, self.orig_in, self.spawn_u,
                self.spawn_step, self.order, self.cursor, self.geom.walls, self.geom.obs_ptr,
                self.geom.obs_xy, self.geom.walk_ptr, self.geom.walk_xy, self._p, self.geom.grid,
                self.use_hash, ANCHOR_EPS, self.spawned_at, self.exited_at, rec, n_rec, record)
            if step >= n_steps:
                break
            grown = np.empty((2 * rec.shape[0] + 4 * self.n, 6))
            grown[:n_rec] = rec[:n_rec]
            rec = grown
        self.step_index = step
        return rec[:n_rec]


def social_force(pos: np.ndarray, vel: np.ndarray, index: int, target: Point2,
                 neighbours: Sequence[int], walls: np.ndarray, p: SfmParams) -> np.ndarray:
    """Acceleration on agent ``index`` of the configuration ``pos``/``vel``.

    ``neighbours`` are candidate indices; those beyond the interaction cutoff
    contribute nothing. ``walls`` is an ``(m, 4)`` array of segments.
    """
    cand = np.asarray(list(neighbours), dtype=np.int64)
    walls = np.asarray(walls, dtype=np.float64).reshape(-1, 4)
    fx, fy = K.agent_force(index, np.ascontiguousarray(pos, dtype=np.float64),
                           np.ascontiguousarray(vel, dtype=np.float64), float(target[0]),
                           float(target[1]), cand, cand.shape[0], walls, p.packed())
    return np.array([fx, fy])


def all_forces(pos: np.ndarray, vel: np.ndarray, targets: np.ndarray, walls: np.ndarray,
               p: SfmParams, use_hash: bool, bounds=None) -> np.ndarray:
    """Forces on every agent; ``use_hash`` picks grid neighbour search vs all pairs."""
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    n = pos.shape[0]
    if bounds is None:
        lo = pos.min(axis=0) if n else np.zeros(2)
        hi = pos.max(axis=0) if n else np.ones(2)
        bounds = (lo[0], lo[1], hi[0] + 1e-9, hi[1] + 1e-9)
    grid = make_grid(bounds, p.agent_cutoff)
    active = np.arange(n, dtype=np.int64)
    return K.compute_forces(pos, np.ascontiguousarray(vel, dtype=np.float64),
                            np.ascontiguousarray(targets, dtype=np.float64), active, n,
                            np.asarray(walls, dtype=np.float64).reshape(-1, 4), p.packed(), grid,
                            use_hash)


def _seg_row(seg) -> list[float]:
    (x0, y0), (x1, y1) = seg
    return [x0, y0, x1, y1]


def build_world(s: Scenario, demand, routes: Sequence[Route], p: SfmParams,
                rng: np.random.Generator, graph: DecisionGraph | None = None,
                use_hash: bool = True) -> tuple[World, list[int]]:
    """World for the agents of ``demand`` departing within the horizon.

    Returns the world and, per world slot, the index into ``demand.agents``.
    """
    inf = s.infrastructure
    graph = graph or build_decision_graph(inf)
    portals = {pt.id: pt for pt in inf.portals}
    route_of = {r.agent_id: r for r in routes}
    missing = [a.id for a in demand.agents if a.id not in route_of]
    if missing:
        raise ValueError(f"routes missing for agents: {missing[:5]}")

    u_all = rng.random(len(demand.agents))
    slots = [k for k, a in enumerate(demand.agents) if a.t_dep <= s.horizon]
    n = len(slots)
    route_ptr = np.zeros(n + 1, dtype=np.int64)
    route_pts: list[Point2] = []
    dest = np.zeros((n, 4))
    orig = np.zeros((n, 4))
    inward = np.zeros((n, 2))
    spawn_step = np.zeros(n, dtype=np.int64)
    for j, k in enumerate(slots):
        a = demand.agents[k]
        wps = route_of[a.id].waypoints[1:]
        if not wps:
            raise ValueError(f"agent {a.id}: route has no target beyond its origin")
        route_pts.extend(graph.position(w) for w in wps)
        route_ptr[j + 1] = len(route_pts)
        dest[j] = _seg_row(portals[a.destination].segment)
        orig[j] = _seg_row(portals[a.origin].segment)
        inward[j] = graph.inward[a.origin]
        spawn_step[j] = int(math.ceil(a.t_dep / p.dt - 1e-9))
    world = World(
        params=p,
        geom=GeometryArrays.build(inf, p.agent_cutoff),
        pos=np.zeros((n, 2)),
        vel=np.zeros((n, 2)),
        status=np.zeros(n, dtype=np.int8),
        wp=route_ptr[:-1].copy(),
        route_ptr=route_ptr,
        route_xy=np.array(route_pts, dtype=np.float64).reshape(-1, 2),
        dest_seg=dest,
        orig_seg=orig,
        orig_in=inward,
        spawn_u=u_all[slots] if n else np.zeros(0),
        spawn_step=spawn_step,
        use_hash=use_hash,
    )
    return world, slots


def simulate(s: Scenario, demand, routes: Sequence[Route], p: SfmParams,
             rng: np.random.Generator | int | None = None, graph: DecisionGraph | None = None,
             record: bool = True, use_hash: bool = True) -> StationState:
    """Run the social-force model from t = 0 to the horizon.

    With ``record=False`` only spawn and exit events are kept, which is all
    the objective needs; trajectories then carry empty sample arrays.
    """
    rng = np.random.default_rng(rng)
    world, slots = build_world(s, demand, routes, p, rng, graph, use_hash)
    n_steps = int(math.floor(s.horizon / p.dt + 1e-9))
    rows = world.run(n_steps, record=record)

    per_agent: list[np.ndarray]
    if record and rows.shape[0]:
        order = np.argsort(rows[:, 0], kind="stable")
        rows = rows[order]
        idx = rows[:, 0].astype(np.int64)
        bounds = np.searchsorted(idx, np.arange(world.n + 1))
        per_agent = [rows[bounds[j]:bounds[j + 1], 1:] for j in range(world.n)]
    else:
        per_agent = [np.empty((0, 5)) for _ in range(world.n)]

    trajs = []
    for j, k in enumerate(slots):
        a = demand.agents[k]
        sp = int(world.spawned_at[j])
        ex = int(world.exited_at[j])
        t_spawn = sp * p.dt if sp >= 0 else None
        trajs.append(Trajectory(
            agent_id=a.id,
            samples=per_agent[j],
            exit_portal=a.destination if ex >= 0 else None,
            t_exit=ex * p.dt if ex >= 0 else None,
            t_spawn=t_spawn,
            spawn_delay=(t_spawn - a.t_dep) if t_spawn is not None else 0.0,
        ))
    route_of = {r.agent_id: r for r in routes}
    return StationState(demand, tuple(route_of[a.id] for a in demand.agents), tuple(trajs),
                        s.horizon, p.dt)
