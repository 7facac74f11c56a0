"""Scoring a simulated station state against counts and the schedule.

The combined objective is minimised::

    OF = max(of1, eps) * max(of2, eps) ** alpha * exp(beta * Y)

of1 is the squared-count residual against observations, of2 the product of
per-mode un/loading pattern residuals and Y the number of agents that fit
no scheduled vehicle. Incoherence enters as ``exp(+beta * Y)`` so that
every term shrinks toward better states; a decaying ``exp(-Y)`` factor
would reward incoherent states under minimisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .demand import UnloadingModel
from .scenario import ObservationRecord, ObservationSet, Scenario, Schedule


class ObjectiveConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveConfig:
    alpha: float = 1.0
    beta: float = 2.0
    eps: float = 1.0
    window: float = 300.0
    bin_width: float = 10.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ObjectiveConfigError(f"alpha and beta must be >= 0, got {self.alpha}, {self.beta}")
        if not (self.eps > 0 and self.window > 0 and self.bin_width > 0):
            raise ObjectiveConfigError("eps, window and bin_width must be positive")


@dataclass(frozen=True)
class ModeAssignment:
    """Agents matched to each vehicle, with their alighting or boarding time."""

    modes: Mapping[str, tuple[tuple[str, float], ...]]
    unassigned: tuple[str, ...]

    @property
    def y(self) -> int:
        return len(self.unassigned)

    def agents(self, mode_id: str) -> list[str]:
        return [a for a, _ in self.modes.get(mode_id, ())]

    def count(self, mode_id: str) -> int:
        return len(self.modes.get(mode_id, ()))


@dataclass(frozen=True)
class ModeLoadPattern:
    mode_id: str
    edges: np.ndarray
    observed: np.ndarray
    model: np.ndarray

    @property
    def rss(self) -> float:
        return float(np.sum((self.observed - self.model) ** 2))


@dataclass(frozen=True)
class ObjectiveReport:
    of1: float
    of2: float
    y: int
    combined: float
    log_combined: float
    residuals: tuple[tuple[ObservationRecord, int], ...] = ()
    mode_residuals: Mapping[str, float] = field(default_factory=dict)
    assignment: Optional[ModeAssignment] = None


def _platforms(schedule: Schedule, platforms: Optional[Iterable[str]]) -> set[str]:
    if platforms is not None:
        return set(platforms)
    return {e.platform for e in schedule.events}


def assign_modes(state, c: Schedule, window: float = 300.0,
                 platforms: Optional[Iterable[str]] = None) -> ModeAssignment:
    """Match platform-related agents to vehicles.

    An agent entering from platform ``p`` at ``t_dep`` alights from the latest
    arrival at ``p`` with ``time <= t_dep <= time + window``. An agent leaving
    through ``p`` at ``t_exit`` boards the earliest departure at ``p`` with
    ``t_exit <= time <= t_exit + window``. An agent still walking to a
    platform at the horizon is incoherent unless a departure is still due.
    """
    plats = _platforms(c, platforms)
    arrivals: dict[str, list] = {}
    departures: dict[str, list] = {}
    for e in c.events:
        (arrivals if e.direction == "arrival" else departures).setdefault(e.platform, []).append(e)

    modes: dict[str, list[tuple[str, float]]] = {e.mode_id: [] for e in c.events}
    unassigned: list[str] = []
    plans = {a.id: a for a in state.demand.agents}
    for tr in state.trajectories:
        a = plans[tr.agent_id]
        ok = True
        if a.origin in plats:
            cands = [e for e in arrivals.get(a.origin, []) if e.time <= a.t_dep <= e.time + window]
            if cands:
                ev = max(cands, key=lambda e: (e.time, e.mode_id))
                modes[ev.mode_id].append((a.id, tr.t_spawn if tr.t_spawn is not None else a.t_dep))
            else:
                ok = False
        if a.destination in plats:
            deps = departures.get(a.destination, [])
            if tr.exited:
                cands = [e for e in deps if tr.t_exit <= e.time <= tr.t_exit + window]
                if cands:
                    ev = min(cands, key=lambda e: (e.time, e.mode_id))
                    modes[ev.mode_id].append((a.id, tr.t_exit))
                else:
                    ok = False
            elif not any(e.time >= state.horizon for e in deps):
                ok = False
        if not ok:
            unassigned.append(a.id)
    return ModeAssignment({k: tuple(sorted(v)) for k, v in modes.items()}, tuple(sorted(unassigned)))


def simulated_counts(state, records: Sequence[ObservationRecord]) -> list[int]:
    """O_i(state): entries are counted at planned departure, exits at exit time."""
    entries: dict[str, list[float]] = {}
    exits: dict[str, list[float]] = {}
    plans = {a.id: a for a in state.demand.agents}
    for tr in state.trajectories:
        a = plans[tr.agent_id]
        entries.setdefault(a.origin, []).append(a.t_dep)
        if tr.exited:
            exits.setdefault(tr.exit_portal, []).append(tr.t_exit)
    out = []
    for r in records:
        times = (entries if r.direction == "in" else exits).get(r.portal_id, [])
        out.append(sum(1 for t in times if r.t0 <= t < r.t1))
    return out


def of1(state, d: ObservationSet) -> float:
    sims = simulated_counts(state, d.records)
    return float(sum((s - r.count) ** 2 for s, r in zip(sims, d.records)))


def load_patterns(state, c: Schedule, assignment: ModeAssignment, model: UnloadingModel,
                  bin_width: float = 10.0, window: float = 300.0) -> list[ModeLoadPattern]:
    """Cumulative alighting/boarding curves next to the bottleneck model.

    Arrivals are binned forward from the arrival time and compared with
    ``min(c k w, n)``; departures backward from the departure time against
    ``max(n - c k w, 0)``, the latest schedule the stairs allow.
    """
    out = []
    nb = int(math.ceil(window / bin_width))
    for e in c.events:
        entries = assignment.modes.get(e.mode_id, ())
        if not entries:
            continue
        times = np.sort(np.array([t for _, t in entries], dtype=float))
        n = len(times)
        cap = model.capacity(e.platform)
        if e.direction == "arrival":
            k = np.arange(1, nb + 1)
            edges = e.time + k * bin_width
            curve = np.minimum(cap * k * bin_width, n)
        else:
            k = np.arange(0, nb)
            edges = e.time - k * bin_width
            curve = np.maximum(n - cap * k * bin_width, 0.0)
        observed = np.searchsorted(times, edges, side="right").astype(float)
        out.append(ModeLoadPattern(e.mode_id, edges, observed, curve))
    return out


def of2(state, c: Schedule, assignment: ModeAssignment, model: UnloadingModel,
        bin_width: float = 10.0, window: float = 300.0, eps: float = 1.0) -> float:
    """Product of floored per-mode pattern residuals; 1.0 when no mode has agents."""
    return math.exp(_log_of2(load_patterns(state, c, assignment, model, bin_width, window), eps))


def _log_of2(patterns: Sequence[ModeLoadPattern], eps: float) -> float:
    return float(sum(math.log(max(p.rss, eps)) for p in patterns))


def combine(of1_value: float, of2_value: float, y: int, alpha: float, beta: float,
            eps: float = 1.0) -> float:
    return max(of1_value, eps) * max(of2_value, eps) ** alpha * math.exp(beta * y)


def log_combine(of1_value: float, log_of2_value: float, y: int, alpha: float, beta: float,
                eps: float = 1.0) -> float:
    return (math.log(max(of1_value, eps)) + alpha * max(log_of2_value, math.log(eps))
            + beta * y)


def combined_objective(state, scenario: Scenario, alpha: float = 1.0, beta: float = 2.0,
                       config: ObjectiveConfig | None = None,
                       model: UnloadingModel | None = None,
                       use_observations: Optional[bool] = None) -> ObjectiveReport:
    """Full report for one state.

    ``use_observations`` defaults to whether the scenario carries counts; in
    scenario mode of1 is the constant 1.
    """
    cfg = config or ObjectiveConfig(alpha=alpha, beta=beta)
    if alpha < 0 or beta < 0:
        raise ObjectiveConfigError(f"alpha and beta must be >= 0, got {alpha}, {beta}")
    model = model or UnloadingModel()
    if use_observations is None:
        use_observations = scenario.observations is not None
    inf = scenario.infrastructure
    platforms = {p.id for p in inf.portals if p.kind == "platform-access"}
    assignment = assign_modes(state, scenario.schedule, cfg.window, platforms)

    residuals: tuple = ()
    if use_observations:
        recs = scenario.observations.records
        sims = simulated_counts(state, recs)
        residuals = tuple(zip(recs, sims))
        v1 = float(sum((s - r.count) ** 2 for r, s in residuals))
    else:
        v1 = 1.0
    patterns = load_patterns(state, scenario.schedule, assignment, model, cfg.bin_width, cfg.window)
    lo2 = _log_of2(patterns, cfg.eps)
    y = assignment.y
    log_total = log_combine(v1, lo2, y, alpha, beta, cfg.eps)
    try:
        total = math.exp(log_total)
    except OverflowError:
        total = math.inf
    try:
        v2 = math.exp(lo2)
    except OverflowError:
        v2 = math.inf
    return ObjectiveReport(
        of1=v1, of2=v2, y=y, combined=total, log_combined=log_total, residuals=residuals,
        mode_residuals={p.mode_id: p.rss for p in patterns}, assignment=assignment,
    )
