"""Strategic layer: who enters where and when, and where they are heading."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .scenario import (
    Infrastructure,
    ObservationRecord,
    ObservationSet,
    Scenario,
    VehicleEvent,
)

log = logging.getLogger(__name__)

Mode = Literal["calibration", "scenario"]
SIMPLEX_TOL = 1e-9


class DemandError(Exception):
    pass


class NoReachableDestination(DemandError):
    pass


class InfeasibleBoarding(DemandError):
    pass


@dataclass(frozen=True)
class LcmParams:
    """Location-choice weights over attraction classes.

    ``weights[j]`` is the probability of class ``classes[j]``; ``class_map``
    lists the portals offering each class.
    """

    classes: tuple[str, ...]
    weights: tuple[float, ...]
    class_map: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.classes) < 1:
            raise ValueError("LcmParams needs at least one attraction class")
        if len(self.weights) != len(self.classes):
            raise ValueError("LcmParams: one weight per class required")
        if any(not (0.0 <= w <= 1.0) for w in self.weights):
            raise ValueError(f"LcmParams: weights must lie in [0, 1], got {self.weights}")
        if abs(sum(self.weights) - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"LcmParams: weights must sum to 1, got {sum(self.weights)!r}")
        for c in self.classes:
            if not self.class_map.get(c):
                raise ValueError(f"LcmParams: class {c!r} maps to no portal")

    @classmethod
    def from_infrastructure(cls, inf: Infrastructure,
                            weights: Optional[Mapping[str, float] | Sequence[float]] = None) -> "LcmParams":
        """Classes are the sorted attraction tags found on portals; uniform weights by default."""
        cmap: dict[str, list[str]] = {}
        for p in inf.portals:
            for tag in p.attraction_tags:
                cmap.setdefault(tag, []).append(p.id)
        classes = tuple(sorted(cmap))
        if weights is None:
            w = np.full(len(classes), 1.0 / max(len(classes), 1))
        elif isinstance(weights, Mapping):
            w = np.array([float(weights[c]) for c in classes])
        else:
            w = np.asarray(weights, dtype=float)
        return cls(classes, tuple(normalize_simplex(w)), {c: tuple(cmap[c]) for c in classes})

    def with_weights(self, w: Sequence[float]) -> "LcmParams":
        return replace(self, weights=tuple(normalize_simplex(np.asarray(w, dtype=float))))

    def as_array(self) -> np.ndarray:
        return np.array(self.weights, dtype=float)

    def as_dict(self) -> dict:
        return {"classes": list(self.classes), "weights": list(self.weights),
                "class_map": {c: list(self.class_map[c]) for c in self.classes}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LcmParams":
        classes = tuple(d["classes"])
        return cls(classes, tuple(float(w) for w in d["weights"]),
                   {c: tuple(d["class_map"][c]) for c in classes})


def normalize_simplex(w: np.ndarray) -> np.ndarray:
    w = np.clip(np.asarray(w, dtype=float), 0.0, 1.0)
    s = w.sum()
    if s <= 0:
        raise ValueError("cannot normalize an all-zero weight vector")
    w = w / s
    # push the rounding residue onto the largest entry so the sum is exact to ~1 ulp
    w[np.argmax(w)] += 1.0 - w.sum()
    return np.clip(w, 0.0, 1.0)


@dataclass(frozen=True)
class AgentPlan:
    id: str
    activity: str
    origin: str
    destination: str
    t_dep: float
    bound_mode: Optional[str] = None

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError(f"agent {self.id}: origin equals destination ({self.origin})")


@dataclass(frozen=True)
class Demand:
    agents: tuple[AgentPlan, ...] = ()

    def __post_init__(self):
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("Demand: agent ids must be unique")

    def __len__(self) -> int:
        return len(self.agents)

    def agent(self, agent_id: str) -> AgentPlan:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)


@dataclass(frozen=True)
class TransferTimeEstimates:
    matrix: Mapping[tuple[str, str], float]

    def __post_init__(self):
        bad = {k: v for k, v in self.matrix.items() if not v > 0}
        if bad:
            raise ValueError(f"transfer times must be positive: {bad}")

    def __call__(self, origin: str, destination: str) -> float:
        return self.matrix[(origin, destination)]

    @classmethod
    def straight_line(cls, inf: Infrastructure, speed: float) -> "TransferTimeEstimates":
        """Initial guess: midpoint-to-midpoint distance over desired speed."""
        m = {}
        for a in inf.portals:
            for b in inf.portals:
                if a.id != b.id:
                    (ax, ay), (bx, by) = a.midpoint, b.midpoint
                    m[(a.id, b.id)] = max(math.hypot(bx - ax, by - ay) / speed, 1e-3)
        return cls(m)

    def refreshed(self, state) -> "TransferTimeEstimates":
        """Replace entries with mean simulated walk times where agents completed the trip."""
        sums: dict[tuple[str, str], list[float]] = {}
        plans = {a.id: a for a in state.demand.agents}
        for t in state.trajectories:
            if t.exited and t.t_spawn is not None:
                a = plans[t.agent_id]
                sums.setdefault((a.origin, a.destination), []).append(t.t_exit - t.t_spawn)
        m = dict(self.matrix)
        for k, v in sums.items():
            m[k] = max(float(np.mean(v)), 1e-3)
        return TransferTimeEstimates(m)


@dataclass(frozen=True)
class UnloadingModel:
    """Bottleneck release through platform stairs (ped/s per platform portal)."""

    stair_capacity: Mapping[str, float] = field(default_factory=dict)
    default_capacity: float = 2.0
    jitter: float = 0.5

    def __post_init__(self):
        if not self.default_capacity > 0 or any(not c > 0 for c in self.stair_capacity.values()):
            raise ValueError("stair capacity must be positive")

    def capacity(self, platform: str) -> float:
        return float(self.stair_capacity.get(platform, self.default_capacity))


def bottleneck_cumulative(t: np.ndarray | float, t_arr: float, capacity: float, n: int):
    """Cumulative releases of the deterministic queue: min(c (t - t_arr), n), zero before t_arr."""
    return np.minimum(capacity * np.maximum(np.asarray(t, dtype=float) - t_arr, 0.0), n)


# ---------------------------------------------------------------------------
# elementary draws
# ---------------------------------------------------------------------------


def _nearest_portal(inf: Infrastructure, origin: str, candidates: Sequence[str]) -> str:
    ox, oy = inf.portal(origin).midpoint

    def key(pid):
        x, y = inf.portal(pid).midpoint
        return (math.hypot(x - ox, y - oy), pid)

    return min(candidates, key=key)


def sample_destination(params: LcmParams, origin: str, rng: np.random.Generator,
                       inf: Infrastructure) -> str:
    """Draw an attraction class, then the nearest portal of that class other than ``origin``.

    Classes offered only by the origin are redrawn; this is done by
    renormalising over the remaining classes so each call consumes exactly
    one uniform from ``rng``.
    """
    options = []
    weights = []
    for c, w in zip(params.classes, params.weights):
        cands = [pid for pid in params.class_map[c] if pid != origin]
        if cands:
            options.append(cands)
            weights.append(w)
    u = rng.random()
    total = float(sum(weights))
    if not options or total <= 0.0:
        raise NoReachableDestination(f"no reachable destination from {origin}")
    cum = np.cumsum(weights) / total
    j = int(np.searchsorted(cum, u, side="right"))
    j = min(j, len(options) - 1)
    while weights[j] == 0.0:  # u landed on a zero-width bin boundary
        j -= 1
    return _nearest_portal(inf, origin, options[j])


def portal_arrivals_from_counts(obs: ObservationSet, portal: str, rng: np.random.Generator) -> list[float]:
    """Entry times consistent with the observed in-counts of one portal.

    A Poisson process conditioned on its count is a set of i.i.d. uniforms on
    the interval, so each record with count n yields exactly n sorted times,
    floored to whole seconds.
    """
    times: list[float] = []
    for r in sorted(obs.for_portal(portal, "in"), key=lambda r: r.t0):
        times.extend(_conditioned_times(r.t0, r.t1, r.count, rng))
    return times


def _conditioned_times(t0: float, t1: float, n: int, rng: np.random.Generator) -> list[float]:
    if n <= 0:
        return []
    u = np.sort(rng.uniform(t0, t1, size=n))
    return [float(min(max(math.floor(x), t0), math.ceil(t1) - 1)) for x in u]


def unloading_release_times(event: VehicleEvent, model: UnloadingModel, n: int,
                            rng: np.random.Generator) -> list[float]:
    """Release instants of ``n`` passengers queueing through the platform stairs.

    The k-th passenger leaves at ``t_arr + k / c`` plus uniform jitter,
    never before the arrival itself.
    """
    if event.direction != "arrival":
        raise ValueError(f"event {event.mode_id} is not an arrival")
    if n <= 0:
        return []
    c = model.capacity(event.platform)
    base = event.time + np.arange(1, n + 1) / c
    jit = rng.uniform(-model.jitter, model.jitter, size=n)
    return sorted(float(x) for x in np.maximum(base + jit, event.time))


class BoardingSlot(NamedTuple):
    t_dep: float
    tight: bool


def departure_time_for_boarding(event: VehicleEvent, transfer: TransferTimeEstimates, origin: str,
                                buffer: float, rng: np.random.Generator,
                                jitter_max: float = 30.0) -> BoardingSlot:
    """Latest comfortable start time to make a departure; ``tight`` when clamped at 0."""
    if event.direction != "departure":
        raise ValueError(f"event {event.mode_id} is not a departure")
    jitter = rng.uniform(0.0, jitter_max) if jitter_max > 0 else 0.0
    t = event.time - transfer(origin, event.platform) - buffer - jitter
    if t > event.time:
        raise InfeasibleBoarding(f"boarding {event.mode_id} from {origin}: t_dep {t} after departure")
    if t < 0.0:
        return BoardingSlot(0.0, True)
    return BoardingSlot(float(t), False)


# ---------------------------------------------------------------------------
# composed generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DemandConfig:
    buffer: float = 60.0
    jitter_max: float = 30.0
    unloading: UnloadingModel = field(default_factory=UnloadingModel)


def entrance_rates(s: Scenario) -> tuple[ObservationRecord, ...]:
    """In-count records at entrance portals: the portal loading kept after calibration."""
    if s.observations is None:
        return ()
    entrances = {p.id for p in s.infrastructure.portals if p.kind == "entrance"}
    return tuple(r for r in s.observations.records if r.direction == "in" and r.portal_id in entrances)


def apportion(quotas: Sequence[float]) -> list[int]:
    """Largest-remainder rounding that preserves round(sum(quotas))."""
    q = np.asarray(quotas, dtype=float)
    if q.size == 0:
        return []
    base = np.floor(q).astype(int)
    target = int(round(float(q.sum())))
    short = target - int(base.sum())
    rem = q - base
    order = sorted(range(q.size), key=lambda i: (-rem[i], i))
    for i in order[:max(short, 0)]:
        base[i] += 1
    return [int(x) for x in base]


def _bound_departure(s: Scenario, platform: str, t_ready: float) -> Optional[VehicleEvent]:
    deps = [e for e in s.schedule.departures() if e.platform == platform]
    if not deps:
        return None
    feasible = [e for e in deps if e.time >= t_ready]
    return min(feasible, key=lambda e: (e.time, e.mode_id)) if feasible else None


def generate_demand(s: Scenario, params: LcmParams, transfer: TransferTimeEstimates, mode: Mode,
                    demand_scale: float = 1.0, rng: np.random.Generator | int | None = None,
                    config: DemandConfig = DemandConfig(),
                    rates: Optional[Sequence[ObservationRecord]] = None) -> Demand:
    """Build per-agent plans for a scenario.

    Calibration mode seeds entrances from the observed in-counts exactly.
    Scenario mode seeds them from ``rates`` (the calibrated loading) scaled
    by ``demand_scale``; train loads are scaled too so the whole population
    grows by the same factor. Random draws come from four independent
    streams (entry times, unloading, destinations, boarding jitter) so that a
    change of LCM weights only moves destinations.
    """
    if mode not in ("calibration", "scenario"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "calibration":
        if s.observations is None:
            raise DemandError("calibration mode requires observations")
        if demand_scale != 1.0:
            raise DemandError("calibration mode reproduces the observed counts; demand_scale must be 1")
        rates = entrance_rates(s)
    elif rates is None:
        rates = entrance_rates(s)
    rng = np.random.default_rng(rng)
    r_times, r_unload, r_dest, r_board = rng.spawn(4)
    inf = s.infrastructure
    activity = s.activities.default_type()
    arrivals = s.schedule.arrivals()

    quotas = [r.count * demand_scale for r in rates] + [(e.expected_load or 0) * demand_scale
                                                       for e in arrivals]
    if mode == "calibration":
        counts = [r.count for r in rates] + [e.expected_load or 0 for e in arrivals]
    else:
        counts = apportion(quotas)
    for e, n in zip(arrivals, counts[len(rates):]):
        if n > e.capacity:
            log.warning("mode %s: scaled load %d exceeds capacity %d", e.mode_id, n, e.capacity)

    # (origin, time, id, alighting mode)
    seeds: list[tuple[str, float, str, Optional[str]]] = []
    per_portal: dict[str, int] = {}
    for r, n in zip(rates, counts[:len(rates)]):
        for t in _conditioned_times(r.t0, r.t1, n, r_times):
            k = per_portal.get(r.portal_id, 0)
            per_portal[r.portal_id] = k + 1
            seeds.append((r.portal_id, t, f"{r.portal_id}-{k:05d}", None))
    for e, n in zip(arrivals, counts[len(rates):]):
        for k, t in enumerate(unloading_release_times(e, config.unloading, n, r_unload)):
            seeds.append((e.platform, t, f"{e.mode_id}-{k:04d}", e.mode_id))

    agents = []
    for origin, t, aid, alight in seeds:
        dest = sample_destination(params, origin, r_dest, inf)
        bound = alight
        t_dep = t
        if alight is None and inf.portal(dest).kind == "platform-access":
            if mode == "calibration":
                ev = _bound_departure(s, dest, t + transfer(origin, dest))
                bound = ev.mode_id if ev else None
            else:
                ev = _bound_departure(s, dest, t + transfer(origin, dest))
                if ev is None:
                    later = [e for e in s.schedule.departures() if e.platform == dest]
                    ev = max(later, key=lambda e: e.time) if later else None
                if ev is not None:
                    slot = departure_time_for_boarding(ev, transfer, origin, config.buffer, r_board,
                                                       config.jitter_max)
                    t_dep = slot.t_dep
                    bound = ev.mode_id
        t_dep = min(max(t_dep, 0.0), s.horizon)
        agents.append(AgentPlan(aid, activity, origin, dest, float(t_dep), bound))
    agents.sort(key=lambda a: (a.t_dep, a.id))
    return Demand(tuple(agents))
