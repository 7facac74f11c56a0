"""Markov-chain search over station states by simulated annealing.

Each iteration proposes a correction, regenerates (calibration mode) or
edits (scenario mode) the demand, re-simulates and scores the state. The
chain reuses one stream of random numbers for demand generation and one for
the simulation, so a state is a deterministic function of the LCM weights
in calibration mode: nearby weight vectors that produce the same
destinations produce the same state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .config import AnnealSchedule, CorrectionConfig, RunConfig
from .demand import (
    AgentPlan,
    Demand,
    DemandError,
    LcmParams,
    Mode,
    TransferTimeEstimates,
    departure_time_for_boarding,
    entrance_rates,
    generate_demand,
    normalize_simplex,
)
from .objective import ModeAssignment, ObjectiveReport, combined_objective
from .routing import DecisionGraph, RoutingError, build_decision_graph
from .scenario import ObservationRecord, Scenario, Schedule
from .sfm import StationState, simulate

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# LCM proposals
# ---------------------------------------------------------------------------


def portal_residuals(report: ObjectiveReport) -> dict[str, float]:
    """Signed outflow discrepancy (simulated - observed) per portal."""
    out: dict[str, float] = {}
    for rec, sim in report.residuals:
        if rec.direction == "out":
            out[rec.portal_id] = out.get(rec.portal_id, 0.0) + (sim - rec.count)
    return out


def class_residuals(params: LcmParams, residuals: Mapping[str, float]) -> np.ndarray:
    return np.array([sum(residuals.get(pid, 0.0) for pid in params.class_map[c])
                     for c in params.classes], dtype=float)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def selection_probabilities(class_res: np.ndarray, bias: float) -> np.ndarray:
    """Mixture of a residual softmax and the uniform law, row-wise.

    Residual magnitudes are scaled so the worst class is ``e^3`` times more
    likely than a perfectly fitted one; every class keeps positive mass.
    """
    class_res = np.atleast_2d(class_res)
    j = class_res.shape[1]
    mag = np.abs(class_res)
    scale = np.maximum(mag.max(axis=1, keepdims=True), 1.0) / 3.0
    return bias * _softmax(mag / scale) + (1.0 - bias) / j


def propose_batch(weights: np.ndarray, class_res: np.ndarray, cfg: CorrectionConfig,
                  rng: np.random.Generator, directed: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """One proposal per row of ``weights``; returns ``(new_weights, chosen_class)``.

    ``directed=False`` means no residual information: uniform selection,
    random sign, full amplitude.
    """
    w = np.array(weights, dtype=float, copy=True)
    m, J = w.shape
    if J == 1:
        return w, np.zeros(m, dtype=np.int64)
    bias = cfg.bias_strength if directed else 0.0
    q = selection_probabilities(class_res, bias) if directed else np.full((m, J), 1.0 / J)
    cum = np.cumsum(q, axis=1)
    u = rng.random(m)
    chosen = np.minimum((cum < u[:, None]).sum(axis=1), J - 1)
    rows = np.arange(m)
    r = class_res[rows, chosen] if directed else np.zeros(m)

    want = -np.sign(r)
    coin = rng.random(m)
    want = np.where(want == 0, np.where(coin < 0.5, -1.0, 1.0), want)
    follow = rng.random(m) < (1.0 + bias) / 2.0
    sign = np.where(follow, want, -want)

    if directed and cfg.residual_scale > 0:
        frac = np.clip(np.abs(r) / cfg.residual_scale, cfg.min_step_fraction, 1.0)
    else:
        frac = np.ones(m)
    delta = sign * rng.random(m) * cfg.amplitude * frac

    old = w[rows, chosen].copy()
    new = np.clip(old + delta, 0.0, 1.0)
    rest_old = 1.0 - old
    rest_new = 1.0 - new
    others = np.ones((m, J), dtype=bool)
    others[rows, chosen] = False
    scale = np.where(rest_old > 0, rest_new / np.where(rest_old > 0, rest_old, 1.0), 0.0)
    flat = rest_old <= 0
    w = np.where(others, w * scale[:, None], w)
    if flat.any():
        w[flat] = np.where(others[flat], (rest_new[flat] / (J - 1))[:, None], w[flat])
    w[rows, chosen] = new
    w = np.clip(w, 0.0, 1.0)
    w /= w.sum(axis=1, keepdims=True)
    return w, chosen


def propose_lcm_correction(p: LcmParams, residuals: Mapping[str, float], cfg: CorrectionConfig,
                           rng: np.random.Generator) -> LcmParams:
    """Nudge one class weight, favouring classes and signs that shrink the outflow residuals.

    ``residuals`` maps portal id to simulated minus observed outflow. An
    empty mapping gives an undirected proposal.
    """
    directed = bool(residuals)
    cres = class_residuals(p, residuals)[None, :]
    w, _ = propose_batch(p.as_array()[None, :], cres, cfg, rng, directed)
    return replace(p, weights=tuple(normalize_simplex(w[0])))


# ---------------------------------------------------------------------------
# scenario-mode corrections
# ---------------------------------------------------------------------------


def default_load_targets(c: Schedule, demand: Demand | None = None) -> dict[str, int]:
    """Arrival targets = alighting agents present in ``demand`` (or expected load); departures
    only when an expected load is declared."""
    out: dict[str, int] = {}
    for e in c.events:
        if e.direction == "arrival":
            if demand is not None:
                out[e.mode_id] = sum(1 for a in demand.agents
                                     if a.bound_mode == e.mode_id and a.origin == e.platform)
            else:
                out[e.mode_id] = int(e.expected_load or 0)
        elif e.expected_load is not None:
            out[e.mode_id] = int(e.expected_load)
    return out


def _shift_for(a: AgentPlan, tr, ev, window: float, horizon: float) -> float:
    """Signed start-time change that would make ``a`` coherent with ``ev`` (0 if none needed)."""
    if ev.direction == "arrival":
        if a.t_dep < ev.time:
            return ev.time - a.t_dep
        if a.t_dep > ev.time + window:
            return ev.time + window - a.t_dep
        return 0.0
    if tr is None or not tr.exited:
        return -(horizon - min(a.t_dep, horizon)) if ev.time < horizon else 0.0
    if tr.t_exit > ev.time:
        return ev.time - tr.t_exit
    if ev.time > tr.t_exit + window:
        return ev.time - window - tr.t_exit
    return 0.0


def propose_scenario_correction(state: StationState, c: Schedule, assignment: ModeAssignment,
                                cfg: CorrectionConfig, rng: np.random.Generator, *,
                                window: float = 300.0,
                                load_targets: Optional[Mapping[str, int]] = None,
                                transfer: Optional[TransferTimeEstimates] = None,
                                buffer: float = 60.0, jitter_max: float = 30.0,
                                stair_capacity: float = 2.0) -> Demand:
    """Edit the demand of ``state`` toward schedule coherence.

    Incoherent agents bound to a vehicle get their start time moved by at
    most ``cfg.max_shift`` toward feasibility. Modes whose bound agent count
    misses its target gain or lose up to ``cfg.batch_size`` agents. Returns
    ``state.demand`` itself when nothing needs changing.
    """
    demand = state.demand
    horizon = state.horizon
    targets = dict(default_load_targets(c) if load_targets is None else load_targets)
    unassigned = set(assignment.unassigned)
    traj = {t.agent_id: t for t in state.trajectories}
    events = {e.mode_id: e for e in c.events}
    changed = False

    agents = list(demand.agents)
    for k, a in enumerate(agents):
        if a.id not in unassigned or a.bound_mode not in events:
            continue
        need = _shift_for(a, traj.get(a.id), events[a.bound_mode], window, horizon)
        if need == 0.0:
            continue
        mag = min(cfg.max_shift, abs(need) + rng.uniform(0.0, cfg.shift_margin))
        t_new = min(max(a.t_dep + math.copysign(mag, need), 0.0), horizon)
        if t_new != a.t_dep:
            agents[k] = replace(a, t_dep=float(t_new))
            changed = True

    # Loads count assigned agents plus bound agents that a time shift may still
    # bring in; transfer passengers count toward their departure but are only
    # ever cloned or dropped through their arrival.
    ids = {a.id for a in agents}
    for mode_id in sorted(targets):
        ev = events.get(mode_id)
        if ev is None:
            continue
        own = [a for a in agents if a.bound_mode == mode_id]
        pending = sum(1 for a in own if a.id in unassigned)
        diff = int(targets[mode_id]) - assignment.count(mode_id) - pending
        if diff > 0 and own:
            for _ in range(min(cfg.batch_size, diff)):
                tmpl = own[int(rng.integers(len(own)))]
                n = 0
                while f"{mode_id}-x{n:04d}" in ids:
                    n += 1
                new_id = f"{mode_id}-x{n:04d}"
                ids.add(new_id)
                if ev.direction == "arrival":
                    span = max(targets[mode_id] / stair_capacity, 1.0)
                    t = ev.time + rng.uniform(0.0, span)
                elif transfer is not None:
                    t = departure_time_for_boarding(ev, transfer, tmpl.origin, buffer, rng,
                                                    jitter_max).t_dep
                else:
                    t = tmpl.t_dep
                agents.append(replace(tmpl, id=new_id, t_dep=float(min(max(t, 0.0), horizon))))
                changed = True
        elif diff < 0 and own:
            n_drop = min(cfg.batch_size, -diff)
            # unassigned first, then a random pick among the rest
            head = sorted((a for a in own if a.id in unassigned), key=lambda a: a.id)[:n_drop]
            tail = sorted((a for a in own if a.id not in unassigned), key=lambda a: a.id)
            if len(head) < n_drop and tail:
                pick = rng.choice(len(tail), size=min(n_drop - len(head), len(tail)), replace=False)
                head += [tail[i] for i in sorted(pick)]
            drop = {a.id for a in head}
            agents = [a for a in agents if a.id not in drop]
            changed = changed or bool(drop)

    if not changed:
        return demand
    agents.sort(key=lambda a: (a.t_dep, a.id))
    return Demand(tuple(agents))


def loads_met(c: Schedule, assignment: ModeAssignment, targets: Mapping[str, int]) -> bool:
    return all(assignment.count(m) == n for m, n in targets.items())


# ---------------------------------------------------------------------------
# chain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainEntry:
    iteration: int
    proposed_of: float
    log_proposed: float
    accepted: bool
    best_of: float
    log_best: float
    temperature: float
    weights: tuple[float, ...]
    y: int = 0
    of1: float = float("nan")
    of2: float = float("nan")


@dataclass
class ChainTrace:
    entries: list[ChainEntry] = field(default_factory=list)

    def best_series(self) -> np.ndarray:
        return np.array([e.log_best for e in self.entries])

    def proposed_series(self) -> np.ndarray:
        return np.array([e.log_proposed for e in self.entries])

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class Evaluation:
    params: LcmParams
    demand: Demand
    state: StationState
    report: ObjectiveReport


@dataclass
class AnnealResult:
    best_state: StationState
    best_params: LcmParams
    trace: ChainTrace
    best_report: ObjectiveReport
    improvements: list[tuple[int, LcmParams]]
    mode: str
    rates: tuple[ObservationRecord, ...]
    load_targets: dict[str, int]


def _fmt_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def anneal(s: Scenario, init: LcmParams, sched: AnnealSchedule | None = None,
           cfg: CorrectionConfig | None = None, mode: Mode = "calibration", *,
           config: RunConfig | None = None, graph: DecisionGraph | None = None,
           demand_scale: float = 1.0, rates: Optional[Sequence[ObservationRecord]] = None,
           record_best: bool = True) -> AnnealResult:
    """Run the chain and return the best state found.

    Calibration mode searches LCM weights against the scenario's counts.
    Scenario mode keeps ``init`` fixed, seeds entrances from ``rates`` scaled
    by ``demand_scale`` and corrects start times and vehicle loads until the
    state is coherent with the schedule.
    """
    config = config or RunConfig()
    sched = sched or config.anneal
    cfg = cfg or config.correction
    ocfg = config.objective
    if mode == "calibration" and s.observations is None:
        raise DemandError("calibration mode requires observations")
    graph = graph or build_decision_graph(s.infrastructure)
    rng = np.random.default_rng(sched.seed)
    demand_seed, sim_seed = (int(x) for x in rng.integers(0, 2 ** 63 - 1, size=2))
    if rates is None:
        rates = entrance_rates(s)
    rates = tuple(rates)
    transfer = TransferTimeEstimates.straight_line(s.infrastructure, config.sfm.desired_speed)
    calibrating = mode == "calibration"

    def run(demand: Demand, params: LcmParams, record: bool = False) -> Evaluation:
        routes = [graph.route(a.id, a.origin, a.destination) for a in demand.agents]
        state = simulate(s, demand, routes, config.sfm, np.random.default_rng(sim_seed), graph,
                         record=record)
        report = combined_objective(state, s, ocfg.alpha, ocfg.beta, ocfg,
                                    config.demand.unloading, use_observations=calibrating)
        return Evaluation(params, demand, state, report)

    def generate(params: LcmParams) -> Demand:
        return generate_demand(s, params, transfer, mode, demand_scale,
                               np.random.default_rng(demand_seed), config.demand, rates)

    cur = run(generate(init), init)
    targets = default_load_targets(s.schedule, cur.demand) if not calibrating else {}
    for e in s.schedule.departures():
        if not calibrating and e.expected_load is not None:
            targets[e.mode_id] = int(round(e.expected_load * demand_scale))
    best = cur
    trace = ChainTrace()
    t_first = sched.temperature(0)
    trace.entries.append(_entry(0, cur, True, best, t_first))
    improvements = [(0, cur.params)]
    if cur.report.assignment is not None:
        transfer = transfer.refreshed(cur.state)
    stale = 0
    for k in range(1, sched.max_iter + 1):
        temp = sched.temperature(k)
        if calibrating:
            params = propose_lcm_correction(cur.params, portal_residuals(cur.report), cfg, rng)
            try:
                cand = run(generate(params), params)
            except (DemandError, RoutingError, ValueError) as exc:
                log.warning("iteration %d rejected: %s", k, exc)
                rng.random()
                trace.entries.append(ChainEntry(k, math.nan, math.nan, False, best.report.combined,
                                                best.report.log_combined, temp, params.weights))
                stale += 1
                if stale >= sched.patience:
                    break
                continue
        else:
            demand = propose_scenario_correction(
                cur.state, s.schedule, cur.report.assignment, cfg, rng, window=ocfg.window,
                load_targets=targets, transfer=transfer, buffer=config.demand.buffer,
                jitter_max=config.demand.jitter_max,
                stair_capacity=config.demand.unloading.default_capacity)
            coherent = cur.report.y == 0 and loads_met(s.schedule, cur.report.assignment, targets)
            if demand is cur.demand and coherent:
                log.info("scenario equilibrium reached at iteration %d", k - 1)
                break
            cand = run(demand, cur.params)

        delta = cand.report.log_combined - cur.report.log_combined
        u = rng.random()
        accepted = delta <= 0 or (temp > 0 and u < math.exp(-delta / temp))
        if accepted:
            cur = cand
            transfer = transfer.refreshed(cur.state)
        if cand.report.log_combined < best.report.log_combined:
            best = cand
            improvements.append((k, cand.params))
            stale = 0
        else:
            stale += 1
        trace.entries.append(_entry(k, cand, accepted, best, temp))
        if stale >= sched.patience:
            log.info("stopping after %d iterations without improvement", stale)
            break

    if record_best:
        best = run(best.demand, best.params, record=True)
    return AnnealResult(best.state, best.params, trace, best.report, improvements, mode, rates,
                        targets)


def _entry(k: int, ev: Evaluation, accepted: bool, best: Evaluation, temp: float) -> ChainEntry:
    r = ev.report
    return ChainEntry(k, r.combined, r.log_combined, accepted, best.report.combined,
                      best.report.log_combined, temp, ev.params.weights, r.y, r.of1, r.of2)


# ---------------------------------------------------------------------------
# chain-property witnesses
# ---------------------------------------------------------------------------


@dataclass
class ReachabilityReport:
    J: int
    amplitude: float
    bound: int
    steps_allowed: int
    levels: int
    pairs: list[tuple[tuple[float, ...], tuple[float, ...], Optional[int]]]
    self_transition_frequency: float
    paths: int

    @property
    def all_reached(self) -> bool:
        return all(steps is not None for _, _, steps in self.pairs)

    @property
    def passed(self) -> bool:
        return self.all_reached and self.self_transition_frequency > 0


def _effect(w: np.ndarray, levels: int) -> np.ndarray:
    return np.rint(w * levels).astype(np.int64)


def _default_pairs(J: int, rng: np.random.Generator, levels: int):
    eye = np.eye(J)
    pairs = [(eye[i], eye[j]) for i in range(J) for j in range(J) if i != j]
    if J == 1:
        pairs = [(eye[0], eye[0])]
    for _ in range(2):
        g = rng.dirichlet(np.ones(J))
        pairs.append((eye[0], np.rint(g * levels) / levels / (np.rint(g * levels).sum() / levels)))
    return pairs


def reachability_check(J: int, A: float, cfg: CorrectionConfig | None = None, *,
                       n_paths: int = 10_000, safety_factor: float = 2.0, levels: int = 20,
                       pairs: Optional[Iterable[tuple[Sequence[float], Sequence[float]]]] = None,
                       seed: int = 0) -> ReachabilityReport:
    """Sample proposal paths to witness irreducibility and aperiodicity.

    Weight vectors are compared at effect level: rounded to a grid of
    ``levels`` steps per unit. A target counts as reached when some sampled
    path hits its grid cell within ``ceil(J / A) * safety_factor`` blind
    proposals. The self-transition frequency is the share of proposals that
    stay in the same cell.
    """
    cfg = replace(cfg or CorrectionConfig(), amplitude=A)
    rng = np.random.default_rng(seed)
    bound = int(math.ceil(J / A - 1e-12))
    allowed = int(math.ceil(bound * safety_factor))
    pairs = list(pairs) if pairs is not None else _default_pairs(J, rng, levels)
    zeros = np.zeros((n_paths, J))
    out = []
    stay = 0
    total = 0
    for start, target in pairs:
        start = np.asarray(start, dtype=float)
        tgt = _effect(np.asarray(target, dtype=float), levels)
        w = np.tile(start, (n_paths, 1))
        hit = None
        if np.all(_effect(start, levels) == tgt):
            hit = 0
        for step in range(1, allowed + 1):
            if hit is not None:
                break
            before = _effect(w, levels)
            w, _ = propose_batch(w, zeros, cfg, rng, directed=False)
            after = _effect(w, levels)
            stay += int(np.all(before == after, axis=1).sum())
            total += n_paths
            if np.any(np.all(after == tgt, axis=1)):
                hit = step
        out.append((tuple(start), tuple(np.asarray(target, dtype=float)), hit))
    if total == 0:
        # every target already matched: measure the self-transition rate directly
        w = np.tile(np.full(J, 1.0 / J), (n_paths, 1))
        w2, _ = propose_batch(w, zeros, cfg, rng, directed=False)
        stay = int(np.all(_effect(w, levels) == _effect(w2, levels), axis=1).sum())
        total = n_paths
    return ReachabilityReport(J, A, bound, allowed, levels, out, stay / total, n_paths)


def effect_self_transition(s: Scenario, params: LcmParams, cfg: CorrectionConfig | None = None, *,
                           n: int = 10_000, seed: int = 0, demand_seed: int = 1) -> float:
    """Share of blind proposals whose generated demand is identical to the current one.

    Demand is regenerated with a fixed seed, so two weight vectors are the
    same state exactly when they send every agent to the same destination.
    """
    cfg = cfg or CorrectionConfig()
    rng = np.random.default_rng(seed)
    mode: Mode = "calibration" if s.observations is not None else "scenario"
    transfer = TransferTimeEstimates.straight_line(s.infrastructure, 1.34)

    def effect(p: LcmParams) -> tuple:
        d = generate_demand(s, p, transfer, mode, 1.0, np.random.default_rng(demand_seed))
        return tuple(a.destination for a in d.agents)

    cur = params
    cur_eff = effect(cur)
    same = 0
    for _ in range(n):
        nxt = propose_lcm_correction(cur, {}, cfg, rng)
        try:
            nxt_eff = effect(nxt)
        except DemandError:
            continue
        if nxt_eff == cur_eff:
            same += 1
        cur, cur_eff = nxt, nxt_eff
    return same / n
