"""Result artifacts of a converged state: OD flows, density/LOS grids, validation tables."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .scenario import ObservationSet
from .objective import simulated_counts

log = logging.getLogger(__name__)

# Fruin walkway bands, upper bounds in ped/m^2; F is open-ended
FRUIN_LOS: tuple[tuple[str, float], ...] = (
    ("A", 0.308),
    ("B", 0.431),
    ("C", 0.718),
    ("D", 1.076),
    ("E", 2.153),
    ("F", math.inf),
)


# ---------------------------------------------------------------------------
# OD
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OdMatrix:
    """Exited agents by (spawn portal, exit portal).

    ``slices`` holds the same counts per departure-time interval when a
    slice width was requested; ``still_inside`` lists agents excluded
    because they had not left by the horizon.
    """

    counts: Mapping[tuple[str, str], int]
    still_inside: tuple[str, ...] = ()
    slice_width: Optional[float] = None
    slices: Mapping[int, Mapping[tuple[str, str], int]] = field(default_factory=dict)

    def __getitem__(self, key: tuple[str, str]) -> int:
        return self.counts.get(key, 0)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def origins(self) -> list[str]:
        return sorted({o for o, _ in self.counts})

    def destinations(self) -> list[str]:
        return sorted({d for _, d in self.counts})

    def row_totals(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for (o, _), n in self.counts.items():
            out[o] = out.get(o, 0) + n
        return out

    def column_totals(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for (_, d), n in self.counts.items():
            out[d] = out.get(d, 0) + n
        return out


def od_matrix(state, slice: Optional[float] = None) -> OdMatrix:
    if slice is not None and slice <= 0:
        raise ValueError("slice width must be positive")
    plans = {a.id: a for a in state.demand.agents}
    counts: dict[tuple[str, str], int] = {}
    slices: dict[int, dict[tuple[str, str], int]] = {}
    inside = []
    for tr in state.trajectories:
        if not tr.exited:
            if tr.t_spawn is not None:
                inside.append(tr.agent_id)
            continue
        a = plans[tr.agent_id]
        key = (a.origin, tr.exit_portal)
        counts[key] = counts.get(key, 0) + 1
        if slice is not None:
            b = slices.setdefault(int(a.t_dep // slice), {})
            b[key] = b.get(key, 0) + 1
    return OdMatrix(dict(sorted(counts.items())), tuple(sorted(inside)), slice,
                    dict(sorted(slices.items())))


# ---------------------------------------------------------------------------
# density
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityGrid:
    """Mean pedestrian density per cell and time bin.

    ``density[b, iy, ix]`` is in ped/m^2; cell ``(ix, iy)`` spans
    ``x_edges[ix:ix+2]`` by ``y_edges[iy:iy+2]``.
    """

    cell: float
    bin: float
    x_edges: np.ndarray
    y_edges: np.ndarray
    t_edges: np.ndarray
    density: np.ndarray
    thresholds: tuple[tuple[str, float], ...] = FRUIN_LOS

    @property
    def areas(self) -> np.ndarray:
        return np.outer(np.diff(self.y_edges), np.diff(self.x_edges))

    def headcount(self) -> np.ndarray:
        """Mean agents present per bin: sum of density times cell area."""
        return (self.density * self.areas[None]).sum(axis=(1, 2))

    def los(self) -> np.ndarray:
        return los_labels(self.density, self.thresholds)


def los_labels(density: np.ndarray, thresholds: Sequence[tuple[str, float]] = FRUIN_LOS) -> np.ndarray:
    labels = np.array([lab for lab, _ in thresholds])
    uppers = np.array([ub for _, ub in thresholds], dtype=float)
    idx = np.searchsorted(uppers, np.asarray(density, dtype=float), side="right")
    return labels[np.minimum(idx, len(labels) - 1)]


def _edges(lo: float, hi: float, cell: float) -> np.ndarray:
    n = max(int(math.ceil((hi - lo) / cell - 1e-9)), 1)
    e = lo + cell * np.arange(n + 1)
    e[-1] = hi
    return e


def density_grid(state, cell: float, bin: float, bounds: tuple[float, float, float, float],
                 thresholds: Sequence[tuple[str, float]] = FRUIN_LOS) -> DensityGrid:
    """Average instantaneous head-count per cell over each bin, divided by cell area.

    Needs recorded trajectories. Cells on the far edges are clipped to
    ``bounds`` and their area shrinks accordingly. A cell wider and taller
    than the hall yields one cell covering it.
    """
    if cell <= 0 or bin <= 0:
        raise ValueError("cell and bin must be positive")
    x0, y0, x1, y1 = bounds
    if cell >= (x1 - x0) and cell >= (y1 - y0):
        log.warning("cell %.3g m exceeds the hall; using a single cell", cell)
        xe, ye = np.array([x0, x1]), np.array([y0, y1])
    else:
        xe, ye = _edges(x0, x1, cell), _edges(y0, y1, cell)
    te = _edges(0.0, state.horizon, bin)
    nb = len(te) - 1
    steps = _steps_per_bin(te, state.dt)
    hits = np.zeros((nb, len(ye) - 1, len(xe) - 1))
    for tr in state.trajectories:
        s = _presence_samples(tr, state.horizon)
        if s.size == 0:
            continue
        b = np.clip(np.searchsorted(te, s[:, 0] + 1e-9, side="right") - 1, 0, nb - 1)
        ix = np.clip(np.searchsorted(xe, s[:, 1], side="right") - 1, 0, len(xe) - 2)
        iy = np.clip(np.searchsorted(ye, s[:, 2], side="right") - 1, 0, len(ye) - 2)
        np.add.at(hits, (b, iy, ix), 1.0)
    areas = np.outer(np.diff(ye), np.diff(xe))
    dens = hits / steps[:, None, None] / areas[None]
    return DensityGrid(cell, bin, xe, ye, te, dens, tuple(thresholds))


def _steps_per_bin(t_edges: np.ndarray, dt: float) -> np.ndarray:
    """Integration instants ``k * dt`` falling in each ``[t_a, t_b)``."""
    k = np.ceil(np.asarray(t_edges) / dt - 1e-9)
    return np.maximum(np.diff(k), 1.0)


def _presence_samples(tr, horizon: float) -> np.ndarray:
    """Samples at the instants the agent is inside: from spawn, up to but excluding exit."""
    s = tr.samples
    if s.size == 0:
        return s
    keep = s[:, 0] < horizon - 1e-9
    if tr.exited:
        keep &= s[:, 0] < tr.t_exit - 1e-9
    return s[keep]


def live_counts(state, t_edges: np.ndarray) -> np.ndarray:
    """Mean number of agents inside per bin, from spawn and exit times alone."""
    dt = state.dt
    k_edges = np.ceil(np.asarray(t_edges) / dt - 1e-9).astype(np.int64)
    out = np.zeros(len(t_edges) - 1)
    for b in range(len(out)):
        ka, kz = k_edges[b], k_edges[b + 1]
        if kz <= ka:
            continue
        n = 0
        for tr in state.trajectories:
            if tr.t_spawn is None:
                continue
            k0 = int(round(tr.t_spawn / dt))
            k1 = int(round(tr.t_exit / dt)) if tr.exited else kz
            n += max(0, min(k1, kz) - max(k0, ka))
        out[b] = n / (kz - ka)
    return out


def _segment_distance(px: np.ndarray, py: np.ndarray, a, b) -> np.ndarray:
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    L2 = dx * dx + dy * dy
    t = np.zeros_like(px) if L2 == 0 else np.clip(((px - ax) * dx + (py - ay) * dy) / L2, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def path_densities(grid: DensityGrid, routes, graph, width: float = 2.0) -> dict[tuple[str, ...], np.ndarray]:
    """Mean density per bin along each distinct route, over the cells whose centre
    lies within ``width / 2`` of the polyline (at least the nearest cell)."""
    xc = 0.5 * (grid.x_edges[:-1] + grid.x_edges[1:])
    yc = 0.5 * (grid.y_edges[:-1] + grid.y_edges[1:])
    px, py = np.meshgrid(xc, yc)
    areas = grid.areas
    out: dict[tuple[str, ...], np.ndarray] = {}
    for wp in sorted({r.waypoints for r in routes if len(r.waypoints) > 1}):
        pts = [graph.position(n) for n in wp]
        dist = np.min([_segment_distance(px, py, a, b) for a, b in zip(pts, pts[1:])], axis=0)
        mask = dist <= width / 2
        if not mask.any():
            mask = dist == dist.min()
        w = areas * mask
        out[wp] = (grid.density * w[None]).sum(axis=(1, 2)) / w.sum()
    return out


def write_pgm(path: str | Path, values: np.ndarray, vmax: Optional[float] = None) -> Path:
    """Binary greyscale image, darker = denser, row 0 at the top (max y)."""
    img = np.asarray(values, dtype=float)[::-1]
    vmax = float(vmax if vmax is not None else max(img.max(initial=0.0), 1e-12))
    px = (255 - np.clip(img / vmax, 0.0, 1.0) * 255).round().astype(np.uint8)
    h, w = px.shape
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(px.tobytes())
    return path


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationRow:
    portal_id: str
    direction: str
    t0: float
    t1: float
    observed: int
    simulated: int

    @property
    def percent_error(self) -> float:
        return abs(self.simulated - self.observed) / max(self.observed, 1) * 100.0


@dataclass(frozen=True)
class ValidationTable:
    rows: tuple[ValidationRow, ...]

    def totals(self, direction: str) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.rows:
            if r.direction == direction:
                out[r.portal_id] = out.get(r.portal_id, 0) + r.simulated
        return out

    @property
    def max_error(self) -> float:
        return max((r.percent_error for r in self.rows), default=0.0)


def percent_error(observed: float, simulated: float) -> float:
    return abs(simulated - observed) / max(observed, 1) * 100.0


def validation_table(state, d: ObservationSet) -> ValidationTable:
    sims = simulated_counts(state, d.records)
    return ValidationTable(tuple(
        ValidationRow(r.portal_id, r.direction, r.t0, r.t1, r.count, s)
        for r, s in zip(d.records, sims)
    ))
