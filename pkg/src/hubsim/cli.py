"""Command-line entry point: ``hubsim validate|calibrate|simulate|analyze``."""

from __future__ import annotations

import argparse
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import __version__
from . import analysis as A
from . import io as hio
from .calibrate import AnnealResult, anneal
from .config import RunConfig, load_config
from .demand import LcmParams
from .routing import build_decision_graph
from .scenario import (
    Scenario,
    ScenarioFormatError,
    ScenarioValidationError,
    load_scenario,
    save_scenario,
)

log = logging.getLogger("hubsim")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def _seed(v: str) -> int:
    n = int(v)
    if n < 0:
        raise argparse.ArgumentTypeError("seed must be an unsigned integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hubsim", description="Pedestrian simulation of mobility hubs.")
    p.add_argument("--version", action="version", version=f"hubsim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario", type=Path)

    def chain_flags(sp):
        sp.add_argument("scenario", type=Path)
        sp.add_argument("--out", type=Path, required=True)
        sp.add_argument("--seed", type=_seed, default=None)
        sp.add_argument("--max-iter", type=int, default=None)
        sp.add_argument("--patience", type=int, default=None)
        sp.add_argument("--alpha", type=float, default=None)
        sp.add_argument("--beta", type=float, default=None)
        sp.add_argument("--t0", type=float, default=None)
        sp.add_argument("--gamma", type=float, default=None)
        sp.add_argument("--config", type=Path, default=None, help="YAML run configuration")

    c = sub.add_parser("calibrate", help="fit LCM weights to the scenario counts")
    chain_flags(c)
    c.add_argument("--init", type=Path, default=None,
                   help="start from a params JSON instead of uniform weights")

    s = sub.add_parser("simulate", help="equilibrium run of a scenario with calibrated params")
    chain_flags(s)
    s.add_argument("--params", type=Path, required=True)
    s.add_argument("--demand-scale", type=float, default=1.0)

    a = sub.add_parser("analyze", help="derive OD, density and validation artifacts")
    a.add_argument("state_dir", type=Path)
    a.add_argument("--od", action="store_true")
    a.add_argument("--density", action="store_true")
    a.add_argument("--los", action="store_true")
    a.add_argument("--table", action="store_true")
    a.add_argument("--cell", type=float, default=1.0)
    a.add_argument("--bin", type=float, default=60.0)
    a.add_argument("--slice", type=float, default=None, help="OD slice width in seconds")
    a.add_argument("--pgm", action="store_true", help="also write greyscale density images")
    a.add_argument("--path-width", type=float, default=2.0,
                   help="corridor width for per-route densities (m)")
    a.add_argument("--out", type=Path, default=None, help="defaults to <state-dir>/analysis")
    return p


# ---------------------------------------------------------------------------


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(
        objective={"alpha": args.alpha, "beta": args.beta},
        anneal={"t0": args.t0, "gamma": args.gamma, "max_iter": args.max_iter, "seed": args.seed,
                "patience": args.patience},
    )


def _versions() -> dict:
    out = {"hubsim": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "numba", "shapely", "pyyaml"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def _write_manifest(out: Path, command: str, argv: Sequence[str], cfg: RunConfig, s: Scenario,
                    extra: dict) -> None:
    doc = {
        "command": command,
        "argv": list(argv),
        "seed": cfg.anneal.seed,
        "horizon_s": s.horizon,
        "dt_s": cfg.sfm.dt,
        "config": cfg.to_dict(),
        "versions": _versions(),
        **extra,
    }
    (out / "manifest.yaml").write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")


def _prepare_out(out: Path, inputs: Sequence[Path]) -> None:
    out = out.resolve()
    for p in inputs:
        p = p.resolve()
        if p == out or p.parent == out:
            raise RuntimeError(f"--out {out} would overwrite input {p}")
    out.mkdir(parents=True, exist_ok=True)


def _write_run(out: Path, s: Scenario, res: AnnealResult, graph) -> None:
    save_scenario(s, out / "scenario.yaml")
    hio.write_trace(out / "trace.csv", res.trace)
    hio.write_objective_log(out / "objective.csv", res.trace)
    hio.write_state(out, res.best_state, graph)
    hio.write_params(out / "params.json", res.best_params, res.rates)
    snaps = out / "params_snapshots"
    snaps.mkdir(exist_ok=True)
    for k, p in res.improvements:
        hio.write_params(snaps / f"iter_{k:05d}.json", p, res.rates)


def cmd_validate(args) -> int:
    s = load_scenario(args.scenario)
    print(f"{args.scenario}: ok ({len(s.infrastructure.portals)} portals, "
          f"{len(s.schedule.events)} vehicle events)")
    return EXIT_OK


def cmd_calibrate(args, argv) -> int:
    s = load_scenario(args.scenario)
    if s.observations is None:
        print(f"{args.scenario}: calibration needs observation counts", file=sys.stderr)
        return EXIT_INVALID
    cfg = _run_config(args)
    _prepare_out(args.out, [args.scenario])
    if args.init is not None:
        init, _ = hio.read_params(args.init)
    else:
        init = LcmParams.from_infrastructure(s.infrastructure)
    graph = build_decision_graph(s.infrastructure)
    res = anneal(s, init, mode="calibration", config=cfg, graph=graph)
    _write_run(args.out, s, res, graph)
    table = A.validation_table(res.best_state, s.observations)
    hio.write_validation(args.out / "validation.csv", table)
    _write_manifest(args.out, "calibrate", argv, cfg, s, {
        "scenario": str(args.scenario), "iterations": len(res.trace),
        "best_of": float(res.best_report.combined),
        "best_weights": dict(zip(res.best_params.classes, res.best_params.weights)),
    })
    print(f"calibrated in {len(res.trace) - 1} iterations; best OF {res.best_report.combined:.6g}; "
          f"max count error {table.max_error:.1f}%")
    return EXIT_OK


def cmd_simulate(args, argv) -> int:
    s = load_scenario(args.scenario)
    if args.demand_scale <= 0:
        raise ValueError("--demand-scale must be positive")
    cfg = _run_config(args)
    _prepare_out(args.out, [args.scenario, args.params])
    params, rates = hio.read_params(args.params)
    if not rates:
        raise ValueError(f"{args.params}: no entrance_rates; run calibrate first")
    graph = build_decision_graph(s.infrastructure)
    scen = s.without_observations()
    res = anneal(scen, params, mode="scenario", config=cfg, graph=graph,
                 demand_scale=args.demand_scale, rates=rates)
    _write_run(args.out, scen, res, graph)
    st = res.best_state
    _write_manifest(args.out, "simulate", argv, cfg, scen, {
        "scenario": str(args.scenario), "params": str(args.params),
        "demand_scale": args.demand_scale, "iterations": len(res.trace),
        "agents": len(st.demand.agents), "spawned": len(st.spawned()),
        "y": res.best_report.y, "load_targets": res.load_targets,
    })
    print(f"equilibrium after {len(res.trace) - 1} iterations: {len(st.spawned())} agents spawned, "
          f"Y = {res.best_report.y}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    d = args.state_dir
    man = yaml.safe_load((d / "manifest.yaml").read_text(encoding="utf-8"))
    s = load_scenario(d / "scenario.yaml")
    state = hio.read_state(d, float(man["horizon_s"]), float(man["dt_s"]))
    out = args.out or d / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    wanted = [f for f in ("od", "density", "los", "table") if getattr(args, f)]
    if not wanted:
        wanted = ["od", "density", "los"] + (["table"] if s.observations is not None else [])

    if "od" in wanted:
        od = A.od_matrix(state, args.slice)
        rows = [(o, dst, n) for (o, dst), n in od.counts.items()]
        hio.write_csv(out / "od.csv", ("origin", "destination", "count"), rows)
        if od.slices:
            hio.write_csv(out / "od_sliced.csv", ("slice_t0_s", "origin", "destination", "count"),
                       [(hio.fmt_float(k * args.slice), o, dst, n) for k, sl in od.slices.items()
                        for (o, dst), n in sl.items()])
        hio.write_csv(out / "still_inside.csv", ("agent_id",), [(a,) for a in od.still_inside])
        print(f"od: {od.total} exited agents, {len(od.still_inside)} still inside")
    if "density" in wanted or "los" in wanted:
        g = A.density_grid(state, args.cell, args.bin, s.infrastructure.bounds)
        nb, ny, nx = g.density.shape
        if "density" in wanted:
            hio.write_csv(out / "density.csv", ("bin_t0_s", "ix", "iy", "x0_m", "y0_m", "density"),
                       [(hio.fmt_float(g.t_edges[b]), ix, iy, hio.fmt_float(g.x_edges[ix]),
                         hio.fmt_float(g.y_edges[iy]), f"{g.density[b, iy, ix]:.6f}")
                        for b in range(nb) for iy in range(ny) for ix in range(nx)])
            graph = build_decision_graph(s.infrastructure)
            pd = A.path_densities(g, state.routes, graph, args.path_width)
            hio.write_csv(out / "path_density.csv", ("route", "bin_t0_s", "density"),
                          [(" ".join(wp), hio.fmt_float(g.t_edges[b]), f"{v[b]:.6f}")
                           for wp, v in pd.items() for b in range(nb)])
            if args.pgm:
                vmax = max(float(g.density.max(initial=0.0)), 1e-12)
                for b in range(nb):
                    A.write_pgm(out / f"density_{int(g.t_edges[b]):05d}.pgm", g.density[b], vmax)
        if "los" in wanted:
            labels = g.los()
            hio.write_csv(out / "los.csv", ("bin_t0_s", "ix", "iy", "los"),
                       [(hio.fmt_float(g.t_edges[b]), ix, iy, labels[b, iy, ix])
                        for b in range(nb) for iy in range(ny) for ix in range(nx)])
        print(f"density: {nb} bins of {nx} x {ny} cells, peak {g.density.max(initial=0.0):.3f} ped/m2")
    if "table" in wanted:
        if s.observations is None:
            print("table: scenario has no observations", file=sys.stderr)
            return EXIT_INVALID
        t = A.validation_table(state, s.observations)
        hio.write_validation(out / "validation.csv", t)
        print(f"table: {len(t.rows)} records, max error {t.max_error:.1f}%")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "calibrate":
            return cmd_calibrate(args, argv)
        if args.command == "simulate":
            return cmd_simulate(args, argv)
        return cmd_analyze(args)
    except ScenarioValidationError as exc:
        print(f"invalid scenario: {len(exc.violations)} violation(s)", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_INVALID
    except ScenarioFormatError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # anything else is a runtime failure
        log.debug("runtime error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
