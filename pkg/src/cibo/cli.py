"""Command-line front end: ``cibo plan | margin | eval | sweep``.

Exit codes: 0 success, 1 usage or configuration error, 2 solver failure.
Log verbosity comes from the ``CIBO_LOG`` environment variable
(``DEBUG``, ``INFO``, ``WARNING``...; default ``WARNING``).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import io
from .evaluation import PerturbationSpec, mode_feasibility_experiment, monte_carlo_robustness, \
    sweep_initial_py
from .exceptions import CiboError, ConfigError
from .planner import plan

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2
KIND_CHOICES = ("baseline", "mass", "com", "friction", "modes", "hierarchical")

log = logging.getLogger("cibo")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _grid(text):
    """Comma list of metres; a trailing ``w`` means multiples of the face width."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            out.append(("w", float(item[:-1])) if item.endswith("w") else ("m", float(item)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad grid entry {item!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty grid")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cibo", description="Robust pivoting trajectory planning.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pl = sub.add_parser("plan", help="solve a planning problem and write a trajectory")
    pl.add_argument("config")
    pl.add_argument("--kind", choices=KIND_CHOICES)
    pl.add_argument("--contact", choices=("point", "patch"))
    pl.add_argument("--out", default="trajectory.csv")
    pl.add_argument("--seed", type=_u64)

    mg = sub.add_parser("margin", help="recompute per-knot margins of a trajectory file")
    mg.add_argument("trajectory")
    mg.add_argument("--kind", choices=("mass", "com", "friction"))
    mg.add_argument("--out", default="-")

    ev = sub.add_parser("eval", help="Monte Carlo robustness of a trajectory file")
    ev.add_argument("trajectory")
    ev.add_argument("config")
    ev.add_argument("--n", type=int)
    ev.add_argument("--seed", type=_u64)
    ev.add_argument("--out", default="-")

    sw = sub.add_parser("sweep", help="initial finger position sweep or mode experiment")
    sw.add_argument("config")
    grp = sw.add_mutually_exclusive_group(required=True)
    grp.add_argument("--grid", type=_grid)
    grp.add_argument("--mode-experiment", action="store_true")
    sw.add_argument("--n", type=int, default=20)
    sw.add_argument("--seed", type=_u64, default=0)
    sw.add_argument("--kind", choices=KIND_CHOICES)
    sw.add_argument("--out", default="-")
    return p


def _emit(path, columns, rows):
    text = io.write_table(None if path == "-" else path, columns, rows)
    if path == "-":
        sys.stdout.write(text)


def _run_config(args):
    run = io.load_config(args.config)
    changes = {}
    if getattr(args, "kind", None):
        changes["kind"] = args.kind
    if getattr(args, "contact", None):
        changes["contact"] = args.contact
    if changes:
        try:
            run = replace(run, planner=run.planner.replace(**changes))
        except ConfigError as exc:
            raise ConfigError(f"command line: {exc}") from None
    if getattr(args, "seed", None) is not None:
        run = replace(run, solver={**run.solver, "seed": args.seed})
    return run


def cmd_plan(args) -> int:
    run = _run_config(args)
    traj = plan(run.planner, run.solver_options())
    io.write_trajectory(traj, args.out, run)
    rep = traj.report
    print(f"kind        {run.planner.kind} ({run.planner.contact} contact)")
    print(f"status      {rep.status} after {rep.iterations} iterations, "
          f"{len(rep.stages)} stages, {rep.wall_time:.2f} s")
    print(f"objective   {rep.objective:.10g}")
    print(f"residuals   " + ", ".join(f"{k}={v:.2e}" for k, v in rep.residuals.items()))
    if traj.durations:
        print(f"durations   T1={traj.durations[0]:.4g} s, T2={traj.durations[1]:.4g} s")
    if traj.converged:
        family = io.margin_family(run.planner)
        for kind in (("friction-A", "friction-B") if family == "friction" else (family,)):
            try:
                plus, minus, (kp, km) = traj.worst_margin(kind)
                print(f"worst {kind:<10s} +{plus:.6g} (k={kp})  -{minus:.6g} (k={km})")
            except CiboError as exc:
                print(f"worst {kind:<10s} undefined: {exc}")
    print(f"wrote       {args.out}")
    if not traj.converged:
        print(f"solver failure: {rep.status}; final delta {rep.final_delta:.1e}, "
              f"stationarity {rep.stationarity:.2e}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_margin(args) -> int:
    tf = io.read_trajectory(args.trajectory)
    cols, rows = io.recompute_margins(tf, args.kind)
    _emit(args.out, cols, rows)
    return EXIT_OK


def cmd_eval(args) -> int:
    tf = io.read_trajectory(args.trajectory)
    run = io.load_config(args.config)
    if run.eval is None:
        raise ConfigError(f"{args.config}: no [eval] section")
    pspec = run.eval
    if args.n is not None:
        pspec = replace(pspec, count=args.n)
    if args.seed is not None:
        pspec = replace(pspec, seed=args.seed)
    traj = io.trajectory_from_file(tf)
    if not traj.converged:
        print(f"trajectory status is {traj.report.status}; nothing to evaluate", file=sys.stderr)
        return EXIT_SOLVER
    rep = monte_carlo_robustness(traj, pspec)
    lo = "" if pspec.lo is None else pspec.lo
    hi = "" if pspec.hi is None else pspec.hi
    n_ok = rep.n_samples - rep.n_failed
    _emit(args.out, ("trajectory", "kind", "lo", "hi", "samples", "successes", "success_rate",
                     "tightness_gap"),
          [(args.trajectory, rep.kind, _join(lo), _join(hi), rep.n_samples, n_ok,
            rep.success_rate, rep.tightness_gap)])
    return EXIT_OK


def _join(v):
    return " ".join(str(x) for x in np.atleast_1d(v)) if v != "" else ""


def cmd_sweep(args) -> int:
    run = _run_config(args)
    cfg, opts = run.planner, run.solver_options()
    if args.mode_experiment:
        if args.n < 1:
            raise ConfigError("--n must be at least 1")
        if cfg.kind not in ("cibo-modes", "hierarchical"):
            cfg = cfg.replace(kind="cibo-modes")
        res = mode_feasibility_experiment(cfg, args.n, seed=args.seed, opts=opts)
        _emit(args.out, ("method", "feasible", "samples", "rate"),
              [("mode-based", int(res.mode_ok.sum()), len(res.samples), res.rate_mode_based),
               ("hierarchical", int(res.hierarchical_ok.sum()), len(res.samples),
                res.rate_hierarchical)])
        return EXIT_OK
    if cfg.kind != "cibo-com":
        cfg = cfg.replace(kind="cibo-com")
    w = cfg.spec.face_width
    grid = [v * w if unit == "w" else v for unit, v in args.grid]
    rows = sweep_initial_py(cfg, grid, opts)
    _emit(args.out, ("p_y0", "p_y0_over_w", "converged", "r_plus_mm", "r_minus_mm", "status"),
          [(r.p_y0, r.p_y0 / w, r.converged, r.r_plus * 1e3, r.r_minus * 1e3, r.status)
           for r in rows])
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "margin": cmd_margin, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    level = os.environ.get("CIBO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CiboError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
