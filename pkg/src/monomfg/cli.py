"""Command line entry point: ``monomfg solve|sweep|verify|demo``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import RunConfig, emit_config, parse_config, parse_text
from .errors import ConfigurationError, MFGError, NonConvergenceError
from .grid import Field, read_field_csv, write_field_csv
from .operator import MFGState, apply_A
from .solver import epsilon_sweep
from .verify import compute_current, run_verification

DEMOS = {
    "reference": """
[grid]
d = 1
N = 64
[hamiltonian]
family = quadratic
V0 = zero
[coupling]
kind = power
alpha = 1
[schedule]
eps_levels = 8
eps_stop = 1e-4
extrapolation_order = 2
""",
    "degenerate": """
[grid]
d = 1
N = 64
[hamiltonian]
family = congestion
tau = 0
sigma = sine-squared
sigma_amplitude = 0.1
V0 = sine
V0_amplitude = 0.5
[coupling]
kind = power
alpha = 1
[schedule]
eps = """ + ", ".join(f"1e-{k}" for k in range(1, 23)) + """
extrapolation_order = 0
""",
    "planar": """
[grid]
d = 2
N = 32
[hamiltonian]
family = power
gamma = 1.5
a = cosine-sum
a_amplitude = 0.1
a_offset = 1.0
sigma = constant
sigma_amplitude = 0.05
V0 = cosine-sum
V0_amplitude = 0.3
[nonlocal]
c1 = 0.5
kernel_width = 0.1
[schedule]
eps = """ + ", ".join(f"1e-{k}" for k in range(1, 23)) + """
extrapolation_order = 0
""",
}


def _out_dir(config: RunConfig, out: str | None) -> str:
    path = out or config.dir
    if not os.path.isabs(path):
        path = os.path.join(os.getcwd(), path)
    os.makedirs(path, exist_ok=True)
    return path


def _state_paths(out_dir):
    return os.path.join(out_dir, "m.csv"), os.path.join(out_dir, "u.csv")


def run_solve(config: RunConfig, out: str | None = None, dry_run: bool = False, log=print,
              plotdata: bool = False) -> int:
    """Continuation at the first eps level, then the eps sweep; writes fields and trace."""
    eps = config.eps_schedule()
    cont = config.continuation()
    if dry_run:
        log(f"grid: d={config.d} N={config.N}; family={config.family}")
        log("mu schedule: " + ", ".join(f"{m:g}" for m in cont.mu_values))
        for k, (a, b) in enumerate(eps.levels):
            log(f"eps level {k}: eps1={a:.6g} eps2={b:.6g}")
        reg = config.regularization()
        log(f"laplacian order p={reg.laplacian_order_p}, penalty q={reg.penalty_q:g}")
        return 0
    out_dir = _out_dir(config, out)
    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        fh.write(emit_config(config))
    spec = config.spec()
    reg = config.regularization()

    def on_level(k, state, level_reg):
        write_field_csv(os.path.join(out_dir, f"m_eps{k}.csv"), state.m)
        write_field_csv(os.path.join(out_dir, f"u_eps{k}.csv"), state.u)

    try:
        result = epsilon_sweep(eps, cont, spec, reg_template=reg, extrapolation_order=config.extrapolation_order,
                               log=log, on_level=on_level)
    except NonConvergenceError as exc:
        log(f"solve failed: {exc}")
        if exc.best is not None:
            best = exc.best
            log(f"best iterate: min m = {best.m.min():.6g}")
            write_field_csv(os.path.join(out_dir, "m_best.csv"), best.m)
            write_field_csv(os.path.join(out_dir, "u_best.csv"), best.u)
        if exc.trace is not None:
            exc.trace.notes.append(f"failure: {exc}")
            exc.trace.to_json(os.path.join(out_dir, "trace.json"))
        return 2
    except MFGError as exc:
        log(f"solve failed: {exc}")
        return 2
    m_path, u_path = _state_paths(out_dir)
    write_field_csv(m_path, result.limit.m)
    write_field_csv(u_path, result.limit.u)
    result.trace.to_json(os.path.join(out_dir, "trace.json"))
    lim = result.trace.limit
    log(f"limit ({lim['method']}): mass={lim['mass']:.12g} min_m={lim['min_m']:.6g}"
        + ("  [non-Cauchy differences flagged]" if result.trace.oscillation else ""))
    if plotdata:
        emit_plotdata(out_dir, result.limit, spec, result.trace)
    return 0


def run_verify(config: RunConfig, state_dir: str, seed: int | None = None, tol: float | None = None,
               log=print) -> int:
    """Load ``m.csv``/``u.csv`` from ``state_dir``, run the checks, write report.json."""
    m_path, u_path = _state_paths(state_dir)
    try:
        spec = config.spec()
        m = read_field_csv(m_path, spec.grid)
        u = read_field_csv(u_path, spec.grid)
    except (OSError, ValueError) as exc:
        log(f"verify failed: cannot load fields from {state_dir}: {exc}")
        return 2
    tolerances = config.tolerances()
    if tol is not None:
        tolerances = {k: tol for k in tolerances}
    seed = config.seed if seed is None else seed
    report = run_verification(MFGState(m, u), spec, seed=seed, trials=config.trials,
                              n_tests=config.test_functions, tolerances=tolerances,
                              context={"state_dir": os.path.abspath(state_dir)})
    report.to_json(os.path.join(state_dir, "report.json"))
    for c in report.checks:
        log(f"{'PASS' if c.passed else 'FAIL'} {c.name}: value={c.value:.6g} tol={c.tol:.3g}")
    return 0 if report.passed else 1


def _write_columns(path, grid, columns):
    coords = [x.ravel() for x in grid.mesh]
    data = np.column_stack(coords + [np.asarray(c).ravel() for c in columns])
    np.savetxt(path, data, fmt="%.17g")


def emit_plotdata(out_dir: str, state: MFGState, spec, trace=None) -> list:
    """Whitespace-separated column files for gnuplot.

    ``m.dat``, ``u.dat``: coordinates then value. ``J.dat``: coordinates then
    current components. ``residual.dat``: coordinates, HJ and FP residual of
    the unregularized operator. ``sweep.dat`` (with a trace): one row per eps
    level.
    """
    g = state.grid
    written = []
    for name, f in (("m", state.m), ("u", state.u)):
        path = os.path.join(out_dir, f"{name}.dat")
        _write_columns(path, g, [f.values])
        written.append(path)
    J = compute_current(state, spec)
    path = os.path.join(out_dir, "J.dat")
    _write_columns(path, g, list(J.array))
    written.append(path)
    res = apply_A(state, spec)
    path = os.path.join(out_dir, "residual.dat")
    _write_columns(path, g, [res.r_hj.values, res.r_fp.values])
    written.append(path)
    if trace is not None and trace.levels:
        path = os.path.join(out_dir, "sweep.dat")
        with open(path, "w") as fh:
            fh.write("# eps1 int_Du_gamma mean_u_abs mass min_m\n")
            for lv in trace.levels:
                a = lv["apriori"]
                fh.write(f"{lv['eps1']!r} {a['int_Du_gamma']!r} {a['mean_u_abs']!r} {a['mass']!r} {lv['min_m']!r}\n")
        written.append(path)
    return written


def _load(path) -> RunConfig:
    return parse_config(path)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "tol", None) is not None and args.command in ("solve", "sweep", "demo"):
        changes["newton_tol"] = args.tol
    return dataclasses.replace(cfg, **changes) if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monomfg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for randomized checks")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--tol", type=float, default=None,
                        help="Newton tolerance (solve/sweep/demo) or every check tolerance (verify)")
    common.add_argument("--dry-run", action="store_true", help="validate and print the schedule only")
    p = sub.add_parser("solve", parents=[common], help="solve along the eps schedule")
    p.add_argument("config")
    p = sub.add_parser("sweep", parents=[common], help="solve and write plot data")
    p.add_argument("config")
    p = sub.add_parser("verify", parents=[common], help="check stored fields")
    p.add_argument("config")
    p.add_argument("dir")
    p = sub.add_parser("demo", parents=[common], help="run a built-in instance end to end")
    p.add_argument("name", choices=sorted(DEMOS))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "demo":
            cfg = _apply_overrides(parse_text(DEMOS[args.name]), args)
            if args.out is None:
                args.out = os.path.join("out", args.name)
            if args.dry_run:
                return run_solve(cfg, args.out, dry_run=True)
            status = run_solve(cfg, args.out, plotdata=True)
            if status:
                return status
            return run_verify(cfg, _out_dir(cfg, args.out), seed=args.seed)
        cfg = _apply_overrides(_load(args.config), args)
        if args.command in ("solve", "sweep"):
            return run_solve(cfg, args.out, dry_run=args.dry_run, plotdata=args.command == "sweep")
        if args.dry_run:
            print(f"verify {args.dir}: configuration valid")
            return 0
        return run_verify(cfg, args.dir, seed=args.seed, tol=args.tol)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
