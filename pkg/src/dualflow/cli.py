"""Command-line entry point: ``dualflow {toy,nash,consistency,selftest}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
Every command writes ``manifest.json`` next to its outputs with the resolved
configuration and SHA-256 checksums of the files it produced.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _apply_thread_cap():
    """Honour DUALFLOW_THREADS before numpy spins up its thread pools."""
    value = os.environ.get("DUALFLOW_THREADS")
    if not value:
        return
    if not value.isdigit() or int(value) < 1:
        raise UsageError("DUALFLOW_THREADS must be a positive integer")
    for var in _THREAD_VARS:
        os.environ[var] = value


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser():
    parser = _Parser(prog="dualflow", description="Dual gradient-flow solver for noise-free Nash systems.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    toy = sub.add_parser("toy", help="two-unknown algebraic model")
    toy.add_argument("--c", type=float, required=True)
    toy.add_argument("--vbar", type=_floats, default=[0.0, 0.0], help="first base state a,b")
    toy.add_argument("--nu", type=float, default=1e-3)
    toy.add_argument("--csv", default=None, help="trajectory CSV (default OUT_DIR/toy.csv)")
    toy.add_argument("--out-dir", default=".")

    nash = sub.add_parser("nash", help="Nash system run from a JSON scenario")
    nash.add_argument("--config", required=True)
    nash.add_argument("--out-dir", default=".")
    nash.add_argument("--log-every", type=int, default=100)

    cons = sub.add_parser("consistency", help="single-player consistency study")
    cons.add_argument("--p", type=int, default=1)
    cons.add_argument("--nx", type=int, default=128)
    cons.add_argument("--nt", type=int, default=65)
    cons.add_argument("--T", type=float, default=0.5)
    cons.add_argument("--eps", type=float, default=0.05, help="amplitude of the cosine potential")
    cons.add_argument("--sigma-ladder", type=_floats, default=[0.2, 0.1, 0.05, 0.025])
    cons.add_argument("--csv", default=None)
    cons.add_argument("--out-dir", default=".")

    st = sub.add_parser("selftest", help="run the invariant suite")
    st.add_argument("--seed", type=int, default=0)
    return parser


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, config, outputs, seed=None):
    from . import __version__

    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "outputs": [{"path": os.path.relpath(p, out_dir), "sha256": _sha256(p)} for p in outputs],
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _cmd_toy(args):
    import csv

    from .flow import FlowConfig, run_scheme
    from .toy import TOY_FLOW, ToyProblem

    if len(args.vbar) != 2:
        raise UsageError("--vbar needs exactly two numbers")
    cfg = FlowConfig(**{**TOY_FLOW.__dict__, "nu": args.nu})
    rows = []

    def observer(k, s, D, ev):
        rows.append((k, s, D[0], D[1], ev.grad_norm))

    result = run_scheme(ToyProblem(args.c, tuple(args.vbar)), cfg, observer)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = Path(args.csv) if args.csv else out_dir / "toy.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "s", "D1", "D2", "grad_norm"])
        for row in rows:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
    summary = {
        "status": result.final_status,
        "stages": [{"k": r.k, "exit": r.exit_reason, "s_exit": r.s_exit, "s_star": r.s_star}
                   for r in result.stages],
        "base_states": [list(map(float, b)) for b in result.base_states],
        "solution": None if result.solution is None else list(map(float, result.solution)),
    }
    spath = out_dir / "toy_summary.json"
    spath.write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    write_manifest(out_dir, "toy", {"c": args.c, "vbar": args.vbar, "flow": cfg.__dict__},
                   [path, spath])
    return EXIT_OK


def _cmd_nash(args):
    from .flow import write_trace_csv
    from .io import write_field
    from .nash import NashScenario, run

    try:
        scenario = NashScenario.load(args.config)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise UsageError(f"cannot load scenario: {exc}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run(scenario, log_every=args.log_every)
    outputs = []
    trace = out_dir / "trace.csv"
    write_trace_csv(report.result, trace)
    outputs.append(trace)
    for k, base in enumerate(report.result.base_states, start=1):
        p = out_dir / f"base_state_{k:02d}.dfld"
        write_field(p, base, scenario.grid, "vector")
        outputs.append(p)
    if report.result.solution is not None:
        p = out_dir / "solution.dfld"
        write_field(p, report.result.solution, scenario.grid, "vector")
        outputs.append(p)
    audit = dict(report.audits)
    audit.update({
        "dissipation_monotone": report.dissipation_ok,
        "worst_dissipation_increase": report.worst_dissipation_increase,
        "base_state_continuity_exact": report.continuity_exact,
        "max_accepted_violating_fraction": report.max_accepted_violation,
    })
    apath = out_dir / "audit.json"
    apath.write_text(json.dumps(audit, indent=2, sort_keys=True) + "\n")
    outputs.append(apath)
    print(json.dumps(audit, sort_keys=True))
    write_manifest(out_dir, "nash", scenario.to_dict(), outputs)
    return EXIT_OK


def _cmd_consistency(args):
    import csv

    from .hj import consistency_experiment

    if args.nt < 3 or args.nx < 4 or args.nx % 2:
        raise UsageError("need nt >= 3 and an even nx >= 4")
    rows = consistency_experiment(args.nx, args.nt, args.T, args.eps, tuple(args.sigma_ladder), args.p)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = Path(args.csv) if args.csv else out_dir / "consistency.csv"
    cols = ["m", "sigma", "l1_vbar", "gap", "recovery_err", "min_rho", "min_margin", "gap_a",
            "constraint_residual_pair"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r.m] + [repr(float(getattr(r, c))) for c in cols[1:]])
    for r in rows:
        print(f"m={r.m} sigma={r.sigma:g} l1={r.l1_vbar:.3e} gap={r.gap:.3e} "
              f"recovery={r.recovery_err:.3e} min_rho={r.min_rho:.3f}")
    write_manifest(out_dir, "consistency", vars(args), [path])
    return EXIT_OK


def _cmd_selftest(args):
    from .selftest import run_selftest

    rows = run_selftest(seed=args.seed)
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_NUMERICAL


COMMANDS = {"toy": _cmd_toy, "nash": _cmd_nash, "consistency": _cmd_consistency,
            "selftest": _cmd_selftest}


def main(argv=None):
    parser = build_parser()
    try:
        _apply_thread_cap()
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE

    from .errors import (DualFlowError, InvalidDensityError, PositivityError, ShapeError,
                         SingularityError, StiffnessError, UnsupportedConfigurationError,
                         ZoneExitError)

    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StiffnessError, PositivityError, ZoneExitError, SingularityError) as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UnsupportedConfigurationError, InvalidDensityError, ShapeError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DualFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
