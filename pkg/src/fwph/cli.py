"""Command line entry: ``fwph <subcommand> [options]``.

Exit codes: 0 success, 2 usage, 3 parse, 4 precondition, 5 subproblem
failure, 6 limits hit without a bound.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

from .hedging import HedgingConfig, LimitError, PreconditionError, run_ph, solve_fwph
from .io.generate import InstanceShape, generate_instance
from .io.native import NativeParseError, read_native
from .io.smps import SmpsParseError, read_smps
from .io.trace import write_trace
from .milp import MilpLimitError
from .model import SubproblemError

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_PRECONDITION, EXIT_SUBPROBLEM, EXIT_LIMIT = 0, 2, 3, 4, 5, 6


def gap_percent(ref: float, phi: float) -> float:
    """``|(ref - phi) / ref| * 100``; NaN when the reference is zero."""
    if ref == 0.0:
        return math.nan
    return abs((ref - phi) / ref) * 100.0


def _floats(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fwph", description="Lagrangian bounds for two-stage SMIPs by PH and FW-PH.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def instance_opts(p):
        p.add_argument("--instance", required=True, help="instance file (native) or SMPS stem/file")
        p.add_argument("--format", choices=["native", "smps"], default=None,
                       help="default: smps for .cor/.tim/.sto/.smps paths, native otherwise")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--ref-value", type=float, default=None, help="reference optimum for the gap column")

    def run_opts(p, with_fw):
        p.add_argument("--kmax", type=int, default=1000)
        p.add_argument("--eps", type=float, default=1e-3)
        p.add_argument("--time-limit", type=float, default=None)
        p.add_argument("--trace", default=None, help="CSV trace path")
        if with_fw:
            p.add_argument("--alpha", type=float, default=0.0)
            p.add_argument("--tmax", type=int, default=1)
        else:
            p.add_argument("--bounds-every", type=int, default=1)

    p = sub.add_parser("solve-ef", help="solve the extensive form")
    instance_opts(p)
    p.add_argument("--time-limit", type=float, default=None)

    p = sub.add_parser("ph", help="progressive hedging with bound recovery")
    instance_opts(p)
    p.add_argument("--rho", type=float, required=True)
    run_opts(p, False)

    p = sub.add_parser("fwph", help="FW-PH")
    instance_opts(p)
    p.add_argument("--rho", type=float, required=True)
    run_opts(p, True)

    p = sub.add_parser("oracle", help="exact zeta^LD by enumeration and/or cutting planes")
    instance_opts(p)
    p.add_argument("--method", choices=["enumeration", "kelley", "both"], default="both")

    p = sub.add_parser("gen", help="write a generated instance in native format")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--scenarios", type=int, default=None)
    p.add_argument("--nx", type=int, default=None)

    p = sub.add_parser("sweep", help="one run per penalty value, table-style summary")
    instance_opts(p)
    p.add_argument("--rho", type=_floats, required=True, help="comma-separated penalties")
    p.add_argument("--method", choices=["fwph", "ph"], default="fwph")
    run_opts(p, True)
    p.add_argument("--bounds-every", type=int, default=1)
    return ap


def load_instance(path: str, fmt: str | None):
    if fmt is None:
        fmt = "smps" if Path(path).suffix.lower() in (".cor", ".core", ".tim", ".time", ".sto", ".stoch", ".smps") else "native"
    return read_smps(path) if fmt == "smps" else read_native(path)


def _config(args, rho) -> HedgingConfig:
    return HedgingConfig(rho=rho, alpha=getattr(args, "alpha", 0.0), eps=args.eps, k_max=args.kmax,
                         t_max=getattr(args, "tmax", 1), time_limit=args.time_limit,
                         bounds_every=getattr(args, "bounds_every", 1), threads=args.threads)


def _run(problem, method, cfg):
    if method == "ph":
        return run_ph(problem, None, cfg)
    return solve_fwph(problem, cfg)


def summary_line(result, ref) -> str:
    gap = "n/a" if ref is None else f"{gap_percent(ref, result.best_phi):.4f}%"
    wall = result.trace[-1].wall if result.trace else 0.0
    return (f"method={result.method} phi={result.phi!r} best_phi={result.best_phi!r} gap={gap} "
            f"term={result.termination_letter} iters={result.iterations} residual={result.residual:.3e} "
            f"wall={wall:.2f}s")


def _cmd(args, out) -> int:
    if args.cmd == "gen":
        shape = InstanceShape(n_scenarios=args.scenarios, n_x=args.nx)
        _, text = generate_instance(args.seed, shape)
        if args.out == "-":
            out.write(text)
        else:
            Path(args.out).write_text(text)
        return EXIT_OK

    problem = load_instance(args.instance, args.format)

    if args.cmd == "solve-ef":
        from .oracle import solve_ef
        res = solve_ef(problem, time_limit=args.time_limit)
        out.write(f"zeta_smip={res.value!r} nodes={res.iterations}\n")
        return EXIT_OK

    if args.cmd == "oracle":
        from .oracle import enumerate_ld, kelley_ld, wait_and_see
        if args.method in ("enumeration", "both"):
            out.write(f"enumeration zeta_ld={enumerate_ld(problem).value!r}\n")
        if args.method in ("kelley", "both"):
            k = kelley_ld(problem)
            out.write(f"kelley zeta_ld={k.value!r} upper={k.upper!r} iterations={k.iterations}\n")
        out.write(f"wait_and_see={wait_and_see(problem)!r}\n")
        return EXIT_OK

    if args.cmd in ("ph", "fwph"):
        res = _run(problem, args.cmd, _config(args, args.rho))
        if args.trace:
            write_trace(res.trace, args.trace)
        out.write(summary_line(res, args.ref_value) + "\n")
        return EXIT_OK if math.isfinite(res.best_phi) else EXIT_LIMIT

    if args.cmd == "sweep":
        rows = []
        code = EXIT_OK
        for rho in args.rho:
            res = _run(problem, args.method, _config(args, rho))
            if args.trace:
                write_trace(res.trace, f"{args.trace}-rho{rho:g}.csv")
            rows.append((rho, res))
            if not math.isfinite(res.best_phi):
                code = EXIT_LIMIT
        out.write(sweep_table(rows, args.method, args.ref_value))
        return code
    raise AssertionError(args.cmd)


def sweep_table(rows, method, ref) -> str:
    lines = [f"{'rho':>10} {'method':>6} {'phi':>16} {'best_phi':>16} {'gap%':>9} {'term':>4} {'iters':>6} {'wall_s':>8}"]
    for rho, r in rows:
        gap = "n/a" if ref is None else f"{gap_percent(ref, r.best_phi):.4f}"
        wall = r.trace[-1].wall if r.trace else 0.0
        lines.append(f"{rho:>10g} {method:>6} {r.phi:>16.6f} {r.best_phi:>16.6f} {gap:>9} "
                     f"{r.termination_letter:>4} {r.iterations:>6} {wall:>8.2f}")
    return "\n".join(lines) + "\n"


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    start = time.perf_counter()
    try:
        return _cmd(args, out)
    except (NativeParseError, SmpsParseError, FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as e:
        err.write(f"fwph: parse error: {e}\n")
        return EXIT_PARSE
    except PreconditionError as e:
        err.write(f"fwph: precondition violated: {e}\n")
        return EXIT_PRECONDITION
    except (SubproblemError, MilpLimitError) as e:
        err.write(f"fwph: subproblem failure: {e}\n")
        return EXIT_SUBPROBLEM
    except LimitError as e:
        err.write(f"fwph: limits hit without a bound after {time.perf_counter() - start:.1f}s: {e}\n")
        return EXIT_LIMIT
    except ValueError as e:
        err.write(f"fwph: invalid input: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
