"""Convergence profiles over a penalty sweep: one CSV trace per (method, rho).

    python3 scripts/rho_profile.py --seed 114 --rho 1,10,100 --out profiles/
"""
import argparse
from pathlib import Path

from fwph.hedging import HedgingConfig, run_ph, solve_fwph
from fwph.io.generate import generate_problem
from fwph.io.trace import write_trace
from fwph.oracle import enumerate_ld


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=114)
    ap.add_argument("--rho", default="1,10,100")
    ap.add_argument("--kmax", type=int, default=300)
    ap.add_argument("--alpha", type=float, default=0.0)
    ap.add_argument("--out", default="profiles")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    P = generate_problem(args.seed)
    ld = enumerate_ld(P).value
    print(f"seed {args.seed}: zeta_LD = {ld!r}")
    for rho in (float(r) for r in args.rho.split(",")):
        cfg = HedgingConfig(rho=rho, alpha=args.alpha, k_max=args.kmax, eps=0.0)
        for name, res in (("fwph", solve_fwph(P, cfg)), ("ph", run_ph(P, None, cfg))):
            path = out / f"seed{args.seed}-{name}-rho{rho:g}.csv"
            write_trace(res.trace, path)
            gap = abs((ld - res.best_phi) / ld) * 100
            print(f"{name:>5} rho={rho:<8g} best_phi={res.best_phi:.6f} gap={gap:.4f}% -> {path}")


if __name__ == "__main__":
    main()
