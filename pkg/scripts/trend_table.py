"""FW-PH vs PH final gaps to zeta^LD on a family of generated instances.

    python3 scripts/trend_table.py --seeds 0-19 --rho 100 --kmax 200
"""
import argparse
import time

from fwph.hedging import HedgingConfig, run_ph, solve_fwph
from fwph.io.generate import generate_problem
from fwph.oracle import enumerate_ld


def seed_range(text):
    lo, _, hi = text.partition("-")
    return range(int(lo), int(hi or lo) + 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=seed_range, default=seed_range("0-19"))
    ap.add_argument("--rho", type=float, default=100.0)
    ap.add_argument("--kmax", type=int, default=200)
    ap.add_argument("--eps", type=float, default=1e-3)
    args = ap.parse_args()

    print(f"{'seed':>4} {'S':>2} {'zeta_LD':>12} | {'FW-PH gap%':>10} {'':>2} {'it':>4} {'s':>6} | "
          f"{'PH gap%':>10} {'':>2} {'it':>4} {'s':>6}")
    wins = n = 0
    for seed in args.seeds:
        P = generate_problem(seed)
        ld = enumerate_ld(P).value
        cfg = HedgingConfig(rho=args.rho, k_max=args.kmax, eps=args.eps)
        t0 = time.perf_counter()
        f = solve_fwph(P, cfg)
        t1 = time.perf_counter()
        p = run_ph(P, None, cfg)
        t2 = time.perf_counter()
        gf = abs((ld - f.best_phi) / ld) * 100
        gp = abs((ld - p.best_phi) / ld) * 100
        wins += gf <= gp
        n += 1
        print(f"{seed:>4} {P.n_scenarios:>2} {ld:>12.4f} | {gf:>10.4f} {f.termination_letter:>2} {f.iterations:>4} "
              f"{t1 - t0:>6.2f} | {gp:>10.4f} {p.termination_letter:>2} {p.iterations:>4} {t2 - t1:>6.2f}")
    print(f"FW-PH gap <= PH gap on {wins}/{n} instances")


if __name__ == "__main__":
    main()
