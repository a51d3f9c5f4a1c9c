#!/usr/bin/env python3
"""Iterations to convergence across the penalty step and community size.

Runs the trading loop on one synthetic scenario per (rho, users) cell
and records the iteration count, or a dash when the iteration budget is
exhausted.  The usual picture: too small a step crawls on the dual
side, too large a step crawls on the primal side, and a broad middle
band converges quickly regardless of community size.

    python3 scripts/sweep_rho.py --rhos 0.1 0.5 1 2 5 --users 2 4 6
"""

import argparse
import sys
from dataclasses import replace

from vppsim.experiment import run_co
from vppsim.scenario_io import gen_synthetic


def iterations_for(seed: int, users: int, rho: float, slots: int,
                   budget: int) -> int | None:
    sc = gen_synthetic(seed=seed, users=users, slots=slots,
                       complementary=True)
    sc = replace(sc, algo=replace(sc.algo, rho=rho, max_iter=budget))
    co = run_co(sc, settle=False)
    return co.iterations[0] if co.converged else None


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rhos", type=float, nargs="+",
                    default=[0.1, 0.5, 1.0, 2.0, 5.0])
    ap.add_argument("--users", type=int, nargs="+", default=[2, 4, 6])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--slots", type=int, default=24)
    ap.add_argument("--budget", type=int, default=2000,
                    help="trading-loop iteration budget per cell")
    ap.add_argument("--out", default=None, help="optional TSV path")
    args = ap.parse_args(argv)

    header = "rho\\users" + "".join(f"{u:>8d}" for u in args.users)
    print(header)
    rows = []
    for rho in args.rhos:
        cells = []
        for users in args.users:
            it = iterations_for(args.seed, users, rho, args.slots,
                                args.budget)
            cells.append(it)
        rows.append((rho, cells))
        line = f"{rho:9.3g}" + "".join(
            f"{c:8d}" if c is not None else f"{'-':>8s}" for c in cells)
        print(line)

    if args.out:
        with open(args.out, "w") as fh:
            fh.write("rho\t" + "\t".join(str(u) for u in args.users) + "\n")
            for rho, cells in rows:
                vals = ["" if c is None else str(c) for c in cells]
                fh.write(f"{rho!r}\t" + "\t".join(vals) + "\n")
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
