"""Monte Carlo error of the innovation power against the analytic value, by horizon."""
import argparse

import numpy as np

from innovgrad.model import analyze
from innovgrad.montecarlo import SimConfig, simulate
from innovgrad.systems import nilpotent_example


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--l2", type=float, default=0.5)
    args = ap.parse_args()
    sys = nilpotent_example()
    L = [0.0, args.l2]
    J = analyze(sys, L).J_innov
    print(f"analytic J = {J:.10g}")
    print(f"{'horizon':>9} {'median |err|':>14} {'median stderr':>14}")
    for h in (10_000, 100_000, 1_000_000):
        runs = [simulate(sys, L, SimConfig(horizon=h, seed=k)) for k in range(args.seeds)]
        err = np.median([abs(r.J_hat - J) for r in runs])
        se = np.median([r.stderr_J for r in runs])
        print(f"{h:9d} {err:14.4e} {se:14.4e}")


if __name__ == "__main__":
    main()
