"""Descent on the two-state nilpotent plant from several starting gains.

Shows that the limit depends on the start: the first gain entry never moves
and every point of the line l2 = 0 is a stationary point.
"""
import argparse

import numpy as np

from innovgrad.descent import DescentConfig, descend
from innovgrad.systems import example_loss, nilpotent_example


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mode", choices=("gd_linesearch", "flow_rk4"), default="gd_linesearch")
    args = ap.parse_args()
    sys = nilpotent_example()
    print(f"{'l1(0)':>8} {'l2(0)':>8} {'J(0)':>10} {'l1(end)':>10} {'l2(end)':>12} "
          f"{'J(end)':>8} {'steps':>6}")
    for l1, l2 in [(0.0, 0.5), (3.0, -0.8), (-5.0, 0.95), (7.0, 0.0)]:
        tr = descend(sys, [l1, l2], DescentConfig(mode=args.mode))
        L = tr.final.L.ravel()
        print(f"{l1:8.2f} {l2:8.2f} {example_loss(l2):10.4f} {L[0]:10.4f} {L[1]:12.3e} "
              f"{tr.final.J:8.4f} {len(tr.samples) - 1:6d}")
    print("every limit has J = 3; the Kalman gain (2/3, 0) is reached only from l1(0) = 2/3")


if __name__ == "__main__":
    main()
