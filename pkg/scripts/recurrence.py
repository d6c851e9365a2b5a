"""Fraction of walks that have returned to the origin by time h, for d = 1, 2, 3.

The d=1 column is compared with the exact dynamic-programming value where the
horizon is small enough for it.
"""

import argparse

from rwre.env_model import simple_random_walk
from rwre.mc_stats import EnsembleSpec, exact_return_probability, recurrence_report, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=10**4)
    ap.add_argument("--steps", type=int, default=10**4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()

    results = {d: simulate(EnsembleSpec(simple_random_walk(d), args.steps, args.trials, "refresh", args.seed + d),
                           threads=args.threads) for d in (1, 2, 3)}
    horizons = [h for h in (10, 100, 1000, 10**4, 10**5) if h <= args.steps]
    print(f"{'h':>7s} {'d=1':>8s} {'d=1 exact':>10s} {'d=2':>8s} {'d=3':>8s}")
    for h in horizons:
        fr = {d: recurrence_report(r, h).fraction_returned for d, r in results.items()}
        exact = f"{exact_return_probability(simple_random_walk(1), h):10.4f}" if h <= 2000 else f"{'':>10s}"
        print(f"{h:7d} {fr[1]:8.4f} {exact} {fr[2]:8.4f} {fr[3]:8.4f}")


if __name__ == "__main__":
    main()
