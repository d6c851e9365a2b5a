"""Endpoint covariance of X_n / sqrt(n) against the exact diffusion matrix.

Runs each zero-drift doubly stochastic test field at several n and prints the
relative Frobenius error together with marginal skewness and excess kurtosis.
"""

import argparse

import numpy as np

from rwre.env_model import simple_random_walk
from rwre.evp_exact import exact_diffusion_matrix
from rwre.generators import martingale_2d, mixed_steps_1d
from rwre.mc_stats import EnsembleSpec, Translate, diffusion_estimate, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=10**4)
    ap.add_argument("--steps", type=int, nargs="+", default=[100, 1000, 10000])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()

    fields = {
        "srw_2d": simple_random_walk(2),
        "martingale_2d": martingale_2d(),
        "mixed_steps_1d": mixed_steps_1d(),
    }
    print(f"{'field':16s} {'n':>6s} {'rel_err':>8s} {'skew':>16s} {'ex_kurt':>16s}")
    for name, env in fields.items():
        C = exact_diffusion_matrix(env)
        for n in args.steps:
            res = simulate(EnsembleSpec(Translate(env), n, args.trials, "refresh", args.seed), threads=args.threads)
            rep = diffusion_estimate(res, C)
            print(f"{name:16s} {n:6d} {rep.rel_frobenius_err:8.4f} "
                  f"{np.array2string(rep.marginal_skewness, precision=3):>16s} "
                  f"{np.array2string(rep.marginal_excess_kurtosis, precision=3):>16s}")


if __name__ == "__main__":
    main()
