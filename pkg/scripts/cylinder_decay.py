"""-(1/n) log m(cylinder) along refresh-mode paths against the exact entropy rate."""

import argparse

from rwre.env_model import simple_random_walk
from rwre.generators import doubly_stochastic_2d, two_entropy_1d
from rwre.mc_stats import cylinder_decay_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--steps", type=int, nargs="+", default=[10, 100, 1000])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    fields = {"srw_1d": simple_random_walk(1), "two_entropy_1d": two_entropy_1d(), "drift_2d": doubly_stochastic_2d()}
    print(f"{'field':16s} {'n':>6s} {'mean rate':>10s} {'exact':>10s} {'rel_err':>8s} {'std':>8s}")
    for name, env in fields.items():
        for n in args.steps:
            r = cylinder_decay_check(env, n, args.trials, args.seed)
            print(f"{name:16s} {n:6d} {r.mean_rate:10.5f} {r.exact_rate:10.5f} {r.rel_err:8.4f} {r.std_rate:8.4f}")


if __name__ == "__main__":
    main()
