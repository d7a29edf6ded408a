"""Attack accuracy when forget and test losses share one distribution.

Repeats the attack on independent draws and compares the grand mean with the
exact binomial 95% interval around 0.5.
"""
import argparse

import numpy as np
from scipy import stats

from unlearnbench.metrics import mia_from_losses

DISTS = {
    "exponential": lambda rng, n: rng.exponential(1.0, n),
    "normal": lambda rng, n: rng.normal(2.0, 1.0, n),
    "lognormal": lambda rng, n: rng.lognormal(0.0, 1.5, n),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--per-side", type=int, default=250)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    trials = args.reps * 2 * args.per_side
    lo, hi = (v / trials for v in stats.binom.interval(0.95, trials, 0.5))
    print(f"95% interval around 0.5 for {trials} attack decisions: [{lo:.4f}, {hi:.4f}]")
    for name, draw in DISTS.items():
        means = []
        for r in range(args.reps):
            rng = np.random.default_rng(args.seed * 100_003 + r)
            res = mia_from_losses(draw(rng, args.per_side), draw(rng, args.per_side), seed=r)
            means.append(res.attack_accuracy_mean)
        grand = float(np.mean(means))
        print(f"{name:12s} mean {grand:.4f}  {'inside' if lo <= grand <= hi else 'OUTSIDE'}")


if __name__ == "__main__":
    main()
