"""Theory cosine similarity against the noise level on a fine grid (locates its maximum)."""

import argparse

import numpy as np

from dae_asym.metrics import theory_metrics
from dae_asym.mixture import isotropic_binary_measure
from dae_asym.replica import solve_fixed_point


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigma2", type=float, default=0.09)
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--lam", type=float, default=0.1)
    ap.add_argument("--deltas", type=float, nargs="+", default=list(np.round(np.arange(0.05, 1.0, 0.05), 2)))
    return ap.parse_args()


if __name__ == "__main__":
    args = parse_args()
    measure = isotropic_binary_measure(args.sigma2, 1.0, 100)
    w = np.array([0.5, 0.5])
    init, best = None, (None, -1.0)
    for delta in args.deltas:
        sol = solve_fixed_point(measure, w, args.alpha, delta, args.lam, init=init)
        init = sol.stats
        th = float(theory_metrics(sol, measure, 100, with_train=False).theta[0, 0])
        best = max(best, (delta, th), key=lambda t: t[1])
        print(f"delta={delta:.2f} theta={th:.5f} q={sol.stats.q[0, 0]:.5f}")
    print(f"maximum on the grid at delta={best[0]} (theta={best[1]:.5f})")
