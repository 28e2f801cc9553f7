"""Bayes MSE under both readings of the q equation, next to the oracle and mse_circ."""

import argparse

import numpy as np

from dae_asym.baselines import BayesConfig, bayes_fixed_point, bayes_mse, oracle_mse_theory


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigma2", type=float, default=0.09)
    ap.add_argument("--d", type=int, default=500)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.1, 1.0, 8.0, 64.0])
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9])
    return ap.parse_args()


if __name__ == "__main__":
    args = parse_args()
    print("alpha delta   mse*-circ  printed-circ  nishimori-circ")
    for alpha in args.alphas:
        stats = {c: bayes_fixed_point(alpha, args.sigma2, BayesConfig(convention=c)) for c in ("printed", "nishimori")}
        for delta in args.deltas:
            ex_o, _ = oracle_mse_theory(args.sigma2, delta, args.d)
            ex = [bayes_mse(stats[c], args.sigma2, delta, args.d)[0] for c in ("printed", "nishimori")]
            print(f"{alpha:5g} {delta:5.2f} {ex_o:11.5f} {ex[0]:13.5f} {ex[1]:15.5f}")
    print("q, m at the fixed points:")
    for alpha in args.alphas:
        for c in ("printed", "nishimori"):
            st = bayes_fixed_point(alpha, args.sigma2, BayesConfig(convention=c))
            print(f"  alpha={alpha:g} {c:9s} q={st.q:.5f} m={st.m:.5f} V={st.V:.5f} small_alpha={st.small_alpha}")
