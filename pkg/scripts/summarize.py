"""Theory-vs-simulation z-scores from a compare-mode results.csv."""

import argparse
import csv
import math

PAIRS = [("mse", "mse_theory", "sim_mse", "sim_mse_se"),
         ("theta", "theta_11", "sim_theta_11", "sim_theta_11_se"),
         ("|w|^2/d", "trq_per_p", "sim_q", "sim_q_se"),
         ("b", "b_hat", "sim_b", "sim_b_se"),
         ("train", "train_error", "sim_train_mse", "sim_train_mse_se")]


def _f(v):
    return float("nan") if v in ("NA", "") else float(v)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv")
    args = ap.parse_args()
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    print("delta  alpha  " + "  ".join(f"{name:>24}" for name, *_ in PAIRS))
    for r in rows:
        cells = []
        for _, t, s, se in PAIRS:
            tv, sv, sev = _f(r[t]), _f(r[s]), _f(r[se])
            z = (tv - sv) / sev if sev > 0 else math.nan
            cells.append(f"{tv:9.4f} {sv:9.4f} z={z:+5.1f}")
        print(f"{_f(r['delta']):5.2f}  {_f(r['alpha']):5.2f}  " + "  ".join(cells))
