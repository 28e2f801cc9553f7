"""Run every (or the named) spec under configs/ into results/<name>/."""

import argparse
import sys
from pathlib import Path

from dae_asym.cli import main

ROOT = Path(__file__).resolve().parents[1]


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*", help="config stems, e.g. fig1_compare (default: all)")
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--jobs", type=int, default=1)
    return ap.parse_args()


if __name__ == "__main__":
    args = parse_args()
    paths = sorted((ROOT / "configs").glob("*.yaml"))
    if args.names:
        paths = [p for p in paths if p.stem in args.names]
    worst = 0
    for path in paths:
        out = Path(args.out) / path.stem
        code = main(["run", str(path), "--out", str(out), "--jobs", str(args.jobs)])
        print(f"{path.stem}: exit {code} -> {out}")
        worst = max(worst, code)
    sys.exit(worst)
