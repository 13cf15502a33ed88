"""Monte-Carlo study on the bundled 3-node network: CLS versus the relaxed criterion.

Usage: python3 scripts/run_sec6.py [out_dir] [--runs N]
"""
import argparse
import sys

import numpy as np

from netid import cli


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("out", nargs="?", default="out/net3")
    ap.add_argument("--runs", type=int, default=None)
    args = ap.parse_args(argv)
    extra = ["--set", f"mc_runs={args.runs}"] if args.runs is not None else []
    code = cli.main(["run", "paper_sec6.json", "--out", args.out, "--svg", *extra])
    if code != 0:
        return code
    import json
    with open(f"{args.out}/summary.json") as fh:
        s = json.load(fh)
    print(f"{'estimator':22s} {'var th12/13':>12s} {'var th23/31':>12s} {'var Gamma':>10s}")
    for label, e in s["estimators"].items():
        cov = np.array(e["empirical_cov"], dtype=float) / s["N"]
        v = np.diag(cov)
        print(f"{label:22s} {v[:10].mean():12.3e} {v[10:20].mean():12.3e} {v[20:].mean():10.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
