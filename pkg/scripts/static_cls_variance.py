"""Static two-node CLS example: null-space map, covariance and a Monte-Carlo check.

Usage: python3 scripts/example2_variance.py [--runs N]
"""
import argparse

import numpy as np

from netid import cli
from netid import variance as var


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=300)
    args = ap.parse_args(argv)
    cfg = cli.load_config("example2.json", env={})
    cfg.mc_runs = args.runs
    m, ms = cfg.build()
    th0 = cli.extract_theta(ms, m)
    rep = var.covariance_report(ms, th0, var.moment_dataset(ms, np.eye(2)))
    np.set_printoptions(precision=4, suppress=True)
    print("Pi =\n", rep.Pi)
    print("S =\n", rep.S, "\nC =", rep.C)
    print("P_theta =\n", rep.P_theta)
    print("CRB =\n", rep.P_theta_lb)
    rows = cli.run_all(cfg)
    theta = np.array([r["theta"] for r in rows if r["status"] == "ok"])
    print(f"sample cov of sqrt(N)(theta_hat - theta0) over {len(theta)} runs =\n",
          np.cov(np.sqrt(cfg.N) * (theta - th0), rowvar=False))


if __name__ == "__main__":
    main()
