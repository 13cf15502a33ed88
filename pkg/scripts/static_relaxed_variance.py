"""Static two-node example: relaxed-criterion covariance as a function of lambda."""
import numpy as np

from netid import cli
from netid import estimate as est
from netid import variance as var
from netid.network import derive_squared_model


def main():
    cfg = cli.load_config("example1.json", env={})
    m, ms = cfg.build()
    th0 = cli.extract_theta(ms, m)
    data = var.moment_dataset(ms, np.eye(2))
    ps = var.psi(ms, th0, data)
    Lb = derive_squared_model(m).LambdaBreve
    print(f"{'lambda':>8s} {'P11':>10s} {'1/(1+lam)^2':>12s}")
    for lam in (0.01, 0.1, 1.0, 10.0, 100.0):
        P = var.cov_wls(ps, est.relaxed_weight(np.eye(1), [[1.0]], lam), Lb)
        print(f"{lam:8.2f} {P[0, 0]:10.6f} {1 / (1 + lam) ** 2:12.6f}")


if __name__ == "__main__":
    main()
