"""Monte-Carlo experiment runner: ``netid run | validate | simulate``."""
from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import estimate as est
from . import variance as var
from .lintf import TFMatrix
from .network import NetworkModel, StructureError, derive_squared_model, detect_order
from .predictor import ModelSet, extract_theta
from .simulate import EXCITATION_KINDS, save_dataset, simulate_experiment, split_seed

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3, 4
METHODS = ("wls", "cls", "relaxed", "ml_det")
CONFIG_DIR = Path(__file__).parent / "configs"


class ConfigError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass
class EstimatorSpec:
    method: str
    Q: object = None
    Q_a: object = None
    lam: float | None = None

    @property
    def label(self) -> str:
        return f"{self.method}[lambda={self.lam:g}]" if self.method == "relaxed" else self.method


@dataclass
class VarianceSpec:
    enabled: bool = False
    mode: str = "sampled"
    pi_mode: str = "eig"
    N: int = 100_000


@dataclass
class ExperimentConfig:
    network: dict
    modelset: dict
    excitation: dict = field(default_factory=lambda: {"kind": "white", "amplitude": 1.0})
    N: int = 1000
    mc_runs: int = 100
    base_seed: int = 0
    estimators: list = field(default_factory=list)
    variance: VarianceSpec = field(default_factory=VarianceSpec)
    burn_in: int = 0
    name: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        for key in ("network", "modelset"):
            if key not in d:
                raise ConfigError(f"missing section {key!r}")
        ests = []
        for k, e in enumerate(d.get("estimators", [{"method": "wls"}])):
            if e.get("method") not in METHODS:
                raise ConfigError(f"estimators.{k}.method must be one of {METHODS}")
            lam = e.get("lambda")
            ests.append(EstimatorSpec(e["method"], e.get("Q"), e.get("Q_a"), None if lam is None else float(lam)))
        v = d.get("variance", {}) or {}
        vs = VarianceSpec(bool(v.get("enabled", False)), v.get("mode", "sampled"), v.get("pi_mode", "eig"),
                          int(v.get("N", 100_000)))
        if vs.mode not in ("sampled", "analytic_examples"):
            raise ConfigError("variance.mode must be 'sampled' or 'analytic_examples'")
        if vs.pi_mode not in ("eig", "rows"):
            raise ConfigError("variance.pi_mode must be 'eig' or 'rows'")
        exc = dict(d.get("excitation", {"kind": "white", "amplitude": 1.0}))
        if exc.get("kind", "white") not in EXCITATION_KINDS:
            raise ConfigError(f"excitation.kind must be one of {EXCITATION_KINDS}")
        try:
            cfg = cls(d["network"], d["modelset"], exc, int(d.get("N", 1000)), int(d.get("mc_runs", 100)),
                      int(d.get("base_seed", 0)), ests, vs, int(d.get("burn_in", 0)), str(d.get("name", "")))
        except (TypeError, ValueError) as exc_:
            raise ConfigError(str(exc_)) from exc_
        if cfg.N < 1 or cfg.mc_runs < 0:
            raise ConfigError("N must be positive and mc_runs non-negative")
        return cfg

    def build(self) -> tuple[NetworkModel, ModelSet]:
        try:
            m = NetworkModel.from_spec(self.network)
            ms = ModelSet.from_spec(self.modelset, m)
        except StructureError as exc:
            raise ValidationError(str(exc)) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"network/modelset: {exc}") from exc
        for k, e in enumerate(self.estimators):
            _estimator_weights(e, ms, f"estimators.{k}")
        return m, ms


def _matrix(spec, n: int, where: str, Lambda=None) -> np.ndarray:
    if spec is None or spec == "identity":
        return np.eye(n)
    if spec == "inv_lambda":
        if Lambda is None:
            raise ConfigError(f"{where}: 'inv_lambda' needs a known Lambda")
        return np.linalg.inv(Lambda)
    M = np.atleast_2d(np.asarray(spec, dtype=float))
    if M.shape != (n, n):
        raise ConfigError(f"{where} must be {n}x{n}, got {M.shape}")
    if not np.allclose(M, M.T):
        raise ConfigError(f"{where} must be symmetric")
    return M


def _estimator_weights(e: EstimatorSpec, ms: ModelSet, where: str):
    if e.method == "wls":
        Q = _matrix(e.Q, ms.L, where + ".Q", ms.Lambda)
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ConfigError(f"{where}.Q must be positive semidefinite")
        return Q
    if ms.p == ms.L:
        raise ConfigError(f"{where}: {e.method} needs rank-reduced noise (p < L)")
    if e.method == "ml_det":
        return None
    Q_a = _matrix(e.Q_a, ms.p, where + ".Q_a", ms.Lambda)
    if np.linalg.eigvalsh(Q_a).min() <= 0:
        raise ConfigError(f"{where}.Q_a must be positive definite")
    if e.method == "relaxed" and (e.lam is None or e.lam <= 0):
        raise ConfigError(f"{where}.lambda must be positive for the relaxed criterion")
    return Q_a


# ------------------------------------------------------------------ config I/O

def _resolve(path) -> Path:
    p = Path(path)
    if not p.exists() and (CONFIG_DIR / p.name).exists():
        return CONFIG_DIR / p.name
    return p


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(d: dict, assignment: str) -> None:
    """Set a dot-path field in place, e.g. ``estimators.0.lambda=10``."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, value = assignment.split("=", 1)
    parts = key.split(".")
    node = d
    for part in parts[:-1]:
        node = node[int(part)] if isinstance(node, list) else node.setdefault(part, {})
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = _parse_value(value)
    else:
        node[last] = _parse_value(value)


def load_config(path, overrides=(), env=None) -> ExperimentConfig:
    env = os.environ if env is None else env
    try:
        with open(_resolve(path)) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    d = copy.deepcopy(d)
    try:
        for ov in overrides:
            apply_override(d, ov)
    except (KeyError, IndexError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad override: {exc}") from exc
    if env.get("NETID_SEED"):
        d["base_seed"] = int(env["NETID_SEED"])
    return ExperimentConfig.from_dict(d)


# ------------------------------------------------------------------ runs

def _fit(e: EstimatorSpec, ms: ModelSet, data, prob) -> est.EstimationResult:
    W = _estimator_weights(e, ms, e.label)
    if e.method == "wls":
        return est.wls(ms, data, W, problem=prob)
    if e.method == "cls":
        return est.cls(ms, data, W, problem=prob)
    if e.method == "relaxed":
        return est.relaxed(ms, data, W, e.lam, problem=prob)
    return est.ml_det(ms, data, problem=prob)


def run_one(cfg: ExperimentConfig, k: int) -> list[dict]:
    """All estimators on the data of run k (seed split from base_seed)."""
    m, ms = cfg.build()
    seed = split_seed(cfg.base_seed, k)
    exc = cfg.excitation
    data, _ = simulate_experiment(m, cfg.N, seed, exc.get("kind", "white"),
                                  float(exc.get("amplitude", 1.0)), cfg.burn_in)
    rows = []
    try:
        prob = est.AffineProblem(ms, data)
    except np.linalg.LinAlgError as exc_:
        prob, err = None, str(exc_)
    for e in cfg.estimators:
        row = {"run": k, "seed": seed, "estimator": e.label, "method": e.method,
               "lambda": e.lam if e.lam is not None else ""}
        try:
            if prob is None:
                raise np.linalg.LinAlgError(err)
            r = _fit(e, ms, data, prob)
            row.update(theta=r.theta_hat.tolist(), criterion=r.criterion_value, constraint=r.constraint_value,
                       iterations=r.iterations, converged=r.converged, feasible=r.feasible, status="ok")
        except (np.linalg.LinAlgError, ValueError) as exc_:
            row.update(theta=[float("nan")] * ms.n_theta, criterion=float("nan"), constraint=float("nan"),
                       iterations=0, converged=False, feasible=False, status=f"failed: {exc_}")
        rows.append(row)
    return rows


def _workers(n_tasks: int, env=None) -> int:
    env = os.environ if env is None else env
    cap = int(env.get("NETID_THREADS", 0) or 0) or (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def run_all(cfg: ExperimentConfig, env=None) -> list[dict]:
    """Rows for every run, ordered by run index regardless of scheduling."""
    n = cfg.mc_runs
    w = _workers(n, env)
    if w == 1 or n < 2:
        return [row for k in range(n) for row in run_one(cfg, k)]
    with ProcessPoolExecutor(max_workers=w) as pool:
        chunks = list(pool.map(run_one, [cfg] * n, range(n), chunksize=max(1, n // (4 * w))))
    return [row for rows in chunks for row in rows]


# ------------------------------------------------------------------ summaries

QUANTILES = ("min", "q25", "median", "q75", "max")


@dataclass
class RunSummary:
    theta0: list
    labels: list
    N: int
    mc_runs: int
    estimators: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _clean(x):
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (float, np.floating)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def theoretical(cfg: ExperimentConfig, m: NetworkModel, ms: ModelSet, theta0) -> dict:
    """Theoretical covariance reports per estimator, keyed by estimator label."""
    if cfg.variance.mode == "analytic_examples":
        amp = float(cfg.excitation.get("amplitude", 1.0))
        data = var.moment_dataset(ms, amp ** 2 * np.eye(ms.K))
    else:
        exc = cfg.excitation
        data, _ = simulate_experiment(m, cfg.variance.N, split_seed(cfg.base_seed, 0, 0),
                                      exc.get("kind", "white"), float(exc.get("amplitude", 1.0)), cfg.burn_in)
    ps = var.psi(ms, theta0, data)
    A = var.constraint_jacobian(ms, theta0, data) if ms.p < ms.L else None
    out = {}
    for e in cfg.estimators:
        W = _estimator_weights(e, ms, e.label)
        kw = dict(Lambda0=m.Lambda, pi_mode=cfg.variance.pi_mode, psi_arr=ps, A=A)
        if e.method == "wls":
            rep = var.covariance_report(ms, theta0, data, method="wls", Q=W, **kw)
        elif e.method == "relaxed":
            rep = var.covariance_report(ms, theta0, data, method="relaxed", Q_a=W, lam=e.lam, **kw)
        else:
            Q_a = np.linalg.inv(m.Lambda) if W is None else W
            rep = var.covariance_report(ms, theta0, data, method="cls", Q_a=Q_a, **kw)
        out[e.label] = rep
    return out


def summarize(cfg: ExperimentConfig, rows: list[dict], reports: dict | None = None) -> RunSummary:
    m, ms = cfg.build()
    theta0 = extract_theta(ms, m)
    s = RunSummary(theta0.tolist(), ms.labels(), cfg.N, cfg.mc_runs)
    for e in cfg.estimators:
        ok = [r for r in rows if r["estimator"] == e.label and r["status"] == "ok"]
        entry = {"method": e.method, "lambda": e.lam, "n_ok": len(ok),
                 "n_failed": sum(1 for r in rows if r["estimator"] == e.label) - len(ok)}
        if len(ok) >= 2:
            err = np.array([r["theta"] for r in ok]) - theta0
            q = np.quantile(err, [0, 0.25, 0.5, 0.75, 1.0], axis=0)
            entry["quantiles"] = {name: q[i].tolist() for i, name in enumerate(QUANTILES)}
            entry["mean_error"] = err.mean(axis=0).tolist()
            entry["empirical_cov"] = np.cov(np.sqrt(cfg.N) * err, rowvar=False).tolist()
        if reports and e.label in reports:
            rep = reports[e.label]
            entry["P_theta"] = rep.P_theta.tolist()
            entry["P_theta_lb"] = rep.P_theta_lb.tolist()
            entry["n_rho"] = rep.n_rho
        s.estimators[e.label] = entry
    return s


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_runs(rows: list[dict], labels: list[str], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["run", "seed", "estimator", "method", "lambda", *labels,
                     "criterion", "constraint", "iterations", "converged", "feasible", "status"])
        for r in rows:
            wr.writerow([_fmt(r[k]) for k in ("run", "seed", "estimator", "method", "lambda")]
                        + [_fmt(float(v)) for v in r["theta"]]
                        + [_fmt(r[k]) for k in ("criterion", "constraint", "iterations", "converged", "feasible", "status")])


def write_boxplot(summary: RunSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["estimator", "index", "parameter", *QUANTILES])
        for label, entry in summary.estimators.items():
            if "quantiles" not in entry:
                continue
            for i, name in enumerate(summary.labels):
                wr.writerow([label, i + 1, name] + [_fmt(float(entry["quantiles"][q][i])) for q in QUANTILES])


def write_svg(summary: RunSummary, path, width: int = 900, height: int = 320) -> None:
    """Minimal SVG boxplot of the estimation errors, one panel per estimator."""
    panels = [(k, v) for k, v in summary.estimators.items() if "quantiles" in v]
    n = len(summary.labels)
    H = height * max(1, len(panels))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{H}" font-size="10">']
    for p, (label, entry) in enumerate(panels):
        q = {k: np.asarray(v) for k, v in entry["quantiles"].items()}
        lo, hi = float(q["min"].min()), float(q["max"].max())
        span = max(hi - lo, 1e-12)
        y0 = p * height

        def y(v):
            return y0 + 20 + (height - 40) * (hi - v) / span

        out.append(f'<text x="5" y="{y0 + 12}">{label}</text>')
        out.append(f'<line x1="30" x2="{width - 10}" y1="{y(0):.1f}" y2="{y(0):.1f}" stroke="#bbb"/>')
        dx = (width - 40) / max(n, 1)
        for i in range(n):
            cx = 35 + dx * (i + 0.5)
            out.append(f'<line x1="{cx:.1f}" x2="{cx:.1f}" y1="{y(q["max"][i]):.1f}" y2="{y(q["min"][i]):.1f}" stroke="black"/>')
            out.append(f'<rect x="{cx - dx / 4:.1f}" y="{y(q["q75"][i]):.1f}" width="{dx / 2:.1f}" '
                       f'height="{max(y(q["q25"][i]) - y(q["q75"][i]), 0.5):.1f}" fill="#9cf" stroke="black"/>')
            out.append(f'<line x1="{cx - dx / 4:.1f}" x2="{cx + dx / 4:.1f}" y1="{y(q["median"][i]):.1f}" '
                       f'y2="{y(q["median"][i]):.1f}" stroke="red"/>')
            out.append(f'<text x="{cx - 4:.1f}" y="{y0 + height - 5}">{i + 1}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


# ------------------------------------------------------------------ validation

def validation_checks(cfg: ExperimentConfig) -> list[tuple[str, bool, str]]:
    """(name, passed, detail) for every structural, stability and identifiability check."""
    checks = []
    net = cfg.network
    try:
        L, p = int(net["L"]), int(net["p"])
        H = TFMatrix.from_spec(net["H"], L, p)
        Lam = np.atleast_2d(np.asarray(net["Lambda"], dtype=float))
        D = H.feedthrough()
        order_p, perm = detect_order(D @ Lam @ D.T)
        ident = perm == tuple(range(L))
        leading_ok = np.linalg.matrix_rank(D[:p]) == p
        detail = f"noise rank p = {order_p}"
        if not leading_ok:
            detail += f"; reorder nodes as {[i + 1 for i in perm]} to put a full-rank noise block first"
        checks.append(("noise ordering", bool(leading_ok and order_p == p), detail if ident or not leading_ok
                       else detail + f" (detected order {[i + 1 for i in perm]} is also admissible)"))
    except (KeyError, ValueError, TypeError) as exc:
        checks.append(("noise ordering", False, str(exc)))
    try:
        m, ms = cfg.build()
    except (ConfigError, ValidationError) as exc:
        checks.append(("structure", False, str(exc)))
        return checks
    checks.append(("structure", True, f"L = {m.L}, K = {m.K}, p = {m.p}, n_theta = {ms.n_theta}"))
    for name, rep in m.check().items():
        detail = f"spectral radius {rep.spectral_radius:.4g}"
        if not rep:
            detail += f"; poles {np.round(rep.poles, 4).tolist()}"
        checks.append((name, bool(rep), detail))
    max_lag = max((max(b.lags) for b in ms.blocks if b.kind in ("G", "R")), default=0)
    checks.append(("record length", cfg.N >= max_lag + 1, f"N = {cfg.N}, longest FIR lag {max_lag}"))
    theta0 = extract_theta(ms, m)
    rep = est.check_identifiability(ms, theta0)
    for line, row in zip(rep.lines(), rep.rows):
        checks.append((f"identifiability row {row['row']}", row["count_ok"] and row["rank_ok"], line))
    return checks


# ------------------------------------------------------------------ commands

def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    cfg.build()  # config errors surface here before the structural checks
    checks = validation_checks(cfg)
    hard = [c for c in checks if not c[1] and not c[0].startswith("identifiability")]
    if hard:
        for name, _, detail in hard:
            print(f"FAIL {name}: {detail}", file=sys.stderr)
        return EXIT_VALIDATION
    for name, ok, detail in checks:
        if not ok:
            print(f"warning: {name}: {detail}", file=sys.stderr)
    m, ms = cfg.build()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_all(cfg)
    write_runs(rows, ms.labels(), out / "runs.csv")
    reports, code = None, EXIT_OK
    if cfg.variance.enabled:
        try:
            reports = theoretical(cfg, m, ms, extract_theta(ms, m))
        except np.linalg.LinAlgError as exc:
            print(f"covariance failed: {exc}", file=sys.stderr)
            code = EXIT_NUMERICAL
    summary = summarize(cfg, rows, reports)
    with open(out / "summary.json", "w") as fh:
        json.dump(_clean(summary.to_dict()), fh, sort_keys=True, indent=1)
        fh.write("\n")
    write_boxplot(summary, out / "boxplot.csv")
    if args.svg:
        write_svg(summary, out / "boxplot.svg")
    failed = sum(1 for r in rows if r["status"] != "ok")
    print(f"{cfg.mc_runs} runs x {len(cfg.estimators)} estimators -> {out} ({failed} failed)")
    return EXIT_NUMERICAL if failed else code


def cmd_validate(args) -> int:
    cfg = load_config(args.config, args.set)
    checks = validation_checks(cfg)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(c[1] for c in checks) else EXIT_VALIDATION


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.set)
    m, _ = cfg.build()
    seed = split_seed(cfg.base_seed, args.run)
    exc = cfg.excitation
    data, _ = simulate_experiment(m, cfg.N, seed, exc.get("kind", "white"), float(exc.get("amplitude", 1.0)),
                                  cfg.burn_in)
    save_dataset(data, args.out)
    print(f"wrote {data.N} samples of {data.L} nodes and {data.K} excitations to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netid", description="Prediction-error identification of dynamic networks")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (("run", cmd_run, "run a Monte-Carlo experiment"),
                               ("validate", cmd_validate, "check a config without running it"),
                               ("simulate", cmd_simulate, "write one simulated dataset")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="experiment JSON (bundled names such as paper_sec6.json also work)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field by dot path, e.g. estimators.0.lambda=10")
        p.set_defaults(func=fn)
        if name == "run":
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--svg", action="store_true", help="also write boxplot.svg")
        if name == "simulate":
            p.add_argument("--out", required=True, help="dataset file (.csv or .npz)")
            p.add_argument("--run", type=int, default=0, help="run index whose seed is used")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
