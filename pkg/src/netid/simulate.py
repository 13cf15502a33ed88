"""Synthetic data generation, seeding and dataset I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lintf import closed_loop_stability, eye_minus, solve_monic, tfm_apply
from .network import NetworkModel

EXCITATION_KINDS = ("white", "multisine", "prbs")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Node records w (L x N) and excitation records r (K x N)."""

    w: np.ndarray
    r: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        r = np.asarray(self.r, dtype=float)
        r = r.reshape(0, w.shape[1]) if r.size == 0 else np.atleast_2d(r)
        if w.shape[1] < 1:
            raise ValueError("dataset needs at least one sample")
        if r.shape[1] != w.shape[1]:
            raise ValueError(f"w has {w.shape[1]} samples but r has {r.shape[1]}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "r", r)

    @property
    def N(self) -> int:
        return self.w.shape[1]

    @property
    def L(self) -> int:
        return self.w.shape[0]

    @property
    def K(self) -> int:
        return self.r.shape[0]

    def header(self) -> list[str]:
        return [f"w{i + 1}" for i in range(self.L)] + [f"r{k + 1}" for k in range(self.K)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for row in np.vstack([self.w, self.r]).T:
                writer.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], np.array([[float(x) for x in row] for row in rows[1:]])
        widx = [i for i, h in enumerate(head) if h.startswith("w")]
        ridx = [i for i, h in enumerate(head) if h.startswith("r")]
        body = body.reshape(-1, len(head))
        return cls(body[:, widx].T, body[:, ridx].T.reshape(len(ridx), -1))

    def save(self, path) -> None:
        """Binary container: numpy .npz holding w, r (shapes are stored with the arrays)."""
        with open(path, "wb") as fh:
            np.savez(fh, w=self.w, r=self.r)

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as z:
            return cls(z["w"], z["r"])


def split_seed(base_seed: int, *path: int) -> int:
    """Derive an independent 64-bit seed for run ``path`` from ``base_seed``.

    Uses numpy's SeedSequence spawn keys, so run k's stream never depends on
    how many other runs exist.
    """
    ss = np.random.SeedSequence(int(base_seed) & (2**64 - 1), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream,)))


def gen_white(Lambda, N: int, seed: int | np.random.Generator) -> np.ndarray:
    """p x N i.i.d. zero-mean Gaussian samples with covariance Lambda."""
    Lam = np.atleast_2d(np.asarray(Lambda, dtype=float))
    try:
        Lc = np.linalg.cholesky(Lam)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Lambda must be positive definite") from exc
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Lc @ rng.standard_normal((Lam.shape[0], N))


def gen_excitation(kind: str, K: int, N: int, seed, amplitude: float = 1.0,
                   n_freq: int = 8, hold: int = 1) -> np.ndarray:
    """K x N mutually uncorrelated excitation channels with variance amplitude**2.

    ``multisine`` gives each channel ``n_freq`` sinusoids on its own set of DFT
    bins with random phases; ``prbs`` is a random +-amplitude binary signal held
    for ``hold`` samples.
    """
    if kind not in EXCITATION_KINDS:
        raise ValueError(f"unknown excitation kind {kind!r}; expected one of {EXCITATION_KINDS}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if K == 0:
        return np.zeros((0, N))
    if kind == "white":
        r = rng.standard_normal((K, N))
    elif kind == "prbs":
        n_blocks = -(-N // hold)
        r = np.repeat(rng.choice([-1.0, 1.0], size=(K, n_blocks)), hold, axis=1)[:, :N]
    else:
        n_bins = N // 2 - 1
        if K * n_freq > n_bins:
            raise ValueError(f"N={N} is too short for {K}x{n_freq} distinct frequencies")
        bins = np.unique(np.round(np.linspace(1, n_bins, K * n_freq)).astype(int))
        t = np.arange(N)
        r = np.zeros((K, N))
        for k in range(K):
            for b in bins[k::K]:
                r[k] += np.sqrt(2.0 / n_freq) * np.cos(2 * np.pi * b * t / N + rng.uniform(0, 2 * np.pi))
    return amplitude * r


def regressor_rank(r, order: int, tol: float = 1e-9) -> int:
    """Rank of the Gramian of lagged excitation regressors r_k(t-1..t-order).

    Diagnostic for persistence of excitation: full rank is K*order.  Only
    samples with all lags available are used, so start-up zeros do not
    inflate the rank.
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    K, N = r.shape
    if N <= order:
        return 0
    X = np.array([r[k, order - lag: N - lag] for k in range(K) for lag in range(1, order + 1)]).T
    s = np.linalg.svd(X.T @ X / len(X), compute_uv=False)
    return int(np.sum(s > tol * s.max())) if s.size and s.max() > 0 else 0


class UnstableNetworkError(ValueError):
    pass


def simulate_network(m: NetworkModel, r, e, *, allow_unstable: bool = False,
                     burn_in: int = 0, meta: dict | None = None) -> Dataset:
    """Node signals from w(t) = G w(t) + R r(t) + H e(t) with zero initial conditions.

    G is strictly proper, so the recursion is explicit.  ``burn_in`` samples
    are simulated and then dropped from both w and r.
    """
    e = np.atleast_2d(np.asarray(e, dtype=float))
    N = e.shape[1]
    r = np.zeros((m.K, N)) if r is None else np.asarray(r, dtype=float).reshape(m.K, -1)
    if e.shape[0] != m.p or r.shape[1] != N:
        raise ValueError(f"expected e of shape ({m.p}, N) and r of shape ({m.K}, N)")
    if not allow_unstable:
        rep = closed_loop_stability(m.G)
        if not rep:
            raise UnstableNetworkError(f"(I-G)^-1 is unstable, spectral radius {rep.spectral_radius:.6g}")
    u = tfm_apply(m.H, e)
    if m.R is not None:
        u += tfm_apply(m.R, r)
    w = solve_monic(eye_minus(m.G), u)
    return Dataset(w[:, burn_in:], r[:, burn_in:], dict(meta or {}))


def simulate_experiment(m: NetworkModel, N: int, seed: int, kind: str = "white",
                        amplitude: float = 1.0, burn_in: int = 0) -> tuple[Dataset, np.ndarray]:
    """Seeded end-to-end draw; returns the dataset and the driving noise e.

    Stream 0 of ``seed`` drives r, stream 1 drives e.
    """
    n = N + burn_in
    r = gen_excitation(kind, m.K, n, rng_for(seed, 0), amplitude)
    e = gen_white(m.Lambda, n, rng_for(seed, 1))
    data = simulate_network(m, r, e, burn_in=burn_in,
                            meta={"seed": int(seed), "excitation": kind, "amplitude": amplitude})
    return data, e[:, burn_in:]


def save_dataset(data: Dataset, path) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        data.to_csv(path)
    else:
        data.save(path)


def load_dataset(path) -> Dataset:
    path = Path(path)
    return Dataset.from_csv(path) if path.suffix == ".csv" else Dataset.load(path)
