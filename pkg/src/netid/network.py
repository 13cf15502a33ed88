"""Dynamic network models w = G w + R r + H e and their derived objects."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .lintf import (
    TFMatrix,
    closed_loop_stability,
    freq_eval,
    inverse_stability,
    stability_check,
)


class StructureError(ValueError):
    """A network or model violates a structural requirement (shape, properness, ordering)."""


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Quadruple (G, R, H, Lambda) with L nodes, K excitations and noise rank p.

    Structural requirements are enforced at construction.  Stability is only
    reported (see :meth:`check`), because estimators evaluate candidate models
    that may be unstable.
    """

    G: TFMatrix
    R: TFMatrix | None
    H: TFMatrix
    Lambda: np.ndarray
    L: int = field(init=False)
    K: int = field(init=False)
    p: int = field(init=False)

    def __post_init__(self):
        L = self.G.rows
        if self.G.cols != L:
            raise StructureError("G must be square")
        K = 0 if self.R is None else self.R.cols
        if self.R is not None and self.R.rows != L:
            raise StructureError(f"R must have {L} rows")
        if self.H.rows != L:
            raise StructureError(f"H must have {L} rows")
        p = self.H.cols
        if p > L:
            raise StructureError("noise rank p cannot exceed L")
        for j in range(L):
            if not self.G[j, j].is_zero():
                raise StructureError(f"G diagonal entry ({j + 1},{j + 1}) must be zero")
        if not self.G.strictly_proper():
            bad = [(i + 1, j + 1) for i in range(L) for j in range(L) if not self.G[i, j].strictly_proper()]
            raise StructureError(f"G entries must be strictly proper, offending entries {bad}")
        if not self.H.block(slice(0, p), slice(0, p)).monic():
            raise StructureError("leading p x p block of H must be monic (node ordering assumption)")
        Lam = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        if Lam.shape != (p, p):
            raise StructureError(f"Lambda must be {p}x{p}")
        if not np.allclose(Lam, Lam.T):
            raise StructureError("Lambda must be symmetric")
        if np.linalg.eigvalsh(Lam).min() <= 0:
            raise StructureError("Lambda must be positive definite")
        object.__setattr__(self, "Lambda", Lam)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "p", p)

    @property
    def Gamma(self) -> np.ndarray:
        return self.H.feedthrough()[self.p :, :]

    def R_or_zero(self) -> TFMatrix:
        return self.R if self.R is not None else TFMatrix.zeros(self.L, 1)

    def check(self) -> dict[str, object]:
        """Stability checks from the model definition; returns named results."""
        Ha = self.H.block(slice(0, self.p), slice(0, self.p))
        out = {
            "G_stable": stability_check(self.G),
            "H_stable": stability_check(self.H),
            "H_a_inverse_stable": inverse_stability(Ha),
            "closed_loop_stable": closed_loop_stability(self.G),
        }
        if self.R is not None:
            out["R_stable"] = stability_check(self.R)
        return out

    def is_valid(self) -> bool:
        return all(bool(v) for v in self.check().values())

    def to_spec(self) -> dict:
        return {
            "L": self.L,
            "K": self.K,
            "p": self.p,
            "G": self.G.to_spec(),
            "R": self.R.to_spec() if self.R is not None else None,
            "H": self.H.to_spec(),
            "Lambda": self.Lambda.tolist(),
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "NetworkModel":
        L, K, p = int(spec["L"]), int(spec.get("K", 0)), int(spec["p"])
        G = TFMatrix.from_spec(spec["G"], L, L)
        R = TFMatrix.from_spec(spec["R"], L, K) if K > 0 else None
        H = TFMatrix.from_spec(spec["H"], L, p)
        return cls(G, R, H, np.asarray(spec["Lambda"], dtype=float))


@dataclass(frozen=True, eq=False)
class SquaredNoiseModel:
    Hbreve: TFMatrix
    Gamma: np.ndarray
    LambdaBreve: np.ndarray


def derive_squared_model(m: NetworkModel) -> SquaredNoiseModel:
    """Square monic noise model [[H_a, 0], [H_b - Gamma, I]] with singular innovation covariance."""
    L, p = m.L, m.p
    Gamma = m.Gamma
    grid = []
    for i in range(L):
        row = []
        for j in range(L):
            if j < p:
                tf = m.H[i, j]
                row.append(tf.minus_const(Gamma[i - p, j]) if i >= p else tf)
            else:
                row.append(1.0 if i == j else 0.0)
        grid.append(row)
    Hbreve = TFMatrix(grid)
    IG = np.vstack([np.eye(p), Gamma])
    return SquaredNoiseModel(Hbreve, Gamma, IG @ m.Lambda @ IG.T)


def closed_loop_maps(m: NetworkModel, omega: float) -> tuple[np.ndarray, np.ndarray]:
    """(T_wr, T_we) = (I - G)^-1 [R, H] at z = exp(i omega)."""
    IG = np.eye(m.L) - freq_eval(m.G, omega)
    Rw = freq_eval(m.R, omega) if m.R is not None else np.zeros((m.L, 0), dtype=complex)
    cond = np.linalg.cond(IG)
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(f"I - G is singular at omega={omega}")
    T = np.linalg.solve(IG, np.hstack([Rw, freq_eval(m.H, omega)]))
    return T[:, : m.K], T[:, m.K :]


def noise_spectrum(m: NetworkModel, omega: float) -> np.ndarray:
    """Spectral density of the noise part of w, T_we Lambda T_we^*."""
    _, Twe = closed_loop_maps(m, omega)
    return Twe @ m.Lambda @ Twe.conj().T


def sample_spectrum(x, y=None, nperseg: int = 256):
    """Welch cross-spectral matrix estimate, Phi[k, i, j] ~ E X_i X_j^* at omega_k.

    Two-sided, unit sample rate: white noise of variance s2 has Phi = s2.
    Returns (omega, Phi) with omega in radians per sample.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = x if y is None else np.atleast_2d(np.asarray(y, dtype=float))
    nperseg = min(nperseg, x.shape[1])
    f, P = scipy.signal.csd(
        y[None, :, :], x[:, None, :], fs=1.0, nperseg=nperseg, noverlap=nperseg // 2,
        detrend=False, return_onesided=False, scaling="density",
    )
    order = np.argsort(f)
    return 2 * np.pi * f[order], np.moveaxis(P[..., order], -1, 0)


def noise_spectrum_from_data(m: NetworkModel, w, r=None, nperseg: int = 256):
    """Noise spectrum estimated from records as Phi_w - T_wr Phi_r T_wr^* (r, e uncorrelated)."""
    omega, Pw = sample_spectrum(w, nperseg=nperseg)
    if r is None or m.R is None:
        return omega, Pw
    _, Pr = sample_spectrum(r, nperseg=nperseg)
    out = np.empty_like(Pw)
    for k, om in enumerate(omega):
        Twr, _ = closed_loop_maps(m, om)
        out[k] = Pw[k] - Twr @ Pr[k] @ Twr.conj().T
    return omega, out


def detect_order(Phi_inf, tol: float = 1e-8) -> tuple[int, tuple[int, ...]]:
    """Noise rank p and a node permutation putting a full-rank p-subset first.

    Greedy pivoted Cholesky: at each step take the node with the largest
    remaining pivot (lowest index on ties).  The selected nodes keep their
    relative order and precede the others.  Returned permutation is 0-based.
    """
    P = np.asarray(Phi_inf, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(P, P.T, atol=1e-12 * max(1.0, np.abs(P).max())):
        raise ValueError("matrix is not symmetric")
    ev = np.linalg.eigvalsh(P)
    lmax = ev.max() if ev.size else 0.0
    if lmax <= 0:
        return 0, tuple(range(P.shape[0]))
    if ev.min() < -tol * lmax:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {ev.min():.3g})")
    rank = int(np.sum(ev > tol * lmax))
    n = P.shape[0]
    W = P.copy()
    chosen: list[int] = []
    remaining = list(range(n))
    for _ in range(rank):
        diag = np.array([W[i, i] for i in remaining])
        k = remaining[int(np.argmax(diag))]  # argmax returns the first maximum
        if W[k, k] <= tol * lmax:
            break
        col = W[:, k] / np.sqrt(W[k, k])
        W = W - np.outer(col, col)
        chosen.append(k)
        remaining.remove(k)
    lead = sorted(chosen)
    return rank, tuple(lead + [i for i in range(n) if i not in lead])


def permute_network(m: NetworkModel, perm) -> NetworkModel:
    """Reorder nodes and renormalize the noise model so the new leading block is monic.

    With D the feedthrough of the new leading p x p block of H, the noise is
    rewritten as (H D^-1)(D e), so Lambda becomes D Lambda D^T.  Only FIR noise
    models can be renormalized this way.
    """
    perm = list(perm)
    G = TFMatrix([[m.G[i, j] for j in perm] for i in perm])
    R = m.R.block(perm, slice(None)) if m.R is not None else None
    H = m.H.block(perm, slice(None))
    D = H.feedthrough()[: m.p, : m.p]
    if np.linalg.matrix_rank(D) < m.p:
        raise StructureError("permutation does not put a full-rank noise block first")
    if not np.array_equal(D, np.eye(m.p)):
        if not all(e.is_fir() for row in H.entries() for e in row):
            raise StructureError("renormalizing a dynamic (non-FIR) noise model is not supported")
        Dinv = np.linalg.inv(D)
        deg = max(len(e.num.coeffs) for row in H.entries() for e in row)
        coef = np.zeros((m.L, m.p, deg))
        for i in range(m.L):
            for j in range(m.p):
                c = H[i, j].num.coeffs
                coef[i, j, : len(c)] = c
        new = np.einsum("ijk,jl->ilk", coef, Dinv)
        new[: m.p, :, 0] = np.eye(m.p)  # exact, not rounded
        H = TFMatrix([[list(new[i, j]) for j in range(m.p)] for i in range(m.L)])
        return NetworkModel(G, R, H, D @ m.Lambda @ D.T)
    return NetworkModel(G, R, H, m.Lambda)
