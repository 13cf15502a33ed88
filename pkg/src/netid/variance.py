"""Asymptotic covariance of the estimators and the constrained Cramer-Rao bound.

Conventions: ``psi`` is an array of shape (N, n_theta, L) holding
psi(t) = -d eps(t)^T / d theta; ``A`` has shape (N, L-p, n_theta) holding
dZ(t)/dtheta.  Expectations E-bar are sample averages over t; pass
:func:`moment_points` signals for exact second moments of static structures.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .predictor import ModelSet, UnsupportedStructureError, affine_regressors, prediction_error
from .simulate import Dataset


def _sym(P: np.ndarray) -> np.ndarray:
    P = 0.5 * (P + P.T)
    P[np.abs(P) < 1e-12 * max(1.0, np.abs(P).max(initial=0.0))] = 0.0
    return P


# ------------------------------------------------------------------ gradients

def psi(ms: ModelSet, theta, data: Dataset, method: str = "analytic") -> np.ndarray:
    """Negative gradient of the prediction error, shape (N, n_theta, L).

    The prediction error is affine in theta for every supported model set,
    so the analytic form is Phi(t)^T; ``method="fd"`` uses central
    differences with step 1e-6 (1 + |theta_i|).
    """
    theta = np.asarray(theta, dtype=float)
    if method == "analytic":
        Phi, _ = affine_regressors(ms, data, allow_filtered=True)
        return np.transpose(Phi, (0, 2, 1)).copy()
    if method != "fd":
        raise ValueError(f"unknown gradient method {method!r}")
    out = np.zeros((data.N, ms.n_theta, ms.L))
    for i in range(ms.n_theta):
        h = 1e-6 * (1.0 + abs(theta[i]))
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        out[:, i, :] = -(prediction_error(ms, tp, data).eps - prediction_error(ms, tm, data).eps).T / (2 * h)
    return out


def constraint_jacobian(ms: ModelSet, theta, data: Dataset, method: str = "analytic") -> np.ndarray:
    """A(t) = dZ(t, theta)/dtheta with Z = Gamma eps_a - eps_b, shape (N, L-p, n_theta)."""
    theta = np.asarray(theta, dtype=float)
    p, m = ms.p, ms.L - ms.p
    if method == "fd":
        out = np.zeros((data.N, m, ms.n_theta))
        for i in range(ms.n_theta):
            h = 1e-6 * (1.0 + abs(theta[i]))
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            out[:, :, i] = (prediction_error(ms, tp, data).Z - prediction_error(ms, tm, data).Z).T / (2 * h)
        return out
    if method != "analytic":
        raise ValueError(f"unknown gradient method {method!r}")
    Phi, y = affine_regressors(ms, data, allow_filtered=True)
    Gamma = ms.gamma_of(theta)
    # eps = y - Phi theta, so dZ/dtheta = -Gamma Phi_a + Phi_b on the dynamic part
    out = np.einsum("ij,tjn->tin", -Gamma, Phi[:, :p, :]) + Phi[:, p:, :]
    if ms.gamma_parameterized:
        eps_a = y[:, :p] - Phi[:, :p, :] @ theta
        base = ms.n_dyn
        for i in range(m):
            out[:, i, base + i * p: base + (i + 1) * p] = eps_a
    return out


# ------------------------------------------------------------------ covariances

def _weighted_gram(psi_arr: np.ndarray, W: np.ndarray) -> np.ndarray:
    """E psi W psi^T as one matrix product."""
    N, n, L = psi_arr.shape
    X = psi_arr.transpose(1, 0, 2).reshape(n, N * L)
    Y = (psi_arr @ W).transpose(1, 0, 2).reshape(n, N * L)
    return X @ Y.T / N


def _sandwich(psi_arr: np.ndarray, Q: np.ndarray, Lam: np.ndarray, what: str) -> np.ndarray:
    M1 = _weighted_gram(psi_arr, Q)
    M2 = _weighted_gram(psi_arr, Q @ Lam @ Q)
    ev, V = np.linalg.eigh(_sym(M1))
    if ev.size and ev.min() <= 1e-12 * max(ev.max(), 1e-300):
        null = V[:, ev <= 1e-12 * max(ev.max(), 1e-300)]
        raise np.linalg.LinAlgError(f"{what} information matrix is singular; null directions {null.T.round(6).tolist()}")
    M1i = np.linalg.inv(M1)
    return _sym(M1i @ M2 @ M1i)


def cov_wls(psi_arr, Q, Lambda_breve) -> np.ndarray:
    """P = [E psi Q psi^T]^-1 [E psi Q Lambda_breve Q psi^T] [E psi Q psi^T]^-1."""
    return _sandwich(np.asarray(psi_arr, dtype=float), np.atleast_2d(Q), np.atleast_2d(Lambda_breve), "weighted")


def cov_cls(psi_arr, Q_a, Lambda, S) -> tuple[np.ndarray, np.ndarray]:
    """(P_rho, P_theta) with psi_rho = S^T psi_a and P_theta = S P_rho S^T."""
    Q_a = np.atleast_2d(np.asarray(Q_a, dtype=float))
    p = Q_a.shape[0]
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if S.shape[1] == 0:
        return np.zeros((0, 0)), np.zeros((n, n))
    psi_rho = np.einsum("nr,tnl->trl", S, np.asarray(psi_arr)[:, :, :p], optimize=True)
    P_rho = _sandwich(psi_rho, Q_a, np.atleast_2d(Lambda), "reduced")
    return P_rho, _sym(S @ P_rho @ S.T)


def crb(psi_a, Lambda0, S) -> np.ndarray:
    """Constrained Cramer-Rao bound S (S^T J S)^-1 S^T, J = E psi_a Lambda0^-1 psi_a^T.

    ``psi_a`` may carry all L columns; only the first p are used.
    """
    Lam = np.atleast_2d(np.asarray(Lambda0, dtype=float))
    p = Lam.shape[0]
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if S.shape[1] == 0:
        return np.zeros((n, n))
    J = _weighted_gram(np.asarray(psi_a)[:, :, :p], np.linalg.inv(Lam))
    inner = S.T @ J @ S
    if np.linalg.cond(inner) > 1e12:
        raise np.linalg.LinAlgError("S^T J S is singular: the constrained model is not locally identifiable")
    return _sym(S @ np.linalg.solve(inner, S.T))


# ------------------------------------------------------------------ constraint geometry

def a_gramian(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    X = A.reshape(-1, A.shape[-1])
    return X.T @ X / A.shape[0]


def _sign_rows(M: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    for k in range(M.shape[0]):
        nz = np.nonzero(np.abs(M[k]) > tol * max(np.abs(M[k]).max(), 1e-300))[0]
        if nz.size and M[k, nz[0]] < 0:
            M[k] = -M[k]
    return M


def pi_factor(A, tol: float = 1e-10, mode: str = "eig") -> np.ndarray:
    """Full row rank Pi whose nullspace is that of E A^T A.

    ``eig``: rows are sqrt(lambda_k) v_k^T of the leading eigenpairs, so
    Pi^T Pi equals the Gramian up to its numerical rank; columns that are
    exactly zero in the Gramian stay exactly zero.  ``rows``: the first
    linearly independent rows A(t) in time order.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    G = a_gramian(A)
    live = np.nonzero(np.any(G != 0.0, axis=0))[0]
    if live.size == 0:
        return np.zeros((0, n))
    ev, V = np.linalg.eigh(G[np.ix_(live, live)])
    keep = ev > tol * ev.max()
    rank = int(keep.sum())
    if mode == "eig":
        order = np.argsort(-ev[keep], kind="stable")
        Pi = np.zeros((rank, n))
        Pi[:, live] = (np.sqrt(ev[keep])[:, None] * V[:, keep].T)[order]
        return _sign_rows(Pi) + 0.0
    if mode != "rows":
        raise ValueError(f"unknown Pi mode {mode!r}")
    rows, basis = [], np.zeros((0, live.size))
    for a in A.reshape(-1, n):
        a_l = a[live]
        na = np.linalg.norm(a_l)
        if na == 0.0:
            continue
        res = a_l - basis.T @ (basis @ a_l)
        if np.linalg.norm(res) > 1e-8 * na:
            basis = np.vstack([basis, res / np.linalg.norm(res)])
            rows.append(a)
            if len(rows) == rank:
                break
    return np.array(rows).reshape(-1, n)


def null_map(Pi, theta_star, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """(S, C): orthonormal right nullspace of Pi and offset C = Pi^+ Pi theta*.

    S is canonical: unit vectors for the columns where Pi is exactly zero
    first, then a pivoted-QR basis of the nullspace projector on the other
    columns, each column with its first nonzero entry positive.  Pi^+ is the
    right inverse supported on the lowest-index independent columns.
    """
    Pi = np.atleast_2d(np.asarray(Pi, dtype=float))
    theta_star = np.asarray(theta_star, dtype=float)
    n = theta_star.size
    Pi = Pi.reshape(-1, n)
    r = Pi.shape[0]
    if r == 0:
        return np.eye(n), np.zeros(n)
    dead = np.nonzero(np.all(Pi == 0.0, axis=0))[0]
    live = np.nonzero(np.any(Pi != 0.0, axis=0))[0]
    cols = [np.eye(n)[:, j] for j in dead]
    P_l = Pi[:, live]
    proj = np.eye(live.size) - np.linalg.pinv(P_l) @ P_l
    k = live.size - np.linalg.matrix_rank(P_l)
    if k > 0:
        Qf, _, _ = scipy.linalg.qr(proj, pivoting=True)
        for v in _sign_rows(Qf[:, :k].T.copy()):
            c = np.zeros(n)
            c[live] = v
            cols.append(c)
    S = np.column_stack(cols) if cols else np.zeros((n, 0))
    # right inverse on the first independent columns
    chosen: list[int] = []
    for j in range(n):
        if np.linalg.matrix_rank(Pi[:, chosen + [j]], tol=tol * max(1.0, np.abs(Pi).max())) > len(chosen):
            chosen.append(j)
            if len(chosen) == r:
                break
    if len(chosen) < r:
        raise np.linalg.LinAlgError("Pi is not of full row rank")
    Pi_dag = np.zeros((n, r))
    Pi_dag[chosen] = np.linalg.inv(Pi[:, chosen])
    return S + 0.0, Pi_dag @ (Pi @ theta_star) + 0.0


# ------------------------------------------------------------------ exact moments

def moment_points(Sigma) -> np.ndarray:
    """K x K signal samples whose sample second moments equal Sigma.

    Feeding these as r(t), t = 1..K, makes E-bar exact for structures that
    only use r(t) at lag 0.
    """
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    K = Sigma.shape[0]
    return np.sqrt(K) * np.linalg.cholesky(Sigma)


def moment_dataset(ms: ModelSet, Sigma_r) -> Dataset:
    """Dataset for exact static-structure moments (no G parameters, R lags {0})."""
    if any(b.kind == "G" or (b.kind == "R" and b.lags != (0,)) for b in ms.blocks):
        raise UnsupportedStructureError("exact moments need a static structure: R parameters at lag 0 only")
    r = moment_points(Sigma_r)
    return Dataset(np.zeros((ms.L, r.shape[1])), r)


# ------------------------------------------------------------------ report

def _arr(x):
    if x is None:
        return None
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return {"shape": list(x.shape), "data": [None if not np.isfinite(v) else float(v) for v in x.ravel()]}


@dataclass
class CovarianceReport:
    method: str
    P_theta: np.ndarray
    P_theta_lb: np.ndarray
    S: np.ndarray
    C: np.ndarray
    Pi: np.ndarray
    P_rho: np.ndarray | None = None
    psi_gram: np.ndarray | None = None
    labels: list = field(default_factory=list)

    @property
    def n_rho(self) -> int:
        return self.S.shape[1]

    def to_dict(self) -> dict:
        out = {"method": self.method, "n_rho": self.n_rho, "labels": list(self.labels)}
        for k in ("P_theta", "P_theta_lb", "S", "C", "Pi", "P_rho", "psi_gram"):
            out[k] = _arr(getattr(self, k))
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def covariance_report(ms: ModelSet, theta0, data: Dataset, *, method: str = "cls", Q=None,
                      Q_a=None, lam: float | None = None, Lambda0=None, pi_mode: str = "eig",
                      tol: float = 1e-10, psi_arr=None, A=None) -> CovarianceReport:
    """Theoretical covariance of one estimator plus the constrained CRB at theta0.

    ``method``: "cls" (weight Q_a), "wls" (weight Q), or "relaxed" (Q_a, lam;
    the weight with Gamma fixed at its true value).  For wls/relaxed the
    covariance covers the G/R coefficients; the Gamma block is NaN when Gamma
    is parameterized.  ``psi_arr`` and ``A`` may be passed to reuse gradients
    across several reports on the same data.
    """
    theta0 = np.asarray(theta0, dtype=float)
    Lam = ms.Lambda if Lambda0 is None else np.atleast_2d(np.asarray(Lambda0, dtype=float))
    if Lam is None:
        raise ValueError("Lambda0 is needed for the covariance")
    Gamma0 = ms.gamma_of(theta0)
    ps = psi(ms, theta0, data) if psi_arr is None else psi_arr
    if ms.p < ms.L:
        A = constraint_jacobian(ms, theta0, data) if A is None else A
        Pi = pi_factor(A, tol, pi_mode)
    else:
        Pi = np.zeros((0, ms.n_theta))
    S, C = null_map(Pi, theta0)
    lb = crb(ps, Lam, S)
    P_rho = None
    if method == "cls":
        Q_a = np.linalg.inv(Lam) if Q_a is None else np.atleast_2d(Q_a)
        P_rho, P = cov_cls(ps, Q_a, Lam, S)
    elif method in ("wls", "relaxed"):
        if method == "relaxed":
            from .estimate import relaxed_weight
            Q_a = np.eye(ms.p) if Q_a is None else np.atleast_2d(Q_a)
            Q = relaxed_weight(Q_a, Gamma0, float(lam))
        Q = np.eye(ms.L) if Q is None else np.atleast_2d(Q)
        IG = np.vstack([np.eye(ms.p), Gamma0])
        d = ms.dyn_indices
        P = np.full((ms.n_theta, ms.n_theta), np.nan)
        P[np.ix_(d, d)] = cov_wls(ps[:, d, :], Q, IG @ Lam @ IG.T)
        if not ms.gamma_parameterized:
            P = _sym(P)
    else:
        raise ValueError(f"unknown method {method!r}")
    gram = _weighted_gram(ps, np.eye(ms.L))
    return CovarianceReport(method, P, lb, S, C, Pi, P_rho, gram, ms.labels())
