"""Identification criteria: WLS, constrained LS, relaxed penalty, concentrated ML.

All criteria share one representation.  The prediction error of a model set
is affine in the G/R coefficients, eps_l(t) = y_l(t) - Phi_l(t) theta, so a
single QR factorization of the stacked regressors compresses N samples into
an exact isometric surrogate: every sample inner product sum_t eps_l eps_m
is reproduced exactly.  Each criterion is then a small weighted least-squares
problem min ||(C - B theta) F^T||_F^2 for a weight factor F.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .lintf import freq_eval
from .network import NetworkModel
from .predictor import ModelSet, affine_regressors, build_model
from .simulate import Dataset


class RankDeficiencyError(np.linalg.LinAlgError):
    """The regression is not identifiable from the data (insufficient excitation)."""

    def __init__(self, message: str, params: list[int]):
        super().__init__(message)
        self.params = params


@dataclass
class EstimationResult:
    method: str
    theta_hat: np.ndarray
    gamma_hat: np.ndarray
    lambda_hat: np.ndarray
    criterion_value: float
    constraint_value: float
    iterations: int
    converged: bool
    feasible: bool = True
    mu: float | None = None
    trace: list = field(default_factory=list)


class AffineProblem:
    """Compressed affine prediction-error problem for one dataset.

    ``C`` is D x L and ``B`` is D x L x n_dyn such that for any theta the
    columns of E = C - B theta have the same Gram matrix as the L prediction
    error sequences.
    """

    def __init__(self, ms: ModelSet, data: Dataset):
        Phi, y = affine_regressors(ms, data, allow_filtered=True)
        n, L, N = ms.n_dyn, ms.L, data.N
        X = np.concatenate([np.concatenate([Phi[:, l, :n], y[:, l:l + 1]], axis=1) for l in range(L)], axis=1)
        Rf = scipy.linalg.qr(X, mode="r")[0]
        Rf = Rf.reshape(-1, L, n + 1)
        self.ms, self.N = ms, N
        self.B = Rf[:, :, :n]
        self.C = Rf[:, :, n]
        self.labels = ms.labels()[:n]

    @property
    def n(self) -> int:
        return self.B.shape[2]

    def residual(self, theta_dyn) -> np.ndarray:
        return self.C - self.B @ np.asarray(theta_dyn)

    def gram(self, theta_dyn) -> np.ndarray:
        """(1/N) sum_t eps(t) eps(t)^T."""
        E = self.residual(theta_dyn)
        return E.T @ E / self.N

    def rows(self, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(A, b) with ||b - A theta||^2 = sum_t |F eps(t, theta)|^2."""
        F = np.atleast_2d(F)
        A = np.einsum("dln,kl->dkn", self.B, F).reshape(-1, self.n)
        return A, (self.C @ F.T).reshape(-1)

    def _raise_rank(self, null: np.ndarray):
        bad = sorted(set(np.nonzero(np.abs(null) > 1e-6)[1].tolist()))
        names = [self.labels[i] for i in bad]
        raise RankDeficiencyError(f"regression is rank deficient; unexcited parameters {names}", bad)

    def solve(self, F: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
        """argmin_theta sum_t |F eps(t, theta)|^2 over the dynamic parameters."""
        if self.n == 0:
            return np.zeros(0)
        A, b = self.rows(F)
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        if s.size < self.n or s[-1] <= rcond * s[0]:
            self._raise_rank(Vt[s <= rcond * s[0]] if s.size == self.n else np.eye(self.n))
        return Vt.T @ ((U.T @ b) / s)

    def solve_constrained(self, F: np.ndarray, M: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
        """Limit mu -> inf of argmin |F eps|^2 + mu |M eps|^2.

        The M-residual is minimized first; the F-criterion is minimized over
        the remaining free directions.
        """
        if self.n == 0:
            return np.zeros(0)
        Ac, bc = self.rows(M)
        U, s, Vt = np.linalg.svd(Ac, full_matrices=True)
        k = int(np.sum(s > rcond * s[0])) if s.size and s[0] > 0 else 0
        th = Vt[:k].T @ ((U[:, :k].T @ bc) / s[:k])
        Nb = Vt[k:].T
        if Nb.shape[1] == 0:
            return th
        Ao, bo = self.rows(F)
        A = Ao @ Nb
        Uo, so, Vto = np.linalg.svd(A, full_matrices=False)
        if so[-1] <= rcond * max(so[0], 1e-300):
            self._raise_rank((Vto[so <= rcond * so[0]] @ Nb.T))
        return th + Nb @ (Vto.T @ ((Uo.T @ (bo - Ao @ th)) / so))


def _psd_factor(Q) -> np.ndarray:
    """F with F^T F = Q for symmetric PSD Q."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if not np.allclose(Q, Q.T):
        raise ValueError("weight must be symmetric")
    ev, V = np.linalg.eigh(Q)
    if ev.min() < -1e-12 * max(1.0, abs(ev).max()):
        raise ValueError("weight must be positive semidefinite")
    keep = ev > 1e-15 * max(1.0, ev.max())
    return (np.sqrt(ev[keep])[:, None] * V[:, keep].T)


def _pd_factor(Q) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    try:
        return np.linalg.cholesky(Q).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("Q_a must be positive definite") from exc


def relaxed_weight(Q_a, Gamma, lam: float) -> np.ndarray:
    """L x L weight whose WLS criterion equals eps_a' Q_a eps_a + lam |Gamma eps_a - eps_b|^2."""
    Q_a = np.atleast_2d(np.asarray(Q_a, dtype=float))
    G = np.atleast_2d(np.asarray(Gamma, dtype=float))
    m = G.shape[0]
    return np.block([[Q_a + lam * G.T @ G, -lam * G.T], [-lam * G, lam * np.eye(m)]])


def relaxed_objective(eps, Gamma, Q_a, lam: float) -> float:
    """(1/N) sum_t eps_a' Q_a eps_a + lam Z'Z for eps of shape L x N."""
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    p = np.atleast_2d(Q_a).shape[0]
    ea, eb = eps[:p], eps[p:]
    Z = np.atleast_2d(Gamma) @ ea - eb
    N = eps.shape[1]
    return float(np.einsum("it,ij,jt->", ea, np.atleast_2d(Q_a), ea) / N + lam * np.sum(Z * Z) / N)


def _penalty_factor(U, Gamma, mu: float) -> np.ndarray:
    p, m = U.shape[0], Gamma.shape[0]
    top = np.hstack([U, np.zeros((p, m))])
    if m == 0:
        return top
    return np.vstack([top, np.sqrt(mu) * np.hstack([Gamma, -np.eye(m)])])


def estimate_gamma(eps_a, eps_b) -> np.ndarray:
    """Gamma_hat = (sum eps_b eps_a')(sum eps_a eps_a')^-1."""
    ea = np.atleast_2d(eps_a)
    eb = np.atleast_2d(eps_b)
    return _gamma_from_gram(np.vstack([ea, eb]) @ np.vstack([ea, eb]).T, ea.shape[0])


def _gamma_from_gram(E: np.ndarray, p: int) -> np.ndarray:
    Eaa, Eba = E[:p, :p], E[p:, :p]
    if np.linalg.cond(Eaa) > 1e12:
        raise np.linalg.LinAlgError("sum eps_a eps_a' is singular; Gamma cannot be estimated")
    return np.linalg.solve(Eaa.T, Eba.T).T


def _constraint(prob: AffineProblem, th, Gamma: np.ndarray) -> float:
    """(1/N) sum_t Z'Z, evaluated on the compressed residual so it is never negative."""
    M = np.hstack([Gamma, -np.eye(Gamma.shape[0])])
    Zc = prob.residual(th) @ M.T
    return float(np.sum(Zc * Zc) / prob.N)


def _full_theta(ms: ModelSet, theta_dyn, Gamma) -> np.ndarray:
    theta = np.zeros(ms.n_theta)
    theta[: ms.n_dyn] = theta_dyn
    return ms.with_gamma(theta, Gamma)


def _problem(ms, data, problem):
    return problem if problem is not None else AffineProblem(ms, data)


def wls(ms: ModelSet, data: Dataset, Q=None, *, problem: AffineProblem | None = None) -> EstimationResult:
    """Weighted least squares min (1/N) sum eps' Q eps; Gamma from the residuals."""
    prob = _problem(ms, data, problem)
    Q = np.eye(ms.L) if Q is None else np.asarray(Q, dtype=float)
    th = prob.solve(_psd_factor(Q))
    E = prob.gram(th)
    p = ms.p
    if ms.p < ms.L and ms.gamma_parameterized:
        Gamma = _gamma_from_gram(E, p)
    else:
        Gamma = ms.gamma_of(np.zeros(ms.n_theta))
    return EstimationResult(
        "wls", _full_theta(ms, th, Gamma), Gamma, E[:p, :p].copy(), float(np.trace(Q @ E)),
        _constraint(prob, th, Gamma), 1, True,
    )


def _initial_gamma(ms, prob, gamma0):
    if not ms.gamma_parameterized:
        return ms.Gamma_fixed.copy()
    if gamma0 is not None:
        return np.atleast_2d(np.asarray(gamma0, dtype=float))
    th = prob.solve(np.eye(ms.L))
    return _gamma_from_gram(prob.gram(th), ms.p)


def _alternate(ms, prob, U, Gamma, mu, tol_theta, max_iter):
    """Coordinate descent on eps_a'Q_a eps_a + mu Z'Z at fixed mu (mu=None: the exact constraint)."""
    prev = None
    Fa = np.hstack([U, np.zeros((ms.p, ms.L - ms.p))])
    for it in range(1, max_iter + 1):
        if mu is None:
            th = prob.solve_constrained(Fa, np.hstack([Gamma, -np.eye(ms.L - ms.p)]))
        else:
            th = prob.solve(_penalty_factor(U, Gamma, mu))
        if ms.gamma_parameterized:
            Gamma = _gamma_from_gram(prob.gram(th), ms.p)
        full = np.concatenate([th, Gamma.ravel()])
        if prev is not None and np.linalg.norm(full - prev) <= tol_theta * (1.0 + np.linalg.norm(full)):
            return th, Gamma, it, True
        if not ms.gamma_parameterized:
            return th, Gamma, it, True
        prev = full
    return th, Gamma, max_iter, False


def cls(ms: ModelSet, data: Dataset, Q_a=None, *, tol_c: float = 1e-12, tol_theta: float = 1e-10,
        max_iter: int = 200, mu_factor: float = 10.0, mu_max: float = 1e16, gamma0=None,
        problem: AffineProblem | None = None) -> EstimationResult:
    """Constrained least squares: min eps_a' Q_a eps_a subject to (1/N) sum Z'Z = 0.

    Penalty continuation with alternating minimization.  At each penalty
    weight mu the dynamic coefficients (exact weighted LS at fixed Gamma) and
    Gamma (exact LS at fixed dynamics) are updated in turn until the iterate
    settles; then mu is multiplied by ``mu_factor`` until the constraint is
    below ``tol_c`` relative to the mean squared eps_b.  The result is then
    polished by the same alternation on the exact (mu -> inf) problem, which
    drives the constraint to rounding level on consistent data.  If mu_max is
    reached first, the last penalized iterate is returned with
    ``feasible=False``.
    """
    if ms.p == ms.L:
        raise ValueError("constrained LS needs rank-reduced noise (p < L)")
    prob = _problem(ms, data, problem)
    Q_a = np.eye(ms.p) if Q_a is None else np.atleast_2d(np.asarray(Q_a, dtype=float))
    U = _pd_factor(Q_a)
    Gamma = _initial_gamma(ms, prob, gamma0)
    mu = float(np.linalg.norm(Q_a, 2))
    iters, trace, converged = 0, [], False
    while True:
        th, Gamma, k, ok = _alternate(ms, prob, U, Gamma, mu, tol_theta, max(1, max_iter - iters))
        iters += k
        E = prob.gram(th)
        cv = _constraint(prob, th, Gamma)
        ref = np.trace(E[ms.p:, ms.p:]) / (ms.L - ms.p) + np.finfo(float).eps * np.trace(prob.C.T @ prob.C) / prob.N
        trace.append({"mu": mu, "constraint": cv, "iterations": k})
        if cv <= tol_c * ref:
            th, Gamma, k, ok = _alternate(ms, prob, U, Gamma, None, tol_theta, max(1, max_iter - iters))
            iters += k
            E = prob.gram(th)
            cv = _constraint(prob, th, Gamma)
            converged, feasible = ok, cv <= tol_c * ref
            break
        if iters >= max_iter or mu * mu_factor > mu_max:
            converged, feasible = False, False
            break
        mu *= mu_factor
    return EstimationResult(
        "cls", _full_theta(ms, th, Gamma), Gamma, E[: ms.p, : ms.p].copy(),
        float(np.trace(Q_a @ E[: ms.p, : ms.p])), cv, iters, converged, feasible, mu, trace,
    )


def relaxed(ms: ModelSet, data: Dataset, Q_a=None, lam: float = 1.0, *, tol_theta: float = 1e-10,
            max_iter: int = 200, gamma0=None, problem: AffineProblem | None = None) -> EstimationResult:
    """min (1/N) sum eps_a' Q_a eps_a + lam Z'Z.

    With Gamma fixed this is one weighted LS solve (WLS with the structured
    weight of :func:`relaxed_weight`); with Gamma parameterized the
    alternating scheme of :func:`cls` runs at the fixed weight lam.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if ms.p == ms.L:
        raise ValueError("the relaxed criterion needs rank-reduced noise (p < L)")
    prob = _problem(ms, data, problem)
    Q_a = np.eye(ms.p) if Q_a is None else np.atleast_2d(np.asarray(Q_a, dtype=float))
    U = _pd_factor(Q_a)
    Gamma = _initial_gamma(ms, prob, gamma0)
    th, Gamma, iters, ok = _alternate(ms, prob, U, Gamma, lam, tol_theta, max_iter)
    E = prob.gram(th)
    cv = _constraint(prob, th, Gamma)
    crit = float(np.trace(Q_a @ E[: ms.p, : ms.p]) + lam * cv)
    return EstimationResult("relaxed", _full_theta(ms, th, Gamma), Gamma, E[: ms.p, : ms.p].copy(),
                            crit, cv, iters, ok, True, lam)


def ml_det(ms: ModelSet, data: Dataset, *, tol_theta: float = 1e-10, max_iter: int = 50,
           problem: AffineProblem | None = None, **cls_opts) -> EstimationResult:
    """Concentrated Gaussian ML: min det((1/N) sum eps_a eps_a') subject to Z = 0.

    Fixed point of CLS with Q_a = Lambda_hat^-1, Lambda_hat being the sample
    covariance of eps_a at the previous iterate.
    """
    prob = _problem(ms, data, problem)
    res = cls(ms, data, np.eye(ms.p), problem=prob, **cls_opts)
    total, converged = res.iterations, False
    for it in range(1, max_iter + 1):
        Lam = res.lambda_hat
        if np.linalg.cond(Lam) > 1e12:
            raise np.linalg.LinAlgError("estimated innovation covariance is singular; refusing to invert")
        new = cls(ms, data, np.linalg.inv(Lam), problem=prob, gamma0=res.gamma_hat, **cls_opts)
        total += new.iterations
        step = np.linalg.norm(new.theta_hat - res.theta_hat)
        res = new
        if step <= tol_theta * (1.0 + np.linalg.norm(res.theta_hat)):
            converged = res.converged
            break
    return EstimationResult("ml_det", res.theta_hat, res.gamma_hat, res.lambda_hat,
                            float(np.linalg.det(res.lambda_hat)), res.constraint_value, total,
                            converged, res.feasible, res.mu, res.trace)


# ----------------------------------------------------------------- identifiability

@dataclass
class IdentifiabilityReport:
    rows: list[dict]
    passed: bool

    def lines(self) -> list[str]:
        out = []
        for r in self.rows:
            status = "PASS" if r["count_ok"] and r["rank_ok"] else "FAIL"
            out.append(f"row {r['row']}: {r['n_param']} parameterized entries (budget {r['budget']}), "
                       f"rank margin {r['sigma_min']:.3g} over {r['targets']} -> {status}")
        return out


def _param_entries(ms: ModelSet):
    g = {(b.row, b.col) for b in ms.blocks if b.kind == "G"}
    r = {(b.row, b.col) for b in ms.blocks if b.kind == "R"}
    # Gamma entries live in H
    h = set()
    if ms.gamma_parameterized:
        h = {(i, j) for i in range(ms.p, ms.L) for j in range(ms.p)}
    return g, r, h


def check_identifiability(ms: ModelSet, theta0, *, n_freq: int = 7, seed: int = 0,
                          tol: float = 1e-8) -> IdentifiabilityReport:
    """Row-wise parameter budget and rank diagnostics for independent parameterizations.

    For every row i: at most K + p parameterized entries in [G H R]; and the
    transfer from the external signals entering through non-parameterized
    H/R entries to the nodes feeding parameterized G_ik must have full row
    rank, probed at ``n_freq`` random frequencies (reported margin is the
    smallest singular value seen).
    """
    model, _ = build_model(ms, theta0)
    gp, rp, hp = _param_entries(ms)
    K, p, L = ms.K, ms.p, ms.L
    sources = [("e", n) for n in range(p)
               if any((i, n) not in hp and not model.H[i, n].is_zero() for i in range(L))]
    sources += [("r", m) for m in range(K)
                if any((i, m) not in rp and not model.R[i, m].is_zero() for i in range(L))]
    rng = np.random.default_rng(seed)
    omegas = rng.uniform(0.05, np.pi - 0.05, n_freq)
    Ts = []
    for om in omegas:
        IG = np.eye(L) - freq_eval(model.G, om)
        H = freq_eval(model.H, om)
        Rw = freq_eval(model.R, om) if model.R is not None else np.zeros((L, 0))
        cols = [H[:, n] if kind == "e" else Rw[:, n] for kind, n in sources]
        X = np.column_stack(cols) if cols else np.zeros((L, 0))
        Ts.append(np.linalg.solve(IG, X))
    rows, passed = [], True
    for i in range(L):
        n_param = sum(1 for S in (gp, rp, hp) for (a, _) in S if a == i)
        targets = sorted(k for (a, k) in gp if a == i)
        if targets:
            svals = [np.linalg.svd(T[targets, :], compute_uv=False) for T in Ts]
            sig = min((s[len(targets) - 1] if s.size >= len(targets) else 0.0) for s in svals)
        else:
            sig = np.inf
        row = {"row": i + 1, "n_param": n_param, "budget": K + p, "count_ok": n_param <= K + p,
               "targets": [k + 1 for k in targets], "sigma_min": float(sig), "rank_ok": bool(sig > tol)}
        passed &= row["count_ok"] and row["rank_ok"]
        rows.append(row)
    return IdentifiabilityReport(rows, bool(passed))
