"""Parameterized network model sets and the joint one-step-ahead predictor.

A model set places FIR coefficients of selected G and R entries, and
optionally the static block Gamma of the noise model, into one parameter
vector theta.  The noise model is H(theta) = H_fixed with the feedthrough of
its lower block replaced by Gamma(theta), so the squared noise model Hbreve
does not depend on theta and the prediction error is affine in the G/R
coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .lintf import RationalTF, TFMatrix, eye_minus, solve_monic, tfm_apply
from .network import NetworkModel, StructureError, derive_squared_model
from .simulate import Dataset


class UnsupportedStructureError(ValueError):
    pass


@dataclass(frozen=True)
class ParamBlock:
    """A contiguous slice of theta: FIR lags of one G/R entry, or the Gamma block."""

    kind: str  # "G", "R" or "Gamma"
    row: int
    col: int
    lags: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return len(self.lags)

    @property
    def indices(self) -> range:
        return range(self.offset, self.offset + self.size)

    def label(self) -> str:
        if self.kind == "Gamma":
            return "Gamma"
        return f"{self.kind}{self.row + 1}{self.col + 1}"


def _parse_entries(entries, default_start: int) -> dict[tuple[int, int], tuple[int, ...]]:
    out = {}
    for key, spec in (entries or {}).items():
        i, j = (int(x) - 1 for x in (key.split(",") if isinstance(key, str) else key))
        if isinstance(spec, int):
            lags = tuple(range(default_start, default_start + spec))
        elif isinstance(spec, Mapping):
            if "lags" in spec:
                lags = tuple(int(x) for x in spec["lags"])
            else:
                start = int(spec.get("start", default_start))
                lags = tuple(range(start, start + int(spec["order"])))
        else:
            lags = tuple(int(x) for x in spec)
        out[(i, j)] = lags
    return out


class ModelSet:
    """Layout theta -> M(theta) for FIR-parameterized G/R entries and a static Gamma block.

    ``G_params`` / ``R_params`` map 0-based (row, col) to the lags that are
    estimated; all other entries are fixed to ``G_fixed`` / ``R_fixed``.
    ``Lambda=None`` means the innovation covariance is estimated.
    """

    def __init__(self, G_fixed: TFMatrix, R_fixed: TFMatrix | None, H_fixed: TFMatrix,
                 G_params: Mapping[tuple[int, int], Sequence[int]],
                 R_params: Mapping[tuple[int, int], Sequence[int]] | None = None,
                 gamma_parameterized: bool = False, Lambda=None):
        self.L = G_fixed.rows
        self.K = 0 if R_fixed is None else R_fixed.cols
        self.p = H_fixed.cols
        self.G_fixed, self.R_fixed, self.H_fixed = G_fixed, R_fixed, H_fixed
        self.gamma_parameterized = bool(gamma_parameterized)
        self.Lambda = None if Lambda is None else np.atleast_2d(np.asarray(Lambda, dtype=float))
        R_params = dict(R_params or {})
        if R_params and R_fixed is None:
            raise StructureError("R entries parameterized but the model set has no excitation")

        blocks: list[ParamBlock] = []
        offset = 0
        for kind, params, fixed in (("G", dict(G_params), G_fixed), ("R", R_params, R_fixed)):
            for (i, j), lags in params.items():
                lags = tuple(int(k) for k in lags)
                if not lags or len(set(lags)) != len(lags):
                    raise StructureError(f"{kind}{i + 1}{j + 1}: lags must be non-empty and distinct")
                if min(lags) < (1 if kind == "G" else 0):
                    raise StructureError(f"{kind}{i + 1}{j + 1}: lags must start at "
                                         f"{1 if kind == 'G' else 0} (strictly proper G)")
                if kind == "G" and i == j:
                    raise StructureError("diagonal G entries cannot be parameterized")
                if not fixed[i, j].is_zero():
                    raise StructureError(f"{kind}{i + 1}{j + 1} is parameterized but has a nonzero fixed part")
                blocks.append(ParamBlock(kind, i, j, lags, offset))
                offset += len(lags)
        self.n_dyn = offset
        if self.gamma_parameterized:
            if self.p == self.L:
                raise StructureError("Gamma cannot be parameterized for full-rank noise (p = L)")
            size = (self.L - self.p) * self.p
            blocks.append(ParamBlock("Gamma", self.p, 0, tuple(range(size)), offset))
            offset += size
        self.blocks = tuple(blocks)
        self.n_theta = offset

        # probe the structure once; raises on invalid fixed parts
        self._template = NetworkModel(G_fixed, R_fixed, H_fixed, self._lambda_or_eye())
        sq = derive_squared_model(self._template)
        self.Hbreve = sq.Hbreve
        self.Gamma_fixed = sq.Gamma

    def _lambda_or_eye(self):
        return self.Lambda if self.Lambda is not None else np.eye(self.p)

    @property
    def lambda_estimated(self) -> bool:
        return self.Lambda is None

    @property
    def dyn_indices(self) -> np.ndarray:
        return np.arange(self.n_dyn)

    @property
    def gamma_indices(self) -> np.ndarray:
        return np.arange(self.n_dyn, self.n_theta)

    def labels(self) -> list[str]:
        out = []
        for b in self.blocks:
            if b.kind == "Gamma":
                out += [f"Gamma{self.p + k // self.p + 1}{k % self.p + 1}" for k in b.lags]
            else:
                out += [f"{b.label()}[{k}]" for k in b.lags]
        return out

    def gamma_of(self, theta) -> np.ndarray:
        if not self.gamma_parameterized:
            return self.Gamma_fixed.copy()
        theta = np.asarray(theta, dtype=float)
        return theta[self.n_dyn:].reshape(self.L - self.p, self.p)

    def with_gamma(self, theta, Gamma) -> np.ndarray:
        theta = np.array(theta, dtype=float)
        if self.gamma_parameterized:
            theta[self.n_dyn:] = np.asarray(Gamma).ravel()
        return theta

    @classmethod
    def from_spec(cls, spec: Mapping, network: NetworkModel) -> "ModelSet":
        """Build from a config mapping; fixed parts default to the network's entries."""
        Gp = _parse_entries(spec.get("G"), 1)
        Rp = _parse_entries(spec.get("R"), 0)
        L = network.L
        G_fixed = TFMatrix.from_spec(spec["G_fixed"], L, L) if "G_fixed" in spec else network.G
        R_fixed = network.R
        if "R_fixed" in spec:
            R_fixed = TFMatrix.from_spec(spec["R_fixed"], L, network.K)
        H_fixed = TFMatrix.from_spec(spec["H"], L, network.p) if "H" in spec else network.H
        for (i, j) in Gp:
            G_fixed = G_fixed.replace(i, j, RationalTF.const(0.0))
        for (i, j) in Rp:
            R_fixed = R_fixed.replace(i, j, RationalTF.const(0.0))
        lam = spec.get("Lambda", "fixed")
        if isinstance(lam, str):
            if lam not in ("fixed", "estimated"):
                raise ValueError(f"modelset.Lambda must be 'fixed', 'estimated' or a matrix, got {lam!r}")
            Lambda = network.Lambda if lam == "fixed" else None
        else:
            Lambda = np.asarray(lam, dtype=float)
        return cls(G_fixed, R_fixed, H_fixed, Gp, Rp, bool(spec.get("gamma", False)), Lambda)


def _fir(lags, values) -> RationalTF:
    c = np.zeros(max(lags) + 1)
    c[list(lags)] = values
    return RationalTF(c)


def build_model(ms: ModelSet, theta, Lambda=None) -> tuple[NetworkModel, np.ndarray]:
    """Network model M(theta) and Gamma(theta).

    Stability of (I - G(theta))^-1 is not enforced; call ``model.check()``.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != ms.n_theta:
        raise ValueError(f"theta has {theta.size} entries, model set expects {ms.n_theta}")
    G, R = ms.G_fixed, ms.R_fixed
    for b in ms.blocks:
        vals = theta[b.offset:b.offset + b.size]
        if b.kind == "G":
            G = G.replace(b.row, b.col, _fir(b.lags, vals))
        elif b.kind == "R":
            R = R.replace(b.row, b.col, _fir(b.lags, vals))
    Gamma = ms.gamma_of(theta)
    H = ms.H_fixed
    if ms.gamma_parameterized:
        shift = ms.Gamma_fixed - Gamma
        for i in range(ms.p, ms.L):
            for j in range(ms.p):
                H = H.replace(i, j, H[i, j].minus_const(shift[i - ms.p, j]))
    Lam = ms._lambda_or_eye() if Lambda is None else Lambda
    return NetworkModel(G, R, H, Lam), Gamma


def extract_theta(ms: ModelSet, model: NetworkModel) -> np.ndarray:
    """Inverse of build_model for models inside the set."""
    theta = np.zeros(ms.n_theta)
    for b in ms.blocks:
        if b.kind == "Gamma":
            theta[b.offset:] = model.Gamma.ravel()
            continue
        tf = (model.G if b.kind == "G" else model.R)[b.row, b.col]
        if not tf.is_fir():
            raise StructureError(f"{b.label()} is not FIR in the given model")
        c = np.asarray(tf.num.coeffs)
        extra = [k for k in range(len(c)) if c[k] != 0 and k not in b.lags]
        if extra:
            raise StructureError(f"{b.label()} has coefficients at unparameterized lags {extra}")
        theta[b.offset:b.offset + b.size] = [c[k] if k < len(c) else 0.0 for k in b.lags]
    return theta


def predict(ms: ModelSet, theta, data: Dataset) -> np.ndarray:
    """One-step-ahead prediction w_hat(t|t-1, theta), L x N.

    w_hat = w - Hbreve^-1 [(I - G) w - R r], with the inverse run as a
    causal recursion.
    """
    model, _ = build_model(ms, theta)
    if data.L != ms.L or data.K != ms.K:
        raise ValueError(f"dataset has L={data.L}, K={data.K}; model set expects L={ms.L}, K={ms.K}")
    xi = tfm_apply(eye_minus(model.G), data.w)
    if model.R is not None:
        xi -= tfm_apply(model.R, data.r)
    eta = solve_monic(derive_squared_model(model).Hbreve, xi)
    return data.w - eta


@dataclass(frozen=True, eq=False)
class PredictionError:
    eps_a: np.ndarray
    eps_b: np.ndarray
    Z: np.ndarray

    @property
    def eps(self) -> np.ndarray:
        return np.vstack([self.eps_a, self.eps_b])


def prediction_error(ms: ModelSet, theta, data: Dataset) -> PredictionError:
    eps = data.w - predict(ms, theta, data)
    ea, eb = eps[: ms.p], eps[ms.p:]
    return PredictionError(ea, eb, ms.gamma_of(theta) @ ea - eb)


def _shift(x: np.ndarray, k: int) -> np.ndarray:
    if k == 0:
        return x
    out = np.zeros_like(x)
    out[..., k:] = x[..., :-k]
    return out


def affine_regressors(ms: ModelSet, data: Dataset, *, allow_filtered: bool = False):
    """Phi (N x L x n_theta) and y (N x L) with eps(t, theta) = y(t) - Phi(t) theta.

    With a static identity Hbreve, y = w minus the fixed-module contributions
    (y = w when nothing is fixed).  A dynamic Hbreve makes every column pass
    through Hbreve^-1; this is only done when ``allow_filtered`` is set.  Gamma
    columns are zero: the prediction error does not depend on Gamma.
    """
    if data.L != ms.L or data.K != ms.K:
        raise ValueError(f"dataset has L={data.L}, K={data.K}; model set expects L={ms.L}, K={ms.K}")
    identity = ms.Hbreve.is_identity()
    if not identity and not allow_filtered:
        raise UnsupportedStructureError("affine regressors need a static identity squared noise model")
    inv = (lambda x: x) if identity else (lambda x: solve_monic(ms.Hbreve, x))
    N, L = data.N, ms.L
    y0 = tfm_apply(eye_minus(ms.G_fixed), data.w)
    if ms.R_fixed is not None:
        y0 -= tfm_apply(ms.R_fixed, data.r)
    y = inv(y0).T
    Phi = np.zeros((N, L, ms.n_theta))
    for b in ms.blocks:
        if b.kind == "Gamma":
            continue
        src = (data.w if b.kind == "G" else data.r)[b.col]
        base = np.zeros((L, N))
        base[b.row] = src
        base = inv(base)
        for c, k in zip(b.indices, b.lags):
            Phi[:, :, c] = _shift(base, k).T
    return Phi, y
