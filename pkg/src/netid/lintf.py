"""Polynomial and rational transfer-function algebra in the backward shift q^-1.

Every transfer function is a ratio of polynomials in q^-1 with a monic
denominator (leading coefficient 1).  Signals are filtered causally with zero
initial conditions.  Monic square transfer matrices are never inverted
symbolically; ``solve_monic`` runs the inverse as a time-domain recursion.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.signal

STABILITY_MARGIN = 1e-9


class SingularityError(ValueError):
    """Raised when a transfer function is evaluated at a pole."""


@dataclass(frozen=True)
class Polynomial:
    """c0 + c1 q^-1 + ... + cd q^-d."""

    coeffs: tuple[float, ...]

    def __init__(self, coeffs):
        c = tuple(float(x) for x in np.atleast_1d(np.asarray(coeffs, dtype=float)).ravel())
        if not c:
            raise ValueError("polynomial needs at least one coefficient")
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def normalize(self) -> "Polynomial":
        c = list(self.coeffs)
        while len(c) > 1 and c[-1] == 0.0:
            c.pop()
        return Polynomial(c)

    def is_zero(self) -> bool:
        return all(x == 0.0 for x in self.coeffs)

    def array(self) -> np.ndarray:
        return np.array(self.coeffs)

    def at(self, zinv: complex) -> complex:
        """Evaluate with q^-1 replaced by ``zinv``."""
        return complex(np.polyval(self.coeffs[::-1], zinv))


@dataclass(frozen=True)
class RationalTF:
    num: Polynomial
    den: Polynomial

    def __init__(self, num, den=(1.0,)):
        num = num if isinstance(num, Polynomial) else Polynomial(num)
        den = den if isinstance(den, Polynomial) else Polynomial(den)
        if den.coeffs[0] != 1.0:
            raise ValueError(f"denominator must be monic, got leading coefficient {den.coeffs[0]}")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @classmethod
    def const(cls, c: float) -> "RationalTF":
        return cls([c])

    @classmethod
    def delay(cls, k: int = 1) -> "RationalTF":
        return cls([0.0] * k + [1.0])

    @property
    def feedthrough(self) -> float:
        return self.num.coeffs[0]

    def strictly_proper(self) -> bool:
        return self.num.coeffs[0] == 0.0

    def is_zero(self) -> bool:
        return self.num.is_zero()

    def is_fir(self) -> bool:
        return self.den.normalize().degree == 0

    def is_static(self) -> bool:
        return self.is_fir() and self.num.normalize().degree == 0

    def scaled(self, c: float) -> "RationalTF":
        return RationalTF(c * self.num.array(), self.den)

    def minus_const(self, c: float) -> "RationalTF":
        """Return self - c, keeping the denominator."""
        if c == 0.0:
            return self
        n = max(len(self.num.coeffs), len(self.den.coeffs))
        num = np.zeros(n)
        num[: len(self.num.coeffs)] += self.num.array()
        num[: len(self.den.coeffs)] -= c * self.den.array()
        return RationalTF(num, self.den)

    def at(self, zinv: complex) -> complex:
        d = self.den.at(zinv)
        if abs(d) < 1e-14:
            raise SingularityError(f"denominator vanishes at z^-1={zinv}")
        return self.num.at(zinv) / d

    def poles(self) -> np.ndarray:
        # c0 z^d + c1 z^(d-1) + ... + cd = z^d den(z^-1)
        den = self.den.normalize().array()
        if len(den) == 1:
            return np.zeros(0, dtype=complex)
        return np.linalg.eigvals(_companion(den))

    def to_dict(self):
        if self.is_fir():
            return list(self.num.coeffs)
        return {"num": list(self.num.coeffs), "den": list(self.den.coeffs)}

    @classmethod
    def from_spec(cls, spec) -> "RationalTF":
        """Accept a number, a coefficient list or a ``{"num", "den"}`` mapping."""
        if isinstance(spec, RationalTF):
            return spec
        if isinstance(spec, dict):
            return cls(spec["num"], spec.get("den", [1.0]))
        return cls(spec)


def _companion(den: np.ndarray) -> np.ndarray:
    d = len(den) - 1
    C = np.zeros((d, d))
    C[0, :] = -den[1:]
    if d > 1:
        C[1:, :-1] = np.eye(d - 1)
    return C


def filter_apply(tf: RationalTF, u) -> np.ndarray:
    """y(t) = sum_k num_k u(t-k) - sum_{k>=1} den_k y(t-k), zero initial conditions."""
    u = np.asarray(u, dtype=float)
    if tf.is_zero():
        return np.zeros_like(u)
    return scipy.signal.lfilter(tf.num.array(), tf.den.array(), u)


class TFMatrix:
    """Immutable rows x cols grid of :class:`RationalTF`."""

    __slots__ = ("_entries", "rows", "cols")

    def __init__(self, entries: Sequence[Sequence]):
        grid = tuple(tuple(RationalTF.from_spec(e) for e in row) for row in entries)
        if not grid or not grid[0]:
            raise ValueError("TFMatrix needs at least one row and one column")
        if any(len(row) != len(grid[0]) for row in grid):
            raise ValueError("ragged TFMatrix")
        object.__setattr__(self, "_entries", grid)
        object.__setattr__(self, "rows", len(grid))
        object.__setattr__(self, "cols", len(grid[0]))

    def __setattr__(self, name, value):
        raise AttributeError("TFMatrix is immutable")

    def __getitem__(self, ij) -> RationalTF:
        i, j = ij
        return self._entries[i][j]

    def __eq__(self, other):
        return isinstance(other, TFMatrix) and self._entries == other._entries

    def __hash__(self):
        return hash(self._entries)

    def __repr__(self):
        return f"TFMatrix({self.rows}x{self.cols})"

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @classmethod
    def static(cls, M) -> "TFMatrix":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls([[RationalTF.const(x) for x in row] for row in M])

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "TFMatrix":
        return cls.static(np.zeros((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "TFMatrix":
        return cls.static(np.eye(n))

    @classmethod
    def from_spec(cls, spec, rows: int | None = None, cols: int | None = None) -> "TFMatrix":
        if isinstance(spec, TFMatrix):
            return spec
        m = cls([[RationalTF.from_spec(e) for e in row] for row in spec])
        if (rows is not None and m.rows != rows) or (cols is not None and m.cols != cols):
            raise ValueError(f"expected {rows}x{cols} transfer matrix, got {m.rows}x{m.cols}")
        return m

    def to_spec(self):
        return [[self[i, j].to_dict() for j in range(self.cols)] for i in range(self.rows)]

    def entries(self):
        return self._entries

    def replace(self, i: int, j: int, tf: RationalTF) -> "TFMatrix":
        grid = [list(row) for row in self._entries]
        grid[i][j] = tf
        return TFMatrix(grid)

    def block(self, rows: slice | Sequence[int], cols: slice | Sequence[int]) -> "TFMatrix":
        ri = range(self.rows)[rows] if isinstance(rows, slice) else rows
        ci = range(self.cols)[cols] if isinstance(cols, slice) else cols
        return TFMatrix([[self[i, j] for j in ci] for i in ri])

    def feedthrough(self) -> np.ndarray:
        return np.array([[e.feedthrough for e in row] for row in self._entries])

    def monic(self) -> bool:
        return self.rows == self.cols and np.array_equal(self.feedthrough(), np.eye(self.rows))

    def strictly_proper(self) -> bool:
        return all(e.strictly_proper() for row in self._entries for e in row)

    def is_static(self) -> bool:
        return all(e.is_static() for row in self._entries for e in row)

    def is_identity(self) -> bool:
        return self.is_static() and self.monic() and np.array_equal(self.feedthrough(), np.eye(self.rows))


def tfm_apply(M: TFMatrix, u) -> np.ndarray:
    """Filter a cols x N signal through M; zero initial conditions."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[0] != M.cols:
        raise ValueError(f"signal has {u.shape[0]} channels, matrix expects {M.cols}")
    y = np.zeros((M.rows, u.shape[1]))
    for i in range(M.rows):
        for j in range(M.cols):
            tf = M[i, j]
            if tf.is_zero():
                continue
            if tf.is_static():
                y[i] += tf.feedthrough * u[j]
            else:
                y[i] += filter_apply(tf, u[j])
    return y


def freq_eval(M: TFMatrix, omega: float) -> np.ndarray:
    """Evaluate M at z = exp(i omega), i.e. q^-k -> exp(-i omega k)."""
    zinv = np.exp(-1j * omega)
    return np.array([[M[i, j].at(zinv) for j in range(M.cols)] for i in range(M.rows)])


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    poles: np.ndarray
    spectral_radius: float

    def __bool__(self):
        return self.stable


def stability_check(M: TFMatrix | RationalTF) -> StabilityReport:
    """All denominator roots strictly inside the unit circle (FIR is always stable)."""
    if isinstance(M, RationalTF):
        M = TFMatrix([[M]])
    poles = [e.poles() for row in M.entries() for e in row if not e.is_zero()]
    poles = np.concatenate(poles) if poles else np.zeros(0, dtype=complex)
    rho = float(np.max(np.abs(poles))) if poles.size else 0.0
    return StabilityReport(rho < 1.0 - STABILITY_MARGIN, poles, rho)


def _entry_ss(tf: RationalTF):
    """Controllable companion realization (A, B, C) of a strictly proper entry."""
    if not tf.strictly_proper():
        raise ValueError("entry is not strictly proper")
    num, den = tf.num.array(), tf.den.array()
    n = max(len(num), len(den)) - 1
    num = np.pad(num, (0, n + 1 - len(num)))
    den = np.pad(den, (0, n + 1 - len(den)))
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    return _companion(den), B, num[1:].reshape(1, n)


def strictly_proper_ss(M: TFMatrix):
    """Joint realization x(t+1) = A x + B u, y = C x of a strictly proper M."""
    As, Bs, Cs = [], [], []
    for i in range(M.rows):
        for j in range(M.cols):
            tf = M[i, j]
            if tf.is_zero():
                continue
            if not tf.strictly_proper():
                raise ValueError(f"entry ({i + 1},{j + 1}) is not strictly proper")
            A, B, C = _entry_ss(tf)
            Bf = np.zeros((A.shape[0], M.cols))
            Bf[:, j] = B[:, 0]
            Cf = np.zeros((M.rows, A.shape[0]))
            Cf[i, :] = C[0, :]
            As.append(A)
            Bs.append(Bf)
            Cs.append(Cf)
    if not As:
        return np.zeros((0, 0)), np.zeros((0, M.cols)), np.zeros((M.rows, 0))
    return scipy.linalg.block_diag(*As), np.vstack(Bs), np.hstack(Cs)


def closed_loop_stability(G: TFMatrix) -> StabilityReport:
    """Stability of w = G w + u for square, strictly proper G with zero diagonal."""
    if G.rows != G.cols:
        raise ValueError("G must be square")
    A, B, C = strictly_proper_ss(G)
    if A.size == 0:
        return StabilityReport(True, np.zeros(0, dtype=complex), 0.0)
    poles = np.linalg.eigvals(A + B @ C)
    rho = float(np.max(np.abs(poles)))
    return StabilityReport(rho < 1.0 - STABILITY_MARGIN, poles, rho)


def inverse_stability(M: TFMatrix) -> StabilityReport:
    """Stability of the causal inverse of a monic square M."""
    if not M.monic():
        raise ValueError("inverse stability is only defined here for monic square matrices")
    D = _strict_part(M)
    A, B, C = strictly_proper_ss(D)
    if A.size == 0:
        return StabilityReport(True, np.zeros(0, dtype=complex), 0.0)
    poles = np.linalg.eigvals(A - B @ C)
    rho = float(np.max(np.abs(poles)))
    return StabilityReport(rho < 1.0 - STABILITY_MARGIN, poles, rho)


def eye_minus(M: TFMatrix) -> TFMatrix:
    """I - M for square M with strictly proper entries."""
    return TFMatrix([[RationalTF.const(1.0) if i == j and M[i, j].is_zero()
                      else M[i, j].scaled(-1.0).minus_const(-1.0 if i == j else 0.0)
                      for j in range(M.cols)] for i in range(M.rows)])


def _strict_part(M: TFMatrix) -> TFMatrix:
    I = np.eye(M.rows)
    return TFMatrix([[M[i, j].minus_const(I[i, j]) for j in range(M.cols)] for i in range(M.rows)])


def solve_monic(M: TFMatrix, x) -> np.ndarray:
    """Return y with M y = x for monic square M, by causal recursion.

    M = I + D with D strictly proper, so y(t) = x(t) - (D y)(t) where the right
    side only involves y up to t-1.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not M.monic():
        raise ValueError("solve_monic needs a monic square transfer matrix")
    if x.shape[0] != M.rows:
        raise ValueError(f"signal has {x.shape[0]} channels, matrix expects {M.rows}")
    D = _strict_part(M)
    if all(e.is_zero() for row in D.entries() for e in row):
        return x.copy()
    if D.is_static():
        return x.copy()
    A, B, C = strictly_proper_ss(D)
    return _feedback_loop(A, B, C, x)


def _feedback_loop(A, B, C, x):
    # s(t+1) = A s + B y,  y = x - C s
    n, N = A.shape[0], x.shape[1]
    y = np.empty_like(x)
    s = np.zeros(n)
    Acl = A - B @ C
    for t in range(N):
        xt = x[:, t]
        y[:, t] = xt - C @ s
        s = Acl @ s + B @ xt
    return y
