import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from netid.lintf import (
    RationalTF,
    SingularityError,
    TFMatrix,
    closed_loop_stability,
    eye_minus,
    filter_apply,
    freq_eval,
    inverse_stability,
    solve_monic,
    stability_check,
    tfm_apply,
)

coef = st.floats(-2, 2, allow_nan=False, allow_infinity=False)


def direct_filter(num, den, u):
    # plain difference equation, independent of scipy
    y = np.zeros_like(u)
    for t in range(len(u)):
        acc = sum(num[k] * u[t - k] for k in range(len(num)) if t - k >= 0)
        acc -= sum(den[k] * y[t - k] for k in range(1, len(den)) if t - k >= 0)
        y[t] = acc
    return y


def test_denominator_must_be_monic():
    with pytest.raises(ValueError, match="monic"):
        RationalTF([1.0], [2.0, 0.5])


def test_filter_matches_difference_equation(rng):
    tf = RationalTF([0.0, 0.5, -0.2], [1.0, -0.6, 0.08])
    u = rng.standard_normal(200)
    np.testing.assert_allclose(filter_apply(tf, u), direct_filter([0, 0.5, -0.2], [1, -0.6, 0.08], u), atol=1e-12)


def test_zero_and_static_fast_paths(rng):
    u = rng.standard_normal((2, 50))
    M = TFMatrix([[0.0, 2.0], [RationalTF.delay(1), 0.0]])
    y = tfm_apply(M, u)
    np.testing.assert_allclose(y[0], 2 * u[1])
    np.testing.assert_allclose(y[1], np.r_[0.0, u[0, :-1]])


def test_freq_eval_of_delay():
    M = TFMatrix([[RationalTF.delay(2)]])
    np.testing.assert_allclose(freq_eval(M, 0.3)[0, 0], np.exp(-0.6j))


def test_freq_eval_at_pole_raises():
    tf = RationalTF([1.0], [1.0, -1.0])
    with pytest.raises(SingularityError):
        freq_eval(TFMatrix([[tf]]), 0.0)


def test_stability_reports_poles():
    rep = stability_check(RationalTF([1.0], [1.0, -1.5]))
    assert not rep and rep.spectral_radius == pytest.approx(1.5)
    assert stability_check(RationalTF([1.0, 0.3])).stable


def test_closed_loop_stability_scalar_loop():
    # w1 = a q^-1 w2, w2 = q^-1 w1 gives poles +-sqrt(a)
    for a, stable in ((0.81, True), (1.21, False)):
        G = TFMatrix([[0.0, [0.0, a]], [[0.0, 1.0], 0.0]])
        rep = closed_loop_stability(G)
        assert rep.stable is stable
        assert rep.spectral_radius == pytest.approx(np.sqrt(a))


def test_inverse_stability_of_monic_fir():
    assert inverse_stability(TFMatrix([[[1.0, 0.5]]])).stable
    assert not inverse_stability(TFMatrix([[[1.0, 2.0]]])).stable


@settings(max_examples=40, deadline=None)
@given(st.lists(coef, min_size=2, max_size=4), st.lists(coef, min_size=2, max_size=4), st.integers(0, 2**31))
def test_solve_monic_inverts_multiplication(b12, b21, seed):
    # M = I - G with strictly proper FIR G; M^-1 (M x) == x
    G = TFMatrix([[0.0, [0.0] + b12], [[0.0] + b21, 0.0]])
    M = eye_minus(G)
    assume(inverse_stability(M).stable)  # unstable inverses amplify round-off geometrically
    x = np.random.default_rng(seed).standard_normal((2, 40))
    np.testing.assert_allclose(solve_monic(M, tfm_apply(M, x)), x, atol=1e-6 * (1 + np.abs(tfm_apply(M, x)).max()) * 40)


@settings(max_examples=40, deadline=None)
@given(st.lists(coef, min_size=1, max_size=4), st.floats(-3, 3), st.integers(0, 2**31))
def test_filter_is_linear(num, a, seed):
    tf = RationalTF(num, [1.0, 0.5])
    u, v = np.random.default_rng(seed).standard_normal((2, 30))
    np.testing.assert_allclose(filter_apply(tf, a * u + v), a * filter_apply(tf, u) + filter_apply(tf, v), atol=1e-9)


def test_solve_monic_rational_entry(rng):
    # (1 + 0.5 q^-1 / (1 - 0.3 q^-1)) y = x
    M = TFMatrix([[{"num": [1.0, 0.2], "den": [1.0, -0.3]}]])
    x = rng.standard_normal((1, 100))
    y = solve_monic(M, x)
    np.testing.assert_allclose(tfm_apply(M, y), x, atol=1e-12)


def test_spec_roundtrip():
    M = TFMatrix([[0.0, [0.0, 0.3]], [{"num": [0.0, 1.0], "den": [1.0, -0.5]}, 0.0]])
    assert TFMatrix.from_spec(M.to_spec()) == M
