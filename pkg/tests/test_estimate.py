import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netid import estimate as est
from netid.network import NetworkModel
from netid.predictor import ModelSet, extract_theta, prediction_error
from netid.simulate import Dataset, simulate_experiment, simulate_network


def noiseless(m, N=400, seed=0):
    rng = np.random.default_rng(seed)
    return simulate_network(m, rng.standard_normal((m.K, N)), np.zeros((m.p, N)))


def fixed_gamma_set(m):
    return ModelSet.from_spec({"G": {"1,2": 5, "1,3": 5, "2,3": 5, "3,1": 5}, "gamma": False}, m)


def test_noiseless_data_is_fit_exactly(net3):
    _, m, ms, th0 = net3
    # excitation alone does not excite Gamma: fix it and give every node its own input
    spec = m.to_spec()
    spec.update(K=3, R=[[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    m3 = NetworkModel.from_spec(spec)
    ms3 = fixed_gamma_set(m3)
    data = noiseless(m3)
    th = extract_theta(ms3, m3)
    np.testing.assert_allclose(est.wls(ms3, data, np.diag([1.0, 2.0, 3.0])).theta_hat, th, atol=1e-10)
    r = est.cls(ms3, data)
    np.testing.assert_allclose(r.theta_hat, th, atol=1e-10)
    assert r.constraint_value < 1e-20


def test_estimate_gamma_exact(rng):
    ea = rng.standard_normal((2, 300))
    G = np.array([[0.3, -1.2], [2.0, 0.5]])
    np.testing.assert_allclose(est.estimate_gamma(ea, G @ ea), G, atol=1e-13)


def test_estimate_gamma_independent_noise_vanishes():
    rng = np.random.default_rng(3)
    errs = []
    for N in (100, 10000):
        ea, eb = rng.standard_normal((2, N))
        errs.append(abs(est.estimate_gamma(ea, eb)[0, 0]))
    # oracle: sample regression coefficient has standard deviation 1/sqrt(N)
    assert errs[1] < 4 / np.sqrt(10000)


def test_estimate_gamma_singular():
    with pytest.raises(np.linalg.LinAlgError):
        est.estimate_gamma(np.zeros((1, 10)), np.ones((1, 10)))


def test_wls_gamma_near_truth(net3, net3_data):
    _, _, ms, _ = net3
    data, _ = net3_data
    r = est.wls(ms, data)
    np.testing.assert_allclose(r.gamma_hat, [[0.0, 1.0]], atol=0.05)


def test_cls_recovers_gamma_exactly_in_set(net3, net3_data):
    _, _, ms, th0 = net3
    data, _ = net3_data
    r = est.cls(ms, data)
    assert r.converged and r.feasible
    np.testing.assert_allclose(r.gamma_hat, [[0.0, 1.0]], atol=1e-10)
    # the constraint pins the modules that see the shared disturbance
    np.testing.assert_allclose(r.theta_hat[10:20], th0[10:20], atol=1e-10)
    energy = np.mean(data.w ** 2)
    assert 0 <= r.constraint_value < 1e-16 * energy


def test_penalty_trace_is_monotone(net3, net3_data):
    _, _, ms, _ = net3
    data, _ = net3_data
    r = est.cls(ms, data)
    vals = [t["constraint"] for t in r.trace]
    assert len(vals) > 1
    assert all(b <= a * (1 + 1e-9) for a, b in zip(vals, vals[1:]))
    assert r.iterations <= 200


def test_cls_invariant_to_weight_scaling(net3, net3_data):
    _, _, ms, _ = net3
    data, _ = net3_data
    Q = np.array([[2.0, 0.3], [0.3, 1.0]])
    a = est.cls(ms, data, Q)
    b = est.cls(ms, data, 7.5 * Q)
    np.testing.assert_allclose(a.theta_hat, b.theta_hat, atol=1e-8)


def test_ml_det_lambda(net3, net3_data):
    _, _, ms, _ = net3
    data, _ = net3_data
    r = est.ml_det(ms, data)
    np.testing.assert_allclose(r.lambda_hat, np.eye(2), atol=0.1)
    assert r.criterion_value == pytest.approx(np.linalg.det(r.lambda_hat))


def test_ml_det_scalar_noise_equals_cls(static_cls):
    _, m, ms, _ = static_cls
    data, _ = simulate_experiment(m, 500, 4)
    np.testing.assert_allclose(est.ml_det(ms, data).theta_hat, est.cls(ms, data, [[3.0]]).theta_hat, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.floats(1e-3, 1e3), st.integers(0, 2**31))
def test_relaxed_objective_is_weighted_ls(p, m, lam, seed):
    rng = np.random.default_rng(seed)
    Gamma = rng.standard_normal((m, p))
    B = rng.standard_normal((p, p))
    Q_a = B @ B.T + 0.1 * np.eye(p)
    eps = rng.standard_normal((p + m, 25))
    Q = est.relaxed_weight(Q_a, Gamma, lam)
    direct = np.einsum("it,ij,jt->", eps, Q, eps) / eps.shape[1]
    assert est.relaxed_objective(eps, Gamma, Q_a, lam) == pytest.approx(direct, rel=1e-12, abs=1e-12)


def test_relaxed_fixed_gamma_equals_wls(net3, net3_data):
    _, m, _, _ = net3
    data, _ = net3_data
    ms = fixed_gamma_set(m)
    Q_a = np.array([[1.5, 0.2], [0.2, 0.8]])
    for lam in (0.1, 10.0):
        a = est.relaxed(ms, data, Q_a, lam)
        b = est.wls(ms, data, est.relaxed_weight(Q_a, ms.Gamma_fixed, lam))
        np.testing.assert_allclose(a.theta_hat, b.theta_hat, atol=1e-10)
        assert a.criterion_value == pytest.approx(b.criterion_value, rel=1e-10)


def test_relaxed_tiny_lambda_fits_eps_a_only(net3, net3_data):
    _, m, _, _ = net3
    data, _ = net3_data
    ms = fixed_gamma_set(m)
    r = est.relaxed(ms, data, np.eye(2), 1e-7)
    w = est.wls(ms, data, np.diag([1.0, 1.0, 1e-7]))
    # parameters seen by eps_a match an (almost) eps_a-only fit
    np.testing.assert_allclose(r.theta_hat[:15], w.theta_hat[:15], atol=1e-5)


def test_static_relaxed_large_lambda_interpolates(static_relaxed):
    _, m, ms, th0 = static_relaxed
    data, _ = simulate_experiment(m, 500, 6)
    r = est.relaxed(ms, data, [[1.0]], 1e8)
    assert abs(r.theta_hat[1] - th0[1]) < 1e-6
    loose = est.relaxed(ms, data, [[1.0]], 1.0)
    assert abs(loose.theta_hat[0] - th0[0]) > 100 * abs(r.theta_hat[1] - th0[1])


def test_static_cls_constraint_fixes_first_parameter(static_cls):
    _, m, ms, th0 = static_cls
    vals = []
    for seed in range(5):
        data, _ = simulate_experiment(m, 300, seed)
        r = est.cls(ms, data)
        assert r.theta_hat[0] == pytest.approx(th0[0], abs=1e-10)
        vals.append(r.theta_hat[1:])
    d = np.array(vals) - th0[1:]
    np.testing.assert_allclose(d[:, 0], d[:, 1], atol=1e-10)
    assert np.std(d[:, 0]) > 1e-3


def test_rank_deficiency_names_parameters(net3):
    _, m, ms, _ = net3
    data, _ = simulate_experiment(m, 200, 1)
    dead = Dataset(np.vstack([data.w[:2], np.zeros((1, 200))]), data.r)
    with pytest.raises(est.RankDeficiencyError) as info:
        est.wls(ms, dead)
    # w3 drives G13 and G23
    assert "G13" in str(info.value) and "G23" in str(info.value)
    assert set(info.value.params) == set(range(5, 15))


def test_cls_flags_infeasible_model(net3, net3_data):
    # leaving G31 out makes Z = 0 unreachable
    _, m, _, _ = net3
    data, _ = net3_data
    ms = ModelSet.from_spec({"G": {"1,2": 5, "1,3": 5, "2,3": 5}, "gamma": True,
                             "G_fixed": [[0, 0, 0], [0, 0, 0], [0, 0, 0]]}, m)
    r = est.cls(ms, data)
    assert not r.feasible and not r.converged
    assert r.constraint_value > 1e-6
    assert np.all(np.isfinite(r.theta_hat))


@pytest.mark.parametrize("method", ["wls", "cls"])
def test_consistency_trend(net3, method):
    _, m, ms, th0 = net3
    idx = ms.dyn_indices if method == "wls" else np.arange(ms.n_theta)
    medians = []
    for N in (250, 1000, 4000):
        errs = []
        for seed in range(8):
            data, _ = simulate_experiment(m, N, 100 + seed)
            r = est.wls(ms, data) if method == "wls" else est.cls(ms, data)
            errs.append(np.abs(r.theta_hat - th0)[idx])
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]


def test_identifiability_three_node_passes(net3):
    _, _, ms, th0 = net3
    rep = est.check_identifiability(ms, th0)
    assert rep.passed
    assert [r["budget"] for r in rep.rows] == [3, 3, 3]
    assert [r["n_param"] for r in rep.rows] == [2, 1, 3]


def test_identifiability_row_budget_exceeded(net3):
    _, m, _, _ = net3
    ms = ModelSet.from_spec({"G": {"1,2": 5, "1,3": 5, "2,3": 5, "3,1": 5, "3,2": 2}, "gamma": True}, m)
    rep = est.check_identifiability(ms, extract_theta(ms, m))
    assert not rep.passed
    bad = [r for r in rep.rows if not r["count_ok"]]
    assert [r["row"] for r in bad] == [3]
    assert "FAIL" in rep.lines()[2]


def test_identifiability_rank_failure():
    # node 2 is driven only by the noise it shares with node 1, and G12 and a second
    # path from the same disturbance cannot be separated
    spec = {"L": 3, "K": 0, "p": 1, "G": [[0, [0, 0.5], [0, 0.2]], [0, 0, 0], [0, 0, 0]],
            "H": [[1], [1], [1]], "Lambda": [[1]]}
    m = NetworkModel.from_spec(spec)
    ms = ModelSet.from_spec({"G": {"1,2": 1, "1,3": 1}}, m)
    rep = est.check_identifiability(ms, extract_theta(ms, m))
    assert not rep.passed
    assert rep.rows[0]["sigma_min"] < 1e-8
