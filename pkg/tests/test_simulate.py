import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netid.network import NetworkModel
from netid.simulate import (
    Dataset,
    UnstableNetworkError,
    gen_excitation,
    gen_white,
    load_dataset,
    regressor_rank,
    save_dataset,
    simulate_experiment,
    simulate_network,
    split_seed,
)


def test_csv_roundtrip_is_bit_exact(net3, tmp_path):
    _, m, _, _ = net3
    data, _ = simulate_experiment(m, 200, 3)
    for name in ("d.csv", "d.npz"):
        save_dataset(data, tmp_path / name)
        back = load_dataset(tmp_path / name)
        assert np.array_equal(back.w, data.w) and np.array_equal(back.r, data.r)
    assert data.header() == ["w1", "w2", "w3", "r1"]


def test_dataset_shape_checks():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 10)), np.zeros((1, 9)))


def test_split_seed_is_stable_and_distinct():
    seeds = [split_seed(42, k) for k in range(100)]
    assert len(set(seeds)) == 100
    assert split_seed(42, 7) == seeds[7]
    assert split_seed(43, 7) != seeds[7]


def test_gen_white_covariance():
    Lam = np.array([[2.0, 0.5], [0.5, 1.0]])
    e = gen_white(Lam, 200000, 1)
    np.testing.assert_allclose(np.cov(e), Lam, atol=0.03)
    with pytest.raises(ValueError):
        gen_white(np.zeros((2, 2)), 10, 1)


@pytest.mark.parametrize("kind", ["white", "multisine", "prbs"])
def test_excitation_power_and_independence(kind):
    r = gen_excitation(kind, 2, 4096, 9, amplitude=2.0)
    np.testing.assert_allclose(r.var(axis=1), 4.0, rtol=0.1)
    assert abs(np.corrcoef(r)[0, 1]) < 0.1


def test_multisine_rank_is_limited():
    r = gen_excitation("multisine", 2, 2048, 0, n_freq=3)
    assert regressor_rank(r, 8) == 12
    assert regressor_rank(gen_excitation("white", 2, 2048, 0), 8) == 16


def test_unknown_excitation():
    with pytest.raises(ValueError, match="unknown"):
        gen_excitation("chirp", 1, 10, 0)


def test_unstable_network_refused():
    m = NetworkModel.from_spec({"L": 2, "K": 0, "p": 2, "G": [[0, [0, 1.5]], [[0, 1.0], 0]],
                                "H": [[1, 0], [0, 1]], "Lambda": [[1, 0], [0, 1]]})
    e = np.ones((2, 10))
    with pytest.raises(UnstableNetworkError):
        simulate_network(m, None, e)
    assert simulate_network(m, None, e, allow_unstable=True).N == 10


def test_simulation_satisfies_network_equation(net3):
    _, m, _, _ = net3
    from netid.lintf import tfm_apply
    data, e = simulate_experiment(m, 300, 4)
    rhs = tfm_apply(m.G, data.w) + tfm_apply(m.R, data.r) + tfm_apply(m.H, e)
    np.testing.assert_allclose(data.w, rhs, atol=1e-10)


def test_burn_in_drops_samples(net3):
    _, m, _, _ = net3
    data, e = simulate_experiment(m, 100, 4, burn_in=50)
    assert data.N == 100 and e.shape == (2, 100)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(0, 10**6))
def test_split_seed_range(base, k):
    s = split_seed(base, k)
    assert 0 <= s < 2**64
