import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermalab.errors import ValidationError
from thermalab.rmt import (
    GaussianBlockSpec, expected_block_map, expected_block_superop, fit_exponent, product_sum_norm, sample_block,
    spectral_norm_mc, sum_concentration_mc, tensor_sum_norm, trial_rngs,
)


def test_spec_validation():
    with pytest.raises(ValidationError):
        GaussianBlockSpec((0, 3))
    with pytest.raises(ValidationError):
        GaussianBlockSpec((3, 3), variance=0.0)
    with pytest.raises(ValidationError):
        GaussianBlockSpec((3, 4), hermitian=True)


def test_entry_variance():
    G = sample_block(GaussianBlockSpec((256, 256), 2.0), 0)
    assert 1.9 <= np.mean(np.abs(G) ** 2) <= 2.1


def test_seed_determinism():
    spec = GaussianBlockSpec((5, 7), 1.3)
    assert np.array_equal(sample_block(spec, 42), sample_block(spec, 42))
    a = spectral_norm_mc((8, 8), 1.0, 10, seed=3)
    b = spectral_norm_mc((8, 8), 1.0, 10, seed=3)
    assert np.array_equal(a.samples, b.samples)


def test_hermitian_block():
    spec = GaussianBlockSpec((200, 200), 1.5, hermitian=True)
    G = sample_block(spec, 1)
    assert np.array_equal(G, G.conj().T)
    assert 1.4 <= np.mean(np.abs(G) ** 2) <= 1.6
    assert np.var(np.diag(G).real) == pytest.approx(1.5, rel=0.3)


def test_expected_map_closed_form_example():
    ev = expected_block_map(1.0, (2, 3), 0.5, 0.5)
    np.testing.assert_allclose(ev.values, [0.0, -1.0, -1.5, -2.5])
    np.testing.assert_array_equal(ev.multiplicities, [1, 8, 3, 1])


def test_expected_map_matches_constructed_superop():
    V, ranks, gp, gm = 0.7, (3, 4), [0.2, 0.5], [0.1, 0.05]
    full = expected_block_map(V, ranks, gp, gm).full()
    ev = np.sort(np.linalg.eigvals(expected_block_superop(V, ranks, gp, gm)).real)[::-1]
    assert np.max(np.abs(full - ev)) <= 1e-12


def test_expected_map_rate_zero_limit():
    ev = expected_block_map(1.0, (2, 3), 0.5, 0.0)
    assert ev.values[1] == 0.0
    assert np.count_nonzero(ev.full() == 0.0) == 1 + (3 * 3 - 1)


def test_expected_map_rejects_bad_ranks():
    with pytest.raises(ValidationError):
        expected_block_map(1.0, (0, 2), 1.0, 1.0)


def test_square_norm_edge():
    st_ = spectral_norm_mc((256, 256), 2.0, 20, seed=0)
    assert 0.95 <= st_.mean / (2 * np.sqrt(2 * 256)) <= 1.05
    assert st_.se > 0 and st_.q10 <= st_.q50 <= st_.q90


def test_scalar_norm():
    V = 3.0
    st_ = spectral_norm_mc((1, 1), V, 200, seed=0)
    assert 0.7 * np.sqrt(V) <= st_.mean <= 1.5 * np.sqrt(V)


def test_tall_norm_edge():
    st_ = spectral_norm_mc((1024, 16), 1.0, 20, seed=0)
    assert 0.9 <= st_.mean / np.sqrt(1024) <= 1.3


def test_trials_guard():
    with pytest.raises(ValidationError):
        spectral_norm_mc((4, 4), 1.0, 9)


def test_single_term_ratio_one():
    rows = sum_concentration_mc("tensor", [1], lambda n: np.ones(n), (6, 6), 10, seed=0)
    assert rows[0]["ratio"] == 1.0
    rng = trial_rngs(0 + 7919, 10)[0]
    G = sample_block(GaussianBlockSpec((6, 6)), rng)
    Gp = sample_block(GaussianBlockSpec((6, 6)), rng)
    assert rows[0]["samples"][0] == pytest.approx(np.linalg.norm(G, 2) * np.linalg.norm(Gp, 2), rel=1e-10)


def test_zero_coefficients():
    rows = sum_concentration_mc("tensor", [3], lambda n: np.zeros(n), (6, 6), 10, seed=0)
    assert rows[0]["mean"] == 0.0
    assert product_sum_norm(np.zeros(2), [np.eye(2)] * 2, [np.eye(2)] * 2) == 0.0


def test_tensor_norm_operator_path_matches_dense():
    rng = np.random.default_rng(0)
    Gs = [sample_block(GaussianBlockSpec((20, 20)), rng) for _ in range(3)]
    Gps = [sample_block(GaussianBlockSpec((20, 20)), rng) for _ in range(3)]
    coeffs = [0.5, -1.0, 2.0]
    dense = np.linalg.norm(sum(a * np.kron(G, H.conj()) for a, G, H in zip(coeffs, Gs, Gps)), 2)
    assert tensor_sum_norm(coeffs, Gs, Gps) == pytest.approx(dense, rel=1e-8)


def test_product_kind_exponent():
    rows = sum_concentration_mc("product", [1, 4, 16], lambda n: np.ones(n) / n, (64, 64), 10, seed=0)
    expo = fit_exponent([r["count"] for r in rows], [r["mean"] for r in rows])
    assert expo == pytest.approx(-0.5, abs=0.15)


def test_unknown_kind():
    with pytest.raises(ValidationError):
        sum_concentration_mc("sum", [1], lambda n: np.ones(n), (2, 2), 10)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 3.0), st.integers(1, 4), st.integers(1, 4),
       st.lists(st.floats(0.0, 2.0), min_size=1, max_size=3), st.lists(st.floats(0.0, 2.0), min_size=1, max_size=3))
def test_expected_map_property(V, r1, r2, gp, gm):
    full = expected_block_map(V, (r1, r2), gp, gm).full()
    ev = np.sort(np.linalg.eigvals(expected_block_superop(V, (r1, r2), gp, gm)).real)[::-1]
    assert np.max(np.abs(full - ev)) <= 1e-12 * max(1.0, np.max(np.abs(ev)))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(0.1, 4.0), st.integers(0, 10**6))
def test_sampling_determinism_property(d1, d2, V, seed):
    spec = GaussianBlockSpec((d1, d2), V)
    assert np.array_equal(sample_block(spec, seed), sample_block(spec, seed))
