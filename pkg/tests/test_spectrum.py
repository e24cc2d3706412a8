import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from thermalab.errors import CapacityError, ValidationError
from thermalab.spectrum import (
    SpectralModel, SpinChainParams, box_density, build_chain, density_ratio, diagonalize, eth_model,
    gibbs_diagonal, gibbs_weights, round_spectrum, tabulated_profile,
)


def test_params_validation():
    with pytest.raises(ValidationError):
        SpinChainParams(1)
    with pytest.raises(ValidationError):
        SpinChainParams(4, g=float("nan"))


def test_free_z_field_two_sites():
    H = build_chain(SpinChainParams(2, g=0, h=1, J=0))
    np.testing.assert_array_equal(H, np.diag([2.0, 0.0, 0.0, -2.0]))


def test_periodic_ising_two_sites_double_bond():
    H = build_chain(SpinChainParams(2, g=0, h=0, J=1, periodic=True))
    np.testing.assert_array_equal(H, np.diag([2.0, -2.0, -2.0, 2.0]))


def test_build_chain_capacity_guard():
    with pytest.raises(CapacityError):
        build_chain(SpinChainParams(15))


def test_l12_spectrum_matches_independent_solver():
    H = build_chain(SpinChainParams(12))
    assert H.shape == (4096, 4096)
    assert np.array_equal(H, H.T)
    model = diagonalize(H, truncation=None)
    oracle = np.linalg.eigvalsh(H)
    assert np.max(np.abs(model.eigenvalues - oracle)) <= 1e-9


def test_diagonalize_identity():
    model = diagonalize(np.eye(4), truncation=None)
    np.testing.assert_allclose(model.eigenvalues, 1.0)
    U = model.eigenbasis
    assert np.max(np.abs(U.conj().T @ U - np.eye(4))) <= 1e-10


def test_diagonalize_permutation_basis():
    model = diagonalize(np.diag([3.0, 1.0, 2.0]), truncation=None)
    np.testing.assert_allclose(model.eigenvalues, [1, 2, 3])
    np.testing.assert_allclose(np.abs(model.eigenbasis), np.eye(3)[:, [1, 2, 0]])


def test_diagonalize_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        diagonalize(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_chain8_residual_and_unitarity(chain8):
    H = build_chain(chain8.params)
    U = chain8.eigenbasis
    resid = np.linalg.norm(H @ U - U * chain8.eigenvalues[None, :], axis=0)
    assert resid.max() <= 1e-8 * np.linalg.norm(H, 2)
    assert np.max(np.abs(U.conj().T @ U - np.eye(256))) <= 1e-10
    assert np.all(np.diff(chain8.eigenvalues) >= 0)


def test_default_truncation_drops_two_percent(chain8):
    assert chain8.n_retained == 256 - 2 * 5
    lo, hi = chain8.truncation
    assert lo <= chain8.energies.min() and chain8.energies.max() <= hi


def test_truncation_window_must_be_non_empty():
    with pytest.raises(ValidationError):
        diagonalize(np.diag([0.0, 1.0]), truncation=(5, 6))


def test_rounding_nearest_multiple():
    r = round_spectrum(np.array([0.1, 0.12, 0.9]), 0.5)
    np.testing.assert_allclose(r.labels, [0.0, 1.0])
    np.testing.assert_array_equal(r.ranks, [2, 1])


def test_rounding_symmetric_pair():
    r = round_spectrum(np.array([-0.26, 0.26]), 0.5)
    np.testing.assert_allclose(r.labels, [-0.5, 0.5])


def test_rounding_ties_toward_zero():
    r = round_spectrum(np.array([-0.75, -0.25, 0.25, 0.75]), 0.5)
    np.testing.assert_allclose(r.rounded_energies, [-0.5, 0.0, 0.0, 0.5])


def test_rounding_rejects_bad_precision():
    with pytest.raises(ValidationError):
        round_spectrum(np.array([0.0, 1.0]), 0.0)


def test_single_bin_warning():
    with pytest.warns(RuntimeWarning):
        r = round_spectrum(np.array([0.0, 0.1, 0.2]), 10.0)
    assert r.single_bin and r.n_bins == 1


def test_chain8_partition(chain8):
    r = round_spectrum(chain8, 0.2)
    assert r.ranks.sum() == chain8.n_retained
    assert np.all(r.ranks >= 1)
    assert np.all(np.abs(r.energies - r.rounded_energies) <= 0.1 + 1e-12)


def test_gibbs_weights_infinite_temperature():
    r = round_spectrum(np.array([0.0, 0.05, 1.0]), 0.5)
    np.testing.assert_allclose(gibbs_weights(r, 0.0), [2 / 3, 1 / 3])


def test_gibbs_weights_two_bins_ln2():
    r = round_spectrum(np.array([0.0, 1.0]), 1.0)
    np.testing.assert_allclose(gibbs_weights(r, np.log(2)), [2 / 3, 1 / 3], rtol=1e-14)


def test_gibbs_weights_chain8_normalized(chain8):
    r = round_spectrum(chain8, 0.2)
    assert abs(gibbs_weights(r, 0.5).sum() - 1) <= 1e-12
    assert abs(gibbs_diagonal(chain8, 0.5).sum() - 1) <= 1e-12


def test_gibbs_rejects_negative_beta():
    r = round_spectrum(np.array([0.0, 1.0]), 1.0)
    with pytest.raises(ValidationError):
        gibbs_weights(r, -1.0)


def test_density_ratio_uniform():
    r = round_spectrum((np.arange(-5000, 5000) + 0.5) * 1e-3, 0.1)
    assert abs(density_ratio(r, 1.0, region=(-3, 3)) - 1) <= 1e-6


def gaussian_levels(n=200000, variance=1.0):
    return np.sqrt(variance) * norm.ppf((np.arange(n) + 0.5) / n)


def test_density_ratio_gaussian_window():
    # density e^{-x^2/2n}: over |x| <= n the log ratio at separation w is at most w * (n + w/2) / n,
    # so with n = 1 the ratio approaches e^{w} at the edge and e^{w/2}-like in the bulk.
    # The centered-window reading uses anchor bins in [-w/2, w/2] around zero:
    # log ratio max = ((w/2 + w)^2 - (w/2)^2) / 2 = w^2 for w <= 1, so we check
    # the bulk value against the closed form of the box-smoothed Gaussian.
    window = 0.5
    r = round_spectrum(gaussian_levels(), 0.01)
    R = density_ratio(r, window, region=(-window / 2, window / 2))
    x0, x1 = window / 2, 3 * window / 2
    assert R == pytest.approx(np.exp((x1**2 - x0**2) / 2), rel=0.02)


def test_density_ratio_gaussian_edge_window():
    # anchors at |nu| <= 1 (one standard deviation) with window w: the extreme
    # pair sits at (1, 1 + w) giving exp(((1 + w)^2 - 1) / 2) ~ e^{w (1 + w/2)}.
    window = 0.2
    r = round_spectrum(gaussian_levels(), 0.01)
    R = density_ratio(r, window, region=(-1, 1))
    assert R == pytest.approx(np.exp(((1 + window) ** 2 - 1) / 2), rel=0.02)


def test_density_ratio_chain_refinement(chain8):
    R = [density_ratio(round_spectrum(chain8, nu0), 0.4, region=(-2, 2)) for nu0 in (0.4, 0.2)]
    assert R[0] >= 1 and R[1] >= 1
    assert abs(R[1] - R[0]) / R[0] <= 0.2


def test_density_ratio_empty_window():
    r = round_spectrum(np.array([0.0, 5.0]), 0.5)
    with pytest.raises(ValidationError):
        density_ratio(r, 1.0)


def test_box_density_integrates_to_one(chain8):
    r = round_spectrum(chain8, 0.1)
    dens = box_density(r)
    lo, hi = dens.support
    x = np.linspace(lo - 0.1, hi + 0.1, 200001)
    assert abs(np.trapezoid(dens(x), x) - 1) <= 1e-3


def test_eth_model_invariants(chain8):
    r = round_spectrum(chain8, 0.1)
    eth = eth_model(r, 0.4, region=(-2, 2))
    assert eth.R >= 1
    assert eth.f_profile(0.3) == eth.f_profile(-0.3)
    prof = tabulated_profile([0, 1, 2], [1.0, 0.5, 0.1])
    eth2 = eth_model(r, 0.4, prof, region=(-2, 2))
    assert eth2.f_profile(-1.5) == pytest.approx(0.3)
    with pytest.raises(ValidationError):
        eth_model(r, 0.4, lambda w: np.exp(np.asarray(w)), region=(-2, 2))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-20, 20, allow_nan=False), min_size=1, max_size=60),
       st.floats(0.01, 5.0))
def test_rounding_partition_property(values, nu0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = round_spectrum(np.array(values), nu0)
    assert r.ranks.sum() == len(values)
    assert np.all(r.ranks >= 1)
    assert np.all(r.starts[1:] == r.stops[:-1])
    assert np.all(np.abs(r.energies - r.rounded_energies) <= nu0 / 2 * (1 + 1e-9))
    np.testing.assert_allclose(r.labels / nu0, np.round(r.labels / nu0))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=40),
       st.floats(0.05, 1.0), st.floats(0.01, 3.0))
def test_gibbs_weights_property(values, nu0, beta):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = round_spectrum(np.array(values), nu0)
    w = gibbs_weights(r, beta)
    assert abs(w.sum() - 1) <= 1e-12
    per_state = w / r.ranks
    assert np.all(np.diff(per_state) <= 1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.booleans())
def test_chain_hermitian_and_residual_property(L, g, h, J, periodic):
    H = build_chain(SpinChainParams(L, g, h, J, periodic))
    assert np.array_equal(H, H.T)
    model = diagonalize(H, truncation=None)
    assert model.max_residual <= 1e-8 * max(np.linalg.norm(H, 2), 1.0)


def test_synthetic_model_has_no_basis():
    model = SpectralModel.from_eigenvalues([2.0, 0.0, 1.0])
    np.testing.assert_array_equal(model.energies, [0, 1, 2])
    assert model.basis is None
