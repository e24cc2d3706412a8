import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import chain_model, random_density
from thermalab.davies import interaction_set
from thermalab.errors import CapacityError, ValidationError
from thermalab.metropolis import (MetropolisConfig, QPEModel, build_bundle, classical_metropolis, epsilon_db,
                                  iterate_to_fixed_point, population_kernel, qpe_kraus, symmetry_residuals,
                                  trace_distance)
from thermalab.spectrum import gibbs_diagonal
from thermalab.superop import choi_min_eig


@pytest.fixture(scope="module")
def open4_bundles(open4):
    model, I = open4
    E = model.energies
    out = {}
    for mode in ("perfect", "two-bin"):
        out[mode] = build_bundle(E, I, MetropolisConfig(0.5, r_rej=2), QPEModel(0.3, mode))
    return E, I, out


def test_qpe_kraus_exact_register_hit():
    k = qpe_kraus([0.6], QPEModel(0.3))
    assert np.allclose(k.alpha**2, [[1.0]]) or np.isclose((k.alpha**2).max(), 1.0)
    assert np.isclose(k.labels[np.argmax(k.alpha[0])], 0.6)


def test_qpe_kraus_midpoint_splits_evenly():
    k = qpe_kraus([0.45], QPEModel(0.3))
    prob = k.alpha[0] ** 2
    hit = prob > 0
    assert np.allclose(k.labels[hit], [0.3, 0.6])
    assert np.allclose(prob[hit], [0.5, 0.5])


def test_qpe_kraus_tail_spreads_uniform_mass():
    k = qpe_kraus([0.0, 0.9], QPEModel(0.3, "two-bin-with-tail", p_amp=0.2))
    prob = k.alpha**2
    assert np.allclose(prob.sum(axis=1), 1.0)
    assert prob.min() == pytest.approx(0.2 / prob.shape[1])


def test_qpe_completeness_on_chain():
    model = chain_model(6, periodic=False, truncation=None)
    for mode in ("perfect", "two-bin", "two-bin-with-tail"):
        k = qpe_kraus(model.energies, QPEModel(0.3, mode, p_amp=0.1))
        assert k.completeness_residual() <= 1e-12


def test_perfect_population_kernel_is_classical_metropolis(open4_bundles):
    E, I, b = open4_bundles
    bundle = b["perfect"]
    K = population_kernel(bundle)
    assert np.abs(K - classical_metropolis(E, I, bundle.config)).max() <= 1e-12


def test_large_beta_suppresses_uphill_moves(open4):
    model, I = open4
    E = model.energies
    bundle = build_bundle(E, I, MetropolisConfig(50.0), QPEModel(0.3, "perfect"))
    K = population_kernel(bundle)
    up = E[None, :] - E[:, None] > 0.5
    assert np.abs(K[up]).max() <= 1e-9


@pytest.mark.parametrize("mode", ["perfect", "two-bin"])
def test_symmetry_residuals(open4_bundles, mode):
    res = symmetry_residuals(open4_bundles[2][mode])
    assert res["acceptance"] <= 1e-10
    assert res["rejection"] <= 1e-10


def test_perfect_rejection_keeps_eigenstates_diagonal(open4_bundles):
    E, _, b = open4_bundles
    R = b["perfect"].rejection
    n = E.size
    for i in range(n):
        rho = np.zeros((n, n))
        rho[i, i] = 1.0
        out = R.apply(rho)
        off = out - np.diag(np.diag(out))
        # degenerate eigenvalues may mix within the eigenspace only
        same = np.abs(E[:, None] - E[None, :]) < 1e-9
        assert np.abs(off[~same]).max(initial=0.0) <= 1e-12


def test_zero_rejection_rounds(open4):
    model, I = open4
    E = model.energies
    bundle = build_bundle(E, I, MetropolisConfig(0.5, r_rej=0), QPEModel(0.3))
    assert np.abs(bundle.rejection.matrix).max() == 0.0
    rho = random_density(E.size, 3)
    acc = np.trace(bundle.acceptance.apply(rho)).real
    assert bundle.trace_deficit(rho) == pytest.approx(1 - acc, abs=1e-12)


def test_trace_deficit_shrinks_with_rejection_rounds(open4):
    model, I = open4
    E = model.energies
    rho = random_density(E.size, 5)
    deficits = [build_bundle(E, I, MetropolisConfig(0.5, r_rej=r), QPEModel(0.3)).trace_deficit(rho)
                for r in (0, 1, 2, 4, 8)]
    assert all(d >= -1e-12 for d in deficits)
    assert all(b <= a + 1e-12 for a, b in zip(deficits, deficits[1:]))
    assert deficits[-1] < deficits[0]


def test_perfect_detailed_balance_error_vanishes(open4_bundles):
    assert epsilon_db(open4_bundles[2]["perfect"]) <= 1e-10


def test_two_bin_detailed_balance_error_positive(open4_bundles):
    assert epsilon_db(open4_bundles[2]["two-bin"]) > 1e-6


def test_perfect_infinite_temperature_fixed_point(open4):
    model, I = open4
    E = model.energies
    bundle = build_bundle(E, I, MetropolisConfig(0.0), QPEModel(0.3, "perfect"))
    rep = iterate_to_fixed_point(bundle, np.eye(E.size) / E.size, 5)
    assert rep.lambda_lead == pytest.approx(1.0, abs=1e-10)
    assert trace_distance(rep.sigma_fix, np.eye(E.size) / E.size) <= 1e-8


def test_perfect_gibbs_fixed_point_six_sites():
    model = chain_model(6, periodic=False, truncation=None)
    I = interaction_set(model, "sigma_x_sites")
    E = model.energies
    bundle = build_bundle(E, I, MetropolisConfig(0.5), QPEModel(0.3, "perfect"))
    assert np.abs(population_kernel(bundle) - classical_metropolis(E, I, bundle.config)).max() <= 1e-12
    rep = iterate_to_fixed_point(bundle, np.eye(E.size) / E.size, 0, hermitian_gap=False)
    assert rep.lambda_lead == pytest.approx(1.0, abs=1e-10)
    assert trace_distance(rep.sigma_fix, np.diag(gibbs_diagonal(E, 0.5))) <= 1e-8


def test_two_bin_fixed_point_refines_with_resolution(open4):
    # Faithful check: the distance to Gibbs should shrink as the registers refine.
    model, I = open4
    E = model.energies
    sigma = np.diag(gibbs_diagonal(E, 0.5))
    dists = []
    for nu0 in (0.2, 0.1, 0.05, 0.025):
        bundle = build_bundle(E, I, MetropolisConfig(0.5, r_rej=2), QPEModel(nu0))
        rep = iterate_to_fixed_point(bundle, np.eye(E.size) / E.size, 0)
        dists.append(trace_distance(rep.sigma_fix, sigma))
    assert all(b <= a for a, b in zip(dists, dists[1:])), dists


@pytest.mark.parametrize("mode", ["perfect", "two-bin", "two-bin-with-tail"])
def test_maps_are_completely_positive(open4, mode):
    model, I = open4
    bundle = build_bundle(model.energies, I, MetropolisConfig(0.7, r_rej=3), QPEModel(0.25, mode, p_amp=0.05))
    for S in (bundle.acceptance, bundle.rejection, bundle.total):
        assert choi_min_eig(S) >= -1e-10


def test_trace_non_increasing_on_random_states(open4_bundles):
    E, _, b = open4_bundles
    rng = np.random.default_rng(11)
    for mode in ("perfect", "two-bin"):
        bundle = b[mode]
        for _ in range(1000 // 2):
            X = rng.normal(size=(E.size, E.size)) + 1j * rng.normal(size=(E.size, E.size))
            rho = X @ X.conj().T
            rho /= np.trace(rho).real
            assert bundle.trace_deficit(rho) >= -1e-12


@settings(max_examples=15, deadline=None)
@given(beta=st.floats(0.0, 3.0), nu0=st.floats(0.25, 1.0), r=st.integers(0, 6))
def test_two_bin_invariants(open4, beta, nu0, r):
    model, I = open4
    bundle = build_bundle(model.energies, I, MetropolisConfig(beta, r_rej=r), QPEModel(nu0))
    assert bundle.kraus.completeness_residual() <= 1e-12
    res = symmetry_residuals(bundle)
    assert res["acceptance"] <= 1e-10 and res["rejection"] <= 1e-10
    assert bundle.trace_deficit(np.eye(model.energies.size) / model.energies.size) >= -1e-12


@settings(max_examples=10, deadline=None)
@given(beta=st.floats(0.0, 3.0))
def test_perfect_reduces_to_classical(open4, beta):
    model, I = open4
    bundle = build_bundle(model.energies, I, MetropolisConfig(beta), QPEModel(0.3, "perfect"))
    K = population_kernel(bundle)
    assert np.abs(K - classical_metropolis(model.energies, I, bundle.config)).max() <= 1e-12


def test_rejection_round_cap():
    with pytest.raises(CapacityError):
        MetropolisConfig(0.5, r_rej=65)


def test_config_validation():
    with pytest.raises(ValidationError):
        QPEModel(0.3, "fuzzy")
    with pytest.raises(ValidationError):
        QPEModel(0.0)
    with pytest.raises(ValidationError):
        MetropolisConfig(-1.0)
    with pytest.raises(ValidationError):
        MetropolisConfig(1.0, p=np.array([0.7, 0.7]))


def test_dimension_cap():
    model = chain_model(7, periodic=False, truncation=None)
    I = interaction_set(model, "sigma_x_sites")
    with pytest.raises(CapacityError):
        build_bundle(model.energies, I, MetropolisConfig(0.5), QPEModel(0.3))
