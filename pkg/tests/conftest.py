import numpy as np
import pytest

from thermalab.davies import interaction_set
from thermalab.spectrum import SpinChainParams, build_chain, diagonalize


def chain_model(L, periodic=True, truncation="default"):
    params = SpinChainParams(L, periodic=periodic)
    return diagonalize(build_chain(params), truncation=truncation, params=params)


def random_density(d, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = X @ X.conj().T
    return rho / np.trace(rho).real


@pytest.fixture(scope="session")
def chain8():
    return chain_model(8)


@pytest.fixture(scope="session")
def open4():
    model = chain_model(4, periodic=False, truncation=None)
    return model, interaction_set(model, "sigma_x_sites")


ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def report(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES[number] = line
        assert ok, line
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
