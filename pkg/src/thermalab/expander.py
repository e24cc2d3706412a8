"""Local block Lindbladians on pairs of energy bins.

All maps here are in the Heisenberg picture and act on operators supported
on a few bin blocks.  For bins ``nu1 > nu2`` the diagonal sector holds
``X[1,1]`` and ``X[2,2]``; the off-diagonal sector with displacement ``w'``
holds ``X[1,1']`` and ``X[2,2']`` where ``1'`` is the bin at ``nu1 + w'``.
With ``G = P1 A P2`` the rates are gamma(w) for lowering ``nu1 -> nu2``
and gamma(-w) for raising.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from . import bath as bathmod
from .davies import InteractionSet, family_strings, energy_basis_ops
from .errors import CapacityError, SectorError, ThermalabError, ValidationError
from .rmt import GaussianBlockSpec, sample_block
from .spectrum import RoundedSpectrum, SpinChainParams, build_chain, diagonalize, round_spectrum, rounded_gibbs_diagonal
from .superop import Superoperator, WeightedMetric, spectrum_of, weighted_norm

SECTOR_MAX = 40000
TAG = "energy"


@dataclass(frozen=True)
class BlockSector:
    nu1: float
    nu2: float
    omega_p: float = 0.0

    def __post_init__(self):
        if self.nu1 < self.nu2:
            raise ValidationError("sector requires nu1 >= nu2")

    @property
    def omega(self) -> float:
        return self.nu1 - self.nu2


@dataclass(frozen=True)
class ExpanderReport:
    gap: float
    expected_gap: float
    deviation: float
    expander_ratio: float


def _bin(rounded: RoundedSpectrum, label: float) -> np.ndarray:
    try:
        return rounded.indices(rounded.bin_of(label))
    except KeyError:
        raise SectorError(f"no bin at energy {label:g}") from None


def _check_multiple(rounded: RoundedSpectrum, value: float, name: str):
    x = value / rounded.nu0
    if abs(x - round(x)) > 1e-9:
        raise ValidationError(f"{name} must be a multiple of nu0")


def _rates(rates, omega: float):
    """(gamma(w), gamma(-w)) from a pair, a BathProfile or a constant."""
    if isinstance(rates, bathmod.BathProfile):
        return float(bathmod.gamma(rates, omega)), float(bathmod.gamma(rates, -omega))
    if np.ndim(rates) == 0:
        return float(rates), float(rates)
    gp, gm = rates
    return float(gp), float(gm)


def _blocks_from(interactions, rows, cols) -> np.ndarray:
    if isinstance(interactions, InteractionSet):
        return interactions.ops[:, rows][:, :, cols]
    return np.asarray(interactions)


def _kron_sum(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """sum_a kron(X_a, Y_a)."""
    a, i, j = X.shape
    _, k, l = Y.shape
    return np.einsum("aij,akl->ikjl", X, Y).reshape(i * k, j * l)


def _left_right(Kl: np.ndarray, Kr: np.ndarray) -> np.ndarray:
    """Matrix of X -> Kl X + X Kr."""
    return np.kron(np.eye(Kr.shape[0]), Kl) + np.kron(Kr.T, np.eye(Kl.shape[0]))


def block_lindbladian_diag(rounded: RoundedSpectrum, interactions, rates, sector: BlockSector) -> Superoperator:
    """Diagonal-sector block map on [vec X11; vec X22].

    ``interactions`` is an InteractionSet in the retained energy basis or an
    array of blocks ``G_a`` with shape (count, rank1, rank2).
    """
    if sector.omega_p != 0:
        raise ValidationError("use block_lindbladian_offdiag for nonzero displacement")
    if sector.nu1 == sector.nu2:
        raise ValidationError("diagonal sector needs two distinct bins")
    _check_multiple(rounded, sector.omega, "omega")
    i1, i2 = _bin(rounded, sector.nu1), _bin(rounded, sector.nu2)
    r1, r2 = i1.size, i2.size
    if r1 * r2 > SECTOR_MAX:
        raise CapacityError(f"sector rank product {r1 * r2} exceeds {SECTOR_MAX}")
    G = _blocks_from(interactions, i1, i2)
    if G.shape[1:] != (r1, r2):
        raise ValidationError(f"blocks have shape {G.shape[1:]}, expected {(r1, r2)}")
    gp, gm = _rates(rates, sector.omega)
    Gh = G.conj().transpose(0, 2, 1)
    K1 = np.einsum("aij,akj->ik", G, G.conj())   # sum G G^dag
    K2 = np.einsum("aji,ajk->ik", G.conj(), G)   # sum G^dag G
    M11 = -0.5 * gp * _left_right(K1, K1)
    M12 = gp * _kron_sum(G.conj(), G)            # X22 -> G X22 G^dag
    M21 = gm * _kron_sum(G.transpose(0, 2, 1), Gh)  # X11 -> G^dag X11 G
    M22 = -0.5 * gm * _left_right(K2, K2)
    M = np.block([[M11, M12], [M21, M22]]).astype(complex)
    blocks = ((i1, i1), (i2, i2))
    return Superoperator(M, rounded.dim, blocks, TAG, frozenset({"heisenberg", "diag_sector"}))


def block_lindbladian_offdiag(rounded: RoundedSpectrum, interactions, rates, sector: BlockSector) -> Superoperator:
    """Off-diagonal sector map on [vec X11'; vec X22'].

    Gaussian input is a pair ``(G12, G1p2p)`` of block arrays.
    """
    if sector.omega_p == 0:
        raise ValidationError("displacement 0 is the diagonal sector; use block_lindbladian_diag")
    _check_multiple(rounded, sector.omega, "omega")
    _check_multiple(rounded, sector.omega_p, "omega_p")
    i1, i2 = _bin(rounded, sector.nu1), _bin(rounded, sector.nu2)
    j1, j2 = _bin(rounded, sector.nu1 + sector.omega_p), _bin(rounded, sector.nu2 + sector.omega_p)
    if i1.size * j1.size + i2.size * j2.size > 2 * SECTOR_MAX:
        raise CapacityError("off-diagonal sector too large")
    if isinstance(interactions, InteractionSet):
        A = _blocks_from(interactions, i1, i2)
        B = _blocks_from(interactions, j1, j2)
    else:
        A, B = (np.asarray(x) for x in interactions)
    gp, gm = _rates(rates, sector.omega)
    Ah = A.conj().transpose(0, 2, 1)
    KA1 = np.einsum("aij,akj->ik", A, A.conj())
    KA2 = np.einsum("aji,ajk->ik", A.conj(), A)
    KB1 = np.einsum("aij,akj->ik", B, B.conj())
    KB2 = np.einsum("aji,ajk->ik", B.conj(), B)
    M11 = -0.5 * gp * _left_right(KA1, KB1)
    M12 = gp * _kron_sum(B.conj(), A)                    # X22' -> A X B^dag
    M21 = gm * _kron_sum(B.transpose(0, 2, 1), Ah)      # X11' -> A^dag X B
    M22 = -0.5 * gm * _left_right(KA2, KB2)
    M = np.block([[M11, M12], [M21, M22]]).astype(complex)
    blocks = ((i1, j1), (i2, j2))
    return Superoperator(M, rounded.dim, blocks, TAG, frozenset({"heisenberg", "offdiag_sector"}))


def sector_stationary(L: Superoperator) -> np.ndarray:
    """Null vector of the Schroedinger-picture (trace adjoint) map as an operator."""
    w, V = np.linalg.eig(L.matrix.conj().T)
    v = V[:, np.argmin(np.abs(w))]
    X = L.unvectorize(v)
    return X / np.trace(X)


def hatted_expectation(L: Superoperator) -> Superoperator:
    """Drop every cross term, keeping population transfers and pure decay."""
    if L.basis_tag != TAG:
        raise ValidationError(f"basis mismatch: expected {TAG!r}, got {L.basis_tag!r}")
    ro, co = L.entry_indices()
    keep = (ro[:, None] == co[:, None]) & (ro[None, :] == co[None, :])
    keep |= (ro[:, None] == ro[None, :]) & (co[:, None] == co[None, :])
    return L.with_matrix(np.where(keep, L.matrix, 0), L.flags | {"hatted"})


def sector_metric(rounded: RoundedSpectrum, beta: float) -> WeightedMetric:
    return WeightedMetric(rounded_gibbs_diagonal(rounded, beta), "sigma")


def sector_gap(L: Superoperator, metric: Optional[WeightedMetric] = None) -> float:
    """Gap of a diagonal sector (-second eigenvalue) or -lambda_max off the diagonal."""
    ev = np.real(spectrum_of(L, metric))
    if "offdiag_sector" in L.flags:
        return float(-ev[0])
    return float(-ev[1])


def deviation_norm(L: Superoperator, metric: WeightedMetric) -> float:
    return weighted_norm(L - hatted_expectation(L), metric)


def expander_report(L: Superoperator, metric: WeightedMetric) -> ExpanderReport:
    E = hatted_expectation(L)
    gap = sector_gap(L, metric)
    egap = sector_gap(E, metric)
    dev = weighted_norm(L - E, metric)
    ratio = dev / egap if egap > 0 else math.inf
    return ExpanderReport(gap, egap, dev, ratio)


def gaussian_blocks(shape, n_terms: int, variance: float, rng) -> np.ndarray:
    spec = GaussianBlockSpec(tuple(shape), variance)
    return np.array([sample_block(spec, rng) for _ in range(n_terms)])


def mid_spectrum_sector(rounded: RoundedSpectrum, omega: float, center=None) -> BlockSector:
    """Sector (nu2 + omega, nu2) with nu2 the bin closest to ``center`` (median energy)."""
    c = float(np.median(rounded.energies)) if center is None else float(center)
    labels = rounded.labels
    k = int(round(omega / rounded.nu0))
    order = np.argsort(np.abs(labels - c), kind="stable")
    for b in order:
        if rounded.has_bin(labels[b] + k * rounded.nu0):
            nu2 = float(labels[b])
            return BlockSector(nu2 + k * rounded.nu0, nu2)
    raise SectorError("no bin pair at the requested separation")


# ----------------------------------------------------------------- scans

SCAN_DEFAULTS = {
    "L": [8],
    "g": 0.9045,
    "h": 0.8090,
    "J": 1.0,
    "periodic": True,
    "nu0": 0.5,
    "omega": 0.5,
    "omega_prime": [0.0],
    "n_terms": [1, 2, 3, 4, 5, 6, 7, 8],
    "family": "sigma_x_sites",
    "strings": None,
    "mode": "chain",
    "rates": "constant",
    "gamma_const": 1.0,
    "beta": 0.0,
    "delta_b": 1.0,
    "variance": 1.0,
    "seeds": [0],
    "center": None,
}


@functools.lru_cache(maxsize=4)
def _chain_data(L, g, h, J, periodic, nu0):
    params = SpinChainParams(L, g, h, J, periodic)
    model = diagonalize(build_chain(params), params=params)
    return model, round_spectrum(model, nu0)


def _scan_point(cfg: dict, L: int, n_terms: int, omega_p: float, seed: int) -> dict:
    row = {"L": L, "n_terms": n_terms, "omega": cfg["omega"], "omega_prime": omega_p, "seed": seed}
    try:
        model, rounded = _chain_data(L, cfg["g"], cfg["h"], cfg["J"], cfg["periodic"], cfg["nu0"])
        base = mid_spectrum_sector(rounded, cfg["omega"], cfg["center"])
        sector = BlockSector(base.nu1, base.nu2, omega_p)
        beta = cfg["beta"] if cfg["rates"] == "bath" else 0.0
        rates = bathmod.BathProfile(cfg["beta"], cfg["delta_b"]) if cfg["rates"] == "bath" else cfg["gamma_const"]
        rng = np.random.default_rng([seed, L, n_terms])
        i1, i2 = _bin(rounded, sector.nu1), _bin(rounded, sector.nu2)
        if cfg["mode"] == "gaussian":
            inter = gaussian_blocks((i1.size, i2.size), n_terms, cfg["variance"], rng)
            if omega_p != 0:
                j1 = _bin(rounded, sector.nu1 + omega_p)
                j2 = _bin(rounded, sector.nu2 + omega_p)
                inter = (inter, gaussian_blocks((j1.size, j2.size), n_terms, cfg["variance"], rng))
        else:
            strings = cfg["strings"] or family_strings(L, cfg["family"], cfg["periodic"])
            if n_terms > len(strings):
                raise ValidationError(f"only {len(strings)} interaction strings available")
            inter = InteractionSet(energy_basis_ops(model, strings[:n_terms]), cfg["family"])
        if omega_p == 0:
            blk = block_lindbladian_diag(rounded, inter, rates, sector)
        else:
            blk = block_lindbladian_offdiag(rounded, inter, rates, sector)
        rep = expander_report(blk, sector_metric(rounded, beta))
        row.update(nu1=sector.nu1, nu2=sector.nu2, rank1=int(i1.size), rank2=int(i2.size), **asdict(rep), error="")
    except ThermalabError as exc:
        row.update(nu1=math.nan, nu2=math.nan, rank1=0, rank2=0, gap=math.nan, expected_gap=math.nan,
                   deviation=math.nan, expander_ratio=math.nan, error=f"{type(exc).__name__}: {exc}")
    return row


def scan_points(config: dict):
    cfg = dict(SCAN_DEFAULTS)
    cfg.update(config or {})
    return cfg, list(itertools.product(cfg["L"], cfg["n_terms"], cfg["omega_prime"], cfg["seeds"]))


def scan_gaps(config: dict, jobs: int = 1) -> list:
    """One report row per (L, n_terms, omega_prime, seed) grid point.

    An empty config (or an empty grid) yields an empty table.  Per-point
    library errors are recorded in the ``error`` column.
    """
    if not config:
        return []
    cfg, points = scan_points(config)
    return _run(cfg, points, jobs) if points else []


def _run(cfg, points, jobs):
    if jobs <= 1 or len(points) == 1:
        return [_scan_point(cfg, *p) for p in points]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_scan_point, cfg, *p) for p in points]
        return [f.result() for f in futures]


def fit_linear(x, y):
    """Least-squares line; returns (slope, intercept, R^2)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)
