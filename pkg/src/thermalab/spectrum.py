"""Spin-chain Hamiltonians, exact diagonalization and rounded spectra.

The chain is

    H = g sum_i X_i + h sum_i Z_i + J sum_i Z_i Z_{i+1}

with qubit 0 the most significant bit of the computational index.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import CapacityError, ValidationError

MAX_QUBITS = 14
DEFAULT_TRIM = 0.02
BOX_WIDTH_BINS = 3.0


@dataclass(frozen=True)
class SpinChainParams:
    L: int
    g: float = 0.9045
    h: float = 0.8090
    J: float = 1.0
    periodic: bool = True

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ValidationError(f"L must be an integer >= 2, got {self.L}")
        for name in ("g", "h", "J"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"coupling {name} must be finite")


def _bonds(L: int, periodic: bool):
    bonds = [(i, i + 1) for i in range(L - 1)]
    if periodic:
        bonds.append((L - 1, 0))
    return bonds


def z_eigenvalues(L: int) -> np.ndarray:
    """Array z[x, i] = +1/-1 for bit i (qubit 0 = most significant) of index x."""
    x = np.arange(2**L)
    shifts = L - 1 - np.arange(L)
    bits = (x[:, None] >> shifts[None, :]) & 1
    return 1 - 2 * bits


def build_chain(params: SpinChainParams) -> np.ndarray:
    """Dense real-symmetric Hamiltonian of the mixed-field Ising chain.

    At L=2 with periodic closure the bond (0,1) is counted twice.
    """
    L = params.L
    if L > MAX_QUBITS:
        raise CapacityError(f"L={L} exceeds the dense limit of {MAX_QUBITS} qubits")
    dim = 2**L
    z = z_eigenvalues(L)
    diag = params.h * z.sum(axis=1).astype(float)
    for i, j in _bonds(L, params.periodic):
        diag = diag + params.J * z[:, i] * z[:, j]
    H = np.diag(diag)
    if params.g != 0.0:
        x = np.arange(dim)
        for i in range(L):
            flipped = x ^ (1 << (L - 1 - i))
            H[flipped, x] += params.g
    return H


@dataclass(frozen=True)
class SpectralModel:
    """Eigen-decomposition with an optional truncation window.

    ``eigenvalues`` and ``eigenbasis`` hold the full spectrum; ``retained`` is
    the contiguous index slice kept after truncation.
    """

    eigenvalues: np.ndarray
    eigenbasis: Optional[np.ndarray]
    truncation: Optional[tuple]
    retained: slice
    max_residual: float = 0.0
    params: Optional[SpinChainParams] = None

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def energies(self) -> np.ndarray:
        return self.eigenvalues[self.retained]

    @property
    def basis(self) -> Optional[np.ndarray]:
        if self.eigenbasis is None:
            return None
        return self.eigenbasis[:, self.retained]

    @property
    def n_retained(self) -> int:
        return int(self.energies.size)

    @classmethod
    def from_eigenvalues(cls, values: Sequence[float]) -> "SpectralModel":
        """Synthetic model without eigenvectors (no truncation)."""
        ev = np.sort(np.asarray(values, dtype=float))
        window = (float(ev[0]), float(ev[-1]))
        return cls(ev, None, window, slice(0, ev.size))


def _window_slice(ev: np.ndarray, truncation) -> tuple:
    n = ev.size
    if truncation is None:
        return slice(0, n), None
    if isinstance(truncation, str):
        if truncation != "default":
            raise ValidationError(f"unknown truncation mode {truncation!r}")
        cut = int(math.floor(DEFAULT_TRIM * n))
        sl = slice(cut, n - cut)
        return sl, (float(ev[sl][0]), float(ev[sl][-1]))
    lo, hi = (float(v) for v in truncation)
    idx = np.nonzero((ev >= lo) & (ev <= hi))[0]
    if idx.size == 0:
        raise ValidationError(f"truncation window [{lo}, {hi}] contains no eigenvalue")
    return slice(int(idx[0]), int(idx[-1]) + 1), (lo, hi)


def diagonalize(H: np.ndarray, truncation="default", params=None) -> SpectralModel:
    """Dense Hermitian eigensolve.

    Parameters
    ----------
    H : Hermitian matrix.
    truncation : ``"default"`` drops the lowest and highest 2% of
        eigenvalues, a ``(lo, hi)`` pair keeps eigenvalues inside the window,
        ``None`` keeps everything.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValidationError("H must be a square matrix")
    scale = max(float(np.max(np.abs(H))), 1.0)
    if np.max(np.abs(H - H.conj().T)) > 1e-10 * scale:
        raise ValidationError("H is not Hermitian to 1e-10")
    ev, U = scipy.linalg.eigh(H)
    resid = np.linalg.norm(H @ U - U * ev[None, :], axis=0)
    sl, window = _window_slice(ev, truncation)
    return SpectralModel(ev, U, window, sl, float(resid.max(initial=0.0)), params)


def round_index(values, nu0: float) -> np.ndarray:
    """Nearest integer multiple of ``nu0``; exact ties round toward zero."""
    x = np.asarray(values, dtype=float) / nu0
    return (np.sign(x) * np.ceil(np.abs(x) - 0.5)).astype(int)


@dataclass(frozen=True)
class RoundedSpectrum:
    """Eigenvalues binned at precision ``nu0``.

    Bin ``b`` has integer label ``ks[b]`` (energy ``ks[b] * nu0``) and owns
    retained eigenindices ``starts[b]:stops[b]``.
    """

    nu0: float
    energies: np.ndarray
    ks: np.ndarray
    starts: np.ndarray
    stops: np.ndarray
    single_bin: bool = False
    n_total: int = 0

    @property
    def labels(self) -> np.ndarray:
        return self.ks * self.nu0

    @property
    def ranks(self) -> np.ndarray:
        return self.stops - self.starts

    @property
    def n_bins(self) -> int:
        return int(self.ks.size)

    @property
    def dim(self) -> int:
        return int(self.energies.size)

    @property
    def index_k(self) -> np.ndarray:
        """Integer bin label of every retained eigenindex."""
        return np.repeat(self.ks, self.ranks)

    @property
    def rounded_energies(self) -> np.ndarray:
        return self.index_k * self.nu0

    def bin_of(self, label: float) -> int:
        k = int(round(label / self.nu0))
        pos = np.searchsorted(self.ks, k)
        if pos >= self.ks.size or self.ks[pos] != k:
            raise KeyError(f"no bin at label {label}")
        return int(pos)

    def has_bin(self, label: float) -> bool:
        try:
            self.bin_of(label)
        except KeyError:
            return False
        return True

    def indices(self, b: int) -> np.ndarray:
        return np.arange(self.starts[b], self.stops[b])


def round_spectrum(model, nu0: float) -> RoundedSpectrum:
    """Bin the retained eigenvalues of ``model`` (or a plain array) at ``nu0``."""
    if not nu0 > 0:
        raise ValidationError("nu0 must be positive")
    energies = model.energies if isinstance(model, SpectralModel) else np.sort(np.asarray(model, float))
    k = round_index(energies, nu0)
    if np.any(np.diff(k) < 0):
        raise ValidationError("eigenvalues must be sorted ascending")
    ks, starts, counts = np.unique(k, return_index=True, return_counts=True)
    stops = starts + counts
    assert np.all(starts[1:] == stops[:-1]) and counts.sum() == energies.size
    single = ks.size == 1
    if single:
        warnings.warn("nu0 exceeds the spectral span: a single bin remains", RuntimeWarning, stacklevel=2)
    n_total = model.dim if isinstance(model, SpectralModel) else energies.size
    return RoundedSpectrum(float(nu0), energies, ks, starts, stops, single, int(n_total))


def _boltzmann(energies: np.ndarray, beta: float, mult=None) -> np.ndarray:
    if beta < 0:
        raise ValidationError("beta must be non-negative")
    logw = -beta * np.asarray(energies, float)
    if mult is not None:
        logw = logw + np.log(mult)
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def gibbs_weights(rounded: RoundedSpectrum, beta: float) -> np.ndarray:
    """Normalized per-bin weights rank * exp(-beta * label)."""
    return _boltzmann(rounded.labels, beta, rounded.ranks)


def gibbs_diagonal(model, beta: float) -> np.ndarray:
    """Unrounded Gibbs populations over the retained eigenvalues."""
    energies = model.energies if isinstance(model, SpectralModel) else np.asarray(model, float)
    return _boltzmann(energies, beta)


def rounded_gibbs_diagonal(rounded: RoundedSpectrum, beta: float) -> np.ndarray:
    """Diagonal of the rounded Gibbs state over retained eigenindices."""
    return _boltzmann(rounded.rounded_energies, beta)


def box_density(rounded: RoundedSpectrum) -> Callable:
    """Box-kernel density of states with full width 3 * nu0.

    The returned function integrates to one over the real line.
    """
    energies = rounded.energies
    width = BOX_WIDTH_BINS * rounded.nu0
    n = energies.size

    def density(x):
        x = np.asarray(x, float)
        lo = np.searchsorted(energies, x - width / 2, side="left")
        hi = np.searchsorted(energies, x + width / 2, side="right")
        return (hi - lo) / (n * width)

    density.support = (float(energies[0] - width / 2), float(energies[-1] + width / 2))
    density.width = width
    return density


def density_ratio(rounded: RoundedSpectrum, window: float, region=None) -> float:
    """Largest smoothed-density ratio D(a)/D(b) over bins with |a-b| <= window.

    ``region=(lo, hi)`` restricts the anchor bin ``a`` to labels in
    ``[lo, hi]``; its partner ranges over all bins within ``window``.
    """
    labels = rounded.labels
    if window <= 0:
        raise ValidationError("window must be positive")
    dens = box_density(rounded)(labels)
    anchor = np.ones(labels.size, bool)
    if region is not None:
        anchor = (labels >= region[0]) & (labels <= region[1])
    pairs = (np.abs(labels[:, None] - labels[None, :]) <= window + 1e-12 * rounded.nu0)
    pairs &= anchor[:, None] | anchor[None, :]
    np.fill_diagonal(pairs, False)
    if not pairs.any():
        raise ValidationError("no distinct bin pairs inside the window")
    i, j = np.nonzero(pairs)
    if np.any(dens[i] == 0) or np.any(dens[j] == 0):
        raise ValidationError("zero smoothed density inside the window")
    return float(np.max(np.maximum(dens[i] / dens[j], dens[j] / dens[i])))


def flat_profile(omega):
    return np.ones_like(np.asarray(omega, float))


def tabulated_profile(omegas, values) -> Callable:
    """|f_w|^2 interpolated in |w| from a table given on w >= 0."""
    om = np.asarray(omegas, float)
    val = np.asarray(values, float)
    if np.any(om < 0) or np.any(np.diff(om) <= 0):
        raise ValidationError("table frequencies must be non-negative and increasing")

    def profile(w):
        return np.interp(np.abs(np.asarray(w, float)), om, val)

    return profile


@dataclass(frozen=True)
class ETHModel:
    delta_rmt: float
    f_profile: Callable
    density: Callable
    R: float
    dim: int = 0

    def variance(self, nu1, nu2):
        """Entry variance |f_w|^2 / (dim * D(mu)) at the midpoint mu."""
        mu = 0.5 * (np.asarray(nu1, float) + np.asarray(nu2, float))
        d = self.density(mu)
        if np.any(d <= 0):
            raise ValidationError("zero density at a transition midpoint")
        return self.f_profile(np.asarray(nu1) - np.asarray(nu2)) / (self.dim * d)


def eth_model(rounded: RoundedSpectrum, delta_rmt: float, f_profile=None, region=None) -> ETHModel:
    if not delta_rmt > 0:
        raise ValidationError("delta_rmt must be positive")
    f = flat_profile if f_profile is None else f_profile
    probe = np.linspace(0.0, delta_rmt, 17)
    if not np.allclose(f(probe), f(-probe), rtol=1e-12, atol=0):
        raise ValidationError("|f_w|^2 must be symmetric in w")
    R = density_ratio(rounded, delta_rmt, region)
    return ETHModel(float(delta_rmt), f, box_density(rounded), max(R, 1.0), rounded.dim)
