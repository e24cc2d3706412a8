"""Classical chains on energy bins: ETH rates, Metropolis kernels, conductance.

Discrete chains are row-stochastic; generators have zero row sums.  Both
carry their stationary measure ``pi``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .bath import BathProfile, gamma
from .errors import ValidationError
from .spectrum import ETHModel, RoundedSpectrum, gibbs_weights

ROW_TOL = 1e-12
DB_TOL = 1e-10
EXHAUSTIVE_MAX = 20


@dataclass
class SpectralChain:
    states: np.ndarray
    kernel: np.ndarray
    pi: np.ndarray
    kind: str = "chain"
    step: float = 0.0
    reversible: bool = False
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, float)
        self.kernel = np.asarray(self.kernel, float)
        self.pi = np.asarray(self.pi, float)
        n = self.states.size
        if self.kernel.shape != (n, n) or self.pi.shape != (n,):
            raise ValidationError("kernel, pi and states disagree in size")
        if self.kind not in ("chain", "generator"):
            raise ValidationError(f"unknown chain kind {self.kind!r}")
        target = 1.0 if self.kind == "chain" else 0.0
        scale = 1.0 if self.kind == "chain" else max(1.0, np.abs(self.kernel).max())
        if np.abs(self.kernel.sum(axis=1) - target).max() > ROW_TOL * scale:
            raise ValidationError(f"rows of a {self.kind} must sum to {target}")
        off = self.kernel - np.diag(np.diag(self.kernel))
        if off.min() < 0 or (self.kind == "chain" and np.diag(self.kernel).min() < -ROW_TOL):
            raise ValidationError("negative transition weight")
        if self.pi.min() < 0 or abs(self.pi.sum() - 1) > 1e-12:
            raise ValidationError("pi must be a probability vector")
        if self.reversible and reversibility_residual(self) > DB_TOL:
            raise ValidationError("detailed balance flag set but pi_i K_ij != pi_j K_ji")

    @property
    def n(self) -> int:
        return int(self.states.size)

    def flow(self) -> np.ndarray:
        """F_ij = pi_i K_ij (off-diagonal part)."""
        F = self.pi[:, None] * self.kernel
        np.fill_diagonal(F, 0.0)
        return F

    def as_chain(self) -> "SpectralChain":
        """Uniformized discrete chain P = I + K/q for a generator (identity for chains)."""
        if self.kind == "chain":
            return self
        q = self.uniform_rate()
        P = np.eye(self.n) + self.kernel / q
        return SpectralChain(self.states, P, self.pi, "chain", self.step, self.reversible, dict(self.info))

    def uniform_rate(self) -> float:
        q = float(np.max(-np.diag(self.kernel)))
        return q if q > 0 else 1.0


def reversibility_residual(chain: SpectralChain) -> float:
    """max |pi_i K_ij - pi_j K_ji| relative to the largest flow."""
    F = chain.pi[:, None] * chain.kernel
    scale = max(np.abs(F).max(), 1e-300)
    return float(np.abs(F - F.T).max() / scale)


def stationary_distribution(kernel: np.ndarray, kind: str = "chain") -> np.ndarray:
    """Left null vector of K - I (chain) or K (generator), normalized."""
    K = np.asarray(kernel, float)
    M = K - np.eye(K.shape[0]) if kind == "chain" else K
    _, s, vh = scipy.linalg.svd(M.T)
    v = np.abs(vh[-1])
    return v / v.sum()


def _check_window(rounded: RoundedSpectrum, delta: float):
    if rounded.n_bins < 2:
        raise ValidationError("need at least two bins")
    if not delta >= rounded.nu0 * (1 - 1e-12):
        raise ValidationError("window must span at least one bin")


def _window_variance(eth: ETHModel, a, b, inside) -> np.ndarray:
    """ETH entry variance on the pairs flagged by ``inside``, zero elsewhere."""
    V = np.zeros(inside.shape)
    i, j = np.nonzero(inside)
    V[i, j] = eth.variance(a[i], b[j])
    return V


def eth_generator(rounded: RoundedSpectrum, eth: ETHModel, bath: BathProfile, n_terms: int) -> SpectralChain:
    """Expected transfer rates between bins under the ETH Gaussian model.

    Rate i -> j is gamma(nu_i - nu_j) |a| V(i, j) Tr[P_j] for bins within the
    ETH window.
    """
    labels = rounded.labels
    _check_window(rounded, eth.delta_rmt)
    if np.any(eth.density(labels) <= 0):
        raise ValidationError("zero density at a bin inside the spectrum")
    diff = labels[:, None] - labels[None, :]
    inside = np.abs(diff) <= eth.delta_rmt + 1e-12 * rounded.nu0
    np.fill_diagonal(inside, False)
    V = _window_variance(eth, labels, labels, inside)
    K = np.where(inside, gamma(bath, diff) * n_terms * V * rounded.ranks[None, :], 0.0)
    np.fill_diagonal(K, -K.sum(axis=1))
    pi = gibbs_weights(rounded, bath.beta)
    return SpectralChain(labels, K, pi, "generator", eth.delta_rmt, True)


def metropolis_kernel(energies, weights, beta: float) -> np.ndarray:
    """K_ij = T_ij min(1, e^{-beta (E_j - E_i)}) off the diagonal; the rest stays put.

    ``weights`` T must have row sums at most one.
    """
    E = np.asarray(energies, float)
    T = np.asarray(weights, float)
    dE = E[None, :] - E[:, None]
    acc = np.exp(-beta * np.clip(dE, 0.0, None))
    K = T * acc
    np.fill_diagonal(K, 0.0)
    move = K.sum(axis=1)
    if move.max() > 1 + 1e-12:
        raise ValidationError("transition weights exceed unit row mass")
    K[np.diag_indices_from(K)] = 1.0 - move
    return K


def move_rates(rounded: RoundedSpectrum, eth: ETHModel, beta: float, delta: float) -> np.ndarray:
    """Unnormalized Metropolis move weights between bins within ``delta``."""
    labels = rounded.labels
    diff = labels[None, :] - labels[:, None]
    inside = np.abs(diff) <= delta + 1e-12 * rounded.nu0
    np.fill_diagonal(inside, False)
    V = _window_variance(eth, labels, labels, inside)
    return np.where(inside, V * rounded.ranks[None, :] * np.exp(-beta * np.clip(diff, 0, None)), 0.0)


def moving_rate(rounded: RoundedSpectrum, eth: ETHModel, beta: float, delta: float) -> np.ndarray:
    """r(nu1): expected move weight from each bin to eigenvalues within ``delta``.

    Sums over unrounded eigenvalues nu2 != members of the source bin.
    """
    labels = rounded.labels
    E = rounded.energies
    diff = E[None, :] - labels[:, None]
    inside = np.abs(diff) <= delta
    own = rounded.index_k[None, :] == rounded.ks[:, None]
    inside &= ~own
    V = _window_variance(eth, labels, E, inside)
    return np.sum(np.where(inside, V * np.exp(-beta * np.clip(diff, 0, None)), 0.0), axis=1)


def metropolis_chain(rounded: RoundedSpectrum, eth: ETHModel, beta: float, delta: Optional[float] = None,
                     leveling: bool = False) -> SpectralChain:
    """Bin-level Metropolis chain, scaled so the busiest row moves with probability 1/2.

    With ``leveling`` every row is multiplied by p(nu1) = min r / r(nu1), which
    equalizes the move probability up to the binning error; the stationary
    measure then becomes pi_i / p_i.
    """
    delta = eth.delta_rmt if delta is None else float(delta)
    _check_window(rounded, delta)
    W = move_rates(rounded, eth, beta, delta)
    pi = gibbs_weights(rounded, beta)
    info = {}
    if leveling:
        r = moving_rate(rounded, eth, beta, delta)
        if np.any(r <= 0):
            raise ValidationError("a bin has no moves inside the window")
        p = r.min() / r
        W = W * p[:, None]
        pi = pi / p
        pi = pi / pi.sum()
        info["level"] = p
    W = W * (0.5 / W.sum(axis=1).max())
    K = W.copy()
    np.fill_diagonal(K, 1.0 - W.sum(axis=1))
    return SpectralChain(rounded.labels, K, pi, "chain", delta, True, info)


@dataclass(frozen=True)
class Cut:
    phi: float
    members: np.ndarray
    exhaustive: bool


def _cut_values(x: np.ndarray, pi: np.ndarray, F: np.ndarray):
    mass = x @ pi
    inner = np.einsum("ij,ij->i", x @ F, x)
    return mass, x @ F.sum(axis=1) - inner


def conductance(chain: SpectralChain, family: str = "auto") -> Cut:
    """Bottleneck ratio min_{pi(A) <= 1/2} Q(A, A^c) / pi(A).

    ``family`` is ``all`` (exhaustive, n <= 20), ``contiguous`` or ``auto``.
    For generators the flow uses the rates directly.
    """
    n = chain.n
    if family == "auto":
        family = "all" if n <= EXHAUSTIVE_MAX else "contiguous"
    F = chain.flow()
    pi = chain.pi
    best, arg = np.inf, None
    if family == "all":
        if n > EXHAUSTIVE_MAX:
            raise ValidationError(f"exhaustive cuts limited to {EXHAUSTIVE_MAX} states")
        bits = 1 << np.arange(n)
        total = 1 << n
        chunk = 1 << 16
        for start in range(1, total, chunk):
            codes = np.arange(start, min(start + chunk, total))
            x = ((codes[:, None] & bits[None, :]) > 0).astype(float)
            mass, q = _cut_values(x, pi, F)
            ok = mass <= 0.5 + 1e-12
            if not ok.any():
                continue
            ratio = np.where(ok, q / np.where(ok, mass, 1.0), np.inf)
            i = int(np.argmin(ratio))
            if ratio[i] < best:
                best, arg = float(ratio[i]), x[i].astype(bool)
    elif family == "contiguous":
        # Q([a, b)) = outflow of rows a..b-1 minus the flow kept inside the block
        C = np.zeros((n + 1, n + 1))
        C[1:, 1:] = F.cumsum(0).cumsum(1)
        rows = np.concatenate([[0.0], F.sum(axis=1).cumsum()])
        cum_pi = np.concatenate([[0.0], pi.cumsum()])
        a, b = np.triu_indices(n + 1, k=1)
        inner = C[b, b] - C[a, b] - C[b, a] + C[a, a]
        q = rows[b] - rows[a] - inner
        mass = cum_pi[b] - cum_pi[a]
        ok = (mass <= 0.5 + 1e-12) & (mass > 0)
        ratio = np.where(ok, q / np.where(ok, mass, 1.0), np.inf)
        i = int(np.argmin(ratio))
        best, arg = float(ratio[i]), np.zeros(n, bool)
        arg[a[i]:b[i]] = True
    else:
        raise ValidationError(f"unknown cut family {family!r}")
    return Cut(best, np.flatnonzero(arg), family == "all")


def second_eigenvalue(chain: SpectralChain) -> float:
    """Second largest eigenvalue of a reversible discrete chain."""
    P = chain.as_chain().kernel
    s = np.sqrt(chain.pi)
    if s.min() <= 0:
        raise ValidationError("pi must be strictly positive")
    S = s[:, None] * P / s[None, :]
    ev = np.linalg.eigvalsh(0.5 * (S + S.T))
    return float(ev[-2])


@dataclass(frozen=True)
class CheegerReport:
    lambda2: float
    phi: float
    lower: float
    upper: float
    holds: bool


def cheeger_check(chain: SpectralChain, family: str = "auto", tol: float = 1e-12) -> CheegerReport:
    """Check 1 - 2 phi <= lambda_2 <= 1 - phi^2 / 2 on the (uniformized) chain."""
    if reversibility_residual(chain) > DB_TOL:
        raise ValidationError("Cheeger bounds need a reversible chain")
    P = chain.as_chain()
    lam = second_eigenvalue(P)
    phi = conductance(P, family).phi
    lo, hi = 1 - 2 * phi, 1 - phi**2 / 2
    return CheegerReport(lam, phi, lo, hi, bool(lo - tol <= lam <= hi + tol))


def spectral_gap(chain: SpectralChain) -> float:
    """1 - lambda_2 for chains; the generator gap for generators."""
    if chain.kind == "chain":
        return 1.0 - second_eigenvalue(chain)
    return chain.uniform_rate() * (1.0 - second_eigenvalue(chain))


# ---- density models for the lambda_RW study ----

def truncated_gaussian_grid(delta_spec: float, nu0: float, cutoff: float = 3.0):
    """Bin labels on [-cutoff, cutoff] * delta_spec with Gaussian masses."""
    k = np.arange(-int(np.floor(cutoff * delta_spec / nu0)), int(np.floor(cutoff * delta_spec / nu0)) + 1)
    x = k * nu0
    return x, np.exp(-0.5 * (x / delta_spec) ** 2)


def dumbbell_grid(separation: float, width: float, nu0: float, cutoff: float = 3.0):
    """Two Gaussian bumps at +-separation/2 (a bimodal density)."""
    half = separation / 2 + cutoff * width
    k = np.arange(-int(np.floor(half / nu0)), int(np.floor(half / nu0)) + 1)
    x = k * nu0
    m = np.exp(-0.5 * ((x - separation / 2) / width) ** 2) + np.exp(-0.5 * ((x + separation / 2) / width) ** 2)
    return x, m


def table_grid(labels, masses):
    x = np.asarray(labels, float)
    m = np.asarray(masses, float)
    if x.shape != m.shape or x.size < 2 or np.any(np.diff(x) <= 0) or np.any(m <= 0):
        raise ValidationError("table needs increasing labels and positive masses")
    return x, m


def heat_bath_walk(labels, masses, beta: float, delta: float) -> SpectralChain:
    """Average of pairwise conditional expectations at every step up to ``delta``.

    Each of the m = 2 floor(delta / nu0) pairs (i, i +- s) resamples from the
    stationary measure restricted to the pair; pairs leaving the grid act as
    the identity.
    """
    x = np.asarray(labels, float)
    n = x.size
    nu0 = float(np.min(np.diff(x)))
    logw = np.log(np.asarray(masses, float)) - beta * x
    pi = np.exp(logw - logw.max())
    pi /= pi.sum()
    steps = int(np.floor(delta / nu0 + 1e-9))
    if steps < 1:
        raise ValidationError("window must span at least one bin")
    m = 2 * steps
    K = np.zeros((n, n))
    for s in range(1, min(steps, n - 1) + 1):
        i = np.arange(n - s)
        j = i + s
        pij = pi[j] / (pi[i] + pi[j])
        K[i, j] += pij / m
        K[j, i] += (1 - pij) / m
    np.fill_diagonal(K, 0.0)
    np.fill_diagonal(K, 1.0 - K.sum(axis=1))
    return SpectralChain(x, K, pi, "chain", float(delta), True)


@dataclass(frozen=True)
class ScalingFit:
    deltas: np.ndarray
    gaps: np.ndarray
    phis: np.ndarray
    exponent: float


def lambda_rw_scaling(deltas, beta: float = 0.0, delta_spec: float = 1.0, nu0: Optional[float] = None,
                      grid=None) -> ScalingFit:
    """Gap of the heat-bath walk against the window, with the log-log slope."""
    deltas = np.asarray(deltas, float)
    if deltas.size < 4:
        raise ValidationError("need at least four window values")
    if grid is None:
        nu0 = 0.01 * delta_spec if nu0 is None else nu0
        grid = truncated_gaussian_grid(delta_spec, nu0)
    x, m = grid
    gaps, phis = [], []
    for d in deltas:
        ch = heat_bath_walk(x, m, beta, d)
        gaps.append(spectral_gap(ch))
        phis.append(conductance(ch, "contiguous").phi)
    gaps = np.array(gaps)
    slope = float(np.polyfit(np.log(deltas), np.log(gaps), 1)[0])
    return ScalingFit(deltas, gaps, np.array(phis), slope)
