"""Gaussian block ensembles and Monte Carlo checks of their norms.

Complex entries have independent real and imaginary parts of variance V/2,
so E|g|^2 = V.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, svds

from .errors import ValidationError


@dataclass(frozen=True)
class GaussianBlockSpec:
    shape: tuple
    variance: float = 1.0
    complex_entries: bool = True
    hermitian: bool = False

    def __post_init__(self):
        if len(self.shape) != 2 or min(self.shape) < 1:
            raise ValidationError("block dims must be >= 1")
        if not self.variance > 0:
            raise ValidationError("variance must be positive")
        if self.hermitian and self.shape[0] != self.shape[1]:
            raise ValidationError("Hermitian blocks must be square")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_block(spec: GaussianBlockSpec, seed=None) -> np.ndarray:
    """One Gaussian block with E|G_ij|^2 = V (Hermitian blocks included)."""
    rng = _rng(seed)
    V = spec.variance
    if spec.complex_entries:
        G = (rng.normal(scale=np.sqrt(V / 2), size=spec.shape)
             + 1j * rng.normal(scale=np.sqrt(V / 2), size=spec.shape))
    else:
        G = rng.normal(scale=np.sqrt(V), size=spec.shape)
    if spec.hermitian:
        G = (G + G.conj().T) / np.sqrt(2)
        G = 0.5 * (G + G.conj().T)
    return G


@dataclass(frozen=True)
class ExpectedSpectrum:
    values: np.ndarray
    multiplicities: np.ndarray

    def full(self) -> np.ndarray:
        """All eigenvalues, sorted descending."""
        return np.sort(np.repeat(self.values, self.multiplicities))[::-1]


def expected_block_map(V: float, ranks, gamma_plus, gamma_minus) -> ExpectedSpectrum:
    """Closed-form eigenvalues of the Gaussian-expectation diagonal block map.

    ``gamma_plus``/``gamma_minus`` are the per-term rates gamma(w) and
    gamma(-w) (scalars or arrays over interaction terms).
    """
    r1, r2 = (int(r) for r in ranks)
    if r1 < 1 or r2 < 1:
        raise ValidationError("ranks must be >= 1")
    sp = float(np.sum(gamma_plus))
    sm = float(np.sum(gamma_minus))
    vals = np.array([0.0, -V * r1 * sm, -V * r2 * sp, -V * (r2 * sp + r1 * sm)])
    mult = np.array([1, r2 * r2 - 1, r1 * r1 - 1, 1])
    return ExpectedSpectrum(vals, mult)


def expected_block_superop(V: float, ranks, gamma_plus, gamma_minus) -> np.ndarray:
    """Heisenberg block map with every Gaussian moment replaced by its mean.

    Uses E[G X G^dag] = V Tr[X] I, E[G G^dag] = V r2 I and E[G^dag G] = V r1 I
    on the space [vec X11; vec X22].
    """
    r1, r2 = (int(r) for r in ranks)
    sp = float(np.sum(gamma_plus))
    sm = float(np.sum(gamma_minus))
    v1 = np.eye(r1).ravel(order="F")
    v2 = np.eye(r2).ravel(order="F")
    M11 = -sp * V * r2 * np.eye(r1 * r1)
    M12 = sp * V * np.outer(v1, v2)
    M21 = sm * V * np.outer(v2, v1)
    M22 = -sm * V * r1 * np.eye(r2 * r2)
    return np.block([[M11, M12], [M21, M22]])


@dataclass(frozen=True)
class MCStats:
    mean: float
    std: float
    se: float
    q10: float
    q50: float
    q90: float
    samples: np.ndarray


def _stats(samples) -> MCStats:
    s = np.asarray(samples, float)
    std = float(s.std(ddof=1)) if s.size > 1 else 0.0
    q = np.quantile(s, [0.1, 0.5, 0.9])
    return MCStats(float(s.mean()), std, std / np.sqrt(s.size), float(q[0]), float(q[1]), float(q[2]), s)


def trial_rngs(seed: int, trials: int):
    """Independent per-trial generators spawned from one root seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(trials)]


def spectral_norm_mc(shape, variance: float, trials: int, seed: int = 0) -> MCStats:
    if trials < 10:
        raise ValidationError("need at least 10 trials")
    spec = GaussianBlockSpec(tuple(shape), variance)
    norms = [np.linalg.norm(sample_block(spec, rng), 2) for rng in trial_rngs(seed, trials)]
    return _stats(norms)


def tensor_sum_norm(coeffs, Gs, Gps) -> float:
    """|| sum_i a_i G_i (x) conj(G'_i) || via the map X -> sum a_i G_i X G'_i^dag."""
    coeffs = np.asarray(coeffs, float)
    if not np.any(coeffs):
        return 0.0
    n1, m1 = Gs[0].shape
    n2, m2 = Gps[0].shape
    Gph = [G.conj().T for G in Gps]

    def mv(v):
        X = v.reshape((m1, m2), order="F")
        return sum(a * (G @ X @ H) for a, G, H in zip(coeffs, Gs, Gph)).ravel(order="F")

    def rmv(v):
        Y = v.reshape((n1, n2), order="F")
        return sum(a * (G.conj().T @ Y @ H.conj().T) for a, G, H in zip(coeffs, Gs, Gph)).ravel(order="F")

    size = (n1 * n2, m1 * m2)
    if max(size) <= 256:
        M = sum(a * np.kron(H.T, G) for a, G, H in zip(coeffs, Gs, Gph))
        return float(np.linalg.norm(M, 2))
    op = LinearOperator(size, matvec=mv, rmatvec=rmv, dtype=complex)
    v0 = np.ones(min(size)) / np.sqrt(min(size))
    s = svds(op, k=1, return_singular_vectors=False, v0=v0 if size[0] <= size[1] else None, tol=1e-10)
    return float(s[0])


def product_sum_norm(coeffs, Gs, Gps) -> float:
    M = sum(a * (G @ H) for a, G, H in zip(coeffs, Gs, Gps))
    return float(np.linalg.norm(M, 2)) if np.any(coeffs) else 0.0


def sum_concentration_mc(kind: str, counts: Sequence[int], coefficients, dims, trials: int, seed: int = 0,
                         variance: float = 1.0) -> list:
    """Norms of sum_i a_i G_i (x) conj(G'_i) (``tensor``) or sum_i a_i G_i G'_i (``product``).

    ``coefficients(n)`` returns the length-n coefficient vector.  Returns one
    summary dict per count with mean, standard error, the ratio to the
    first count's mean and the per-trial ``samples``.
    """
    if kind not in ("tensor", "product"):
        raise ValidationError(f"unknown kind {kind!r}")
    d1, d2 = dims
    rows = []
    base = None
    for n in counts:
        coeffs = np.asarray(coefficients(n), float)
        norms = []
        for rng in trial_rngs(seed + 7919 * int(n), trials):
            if kind == "tensor":
                Gs = [sample_block(GaussianBlockSpec((d1, d2), variance), rng) for _ in range(n)]
                Gps = [sample_block(GaussianBlockSpec((d1, d2), variance), rng) for _ in range(n)]
                norms.append(tensor_sum_norm(coeffs, Gs, Gps))
            else:
                Gs = [sample_block(GaussianBlockSpec((d1, d2), variance), rng) for _ in range(n)]
                Gps = [sample_block(GaussianBlockSpec((d2, d1), variance), rng) for _ in range(n)]
                norms.append(product_sum_norm(coeffs, Gs, Gps))
        st = _stats(norms)
        if base is None:
            base = st.mean if st.mean > 0 else 1.0
        rows.append({"count": int(n), "mean": st.mean, "se": st.se, "ratio": st.mean / base,
                     "l2_coeff": float(np.sqrt(np.sum(coeffs**2))), "samples": st.samples})
    return rows


def fit_exponent(x, y) -> float:
    """Slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
