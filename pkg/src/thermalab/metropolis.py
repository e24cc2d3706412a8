"""Quantum Metropolis maps with a finite-resolution energy measurement.

Everything lives in the energy eigenbasis of the system (Schroedinger
picture, column-major vectorization).  The first energy register is
treated as measured, so every map splits into classical branches labelled
by the first reading.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import CapacityError, ConvergenceError, ValidationError
from .randomwalk import metropolis_kernel
from .spectrum import gibbs_diagonal
from .superop import (Superoperator, WeightedMetric, hermitian_split, one_one_norm_lower, spectrum_of, unvec,
                      vec)

MAX_DIM = 64
MAX_REJECT = 64
CLUSTER_TOL = 1e-9


@dataclass(frozen=True)
class QPEModel:
    """Energy-measurement profile.

    ``perfect`` projects onto exact eigenvalues (clustered at 1e-9);
    ``two-bin`` splits amplitude sqrt(1-x), sqrt(x) between the registers
    bracketing E/nu0; ``two-bin-with-tail`` mixes in a uniform residue of
    mass ``p_amp`` (or exp(-c r_amp) when ``r_amp`` is set).
    """

    nu0: float
    mode: str = "two-bin"
    p_amp: float = 0.0
    r_amp: Optional[int] = None
    c: float = 1.0

    def __post_init__(self):
        if self.mode not in ("perfect", "two-bin", "two-bin-with-tail"):
            raise ValidationError(f"unknown QPE mode {self.mode!r}")
        if not self.nu0 > 0:
            raise ValidationError("nu0 must be positive")
        if not 0 <= self.tail_mass <= 1:
            raise ValidationError("p_amp must lie in [0, 1]")

    @property
    def tail_mass(self) -> float:
        if self.mode != "two-bin-with-tail":
            return 0.0
        if self.r_amp is not None:
            return float(np.exp(-self.c * self.r_amp))
        return float(self.p_amp)


@dataclass(frozen=True)
class MetropolisConfig:
    beta: float
    p: Optional[np.ndarray] = None
    r_rej: int = 1

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError("beta must be non-negative")
        if int(self.r_rej) != self.r_rej or self.r_rej < 0:
            raise ValidationError("r_rej must be a non-negative integer")
        if self.r_rej > MAX_REJECT:
            raise CapacityError(f"r_rej limited to {MAX_REJECT}")
        if self.p is not None:
            p = np.asarray(self.p, float)
            if p.ndim != 1 or p.min() < 0 or abs(p.sum() - 1) > 1e-12:
                raise ValidationError("p(a) must be a probability vector")

    def weights(self, count: int) -> np.ndarray:
        if self.p is None:
            return np.full(count, 1.0 / count)
        p = np.asarray(self.p, float)
        if p.size != count:
            raise ValidationError("p(a) length differs from the number of interactions")
        return p


@dataclass(frozen=True)
class QPEKraus:
    """Register energies ``labels`` and amplitudes ``alpha[p, k]`` (real, >= 0)."""

    labels: np.ndarray
    alpha: np.ndarray

    def operators(self) -> np.ndarray:
        return np.array([np.diag(a) for a in self.alpha.T])

    def completeness_residual(self) -> float:
        return float(np.abs((self.alpha**2).sum(axis=1) - 1).max())


def cluster_energies(energies, tol: float = CLUSTER_TOL):
    """Group sorted energies whose gaps are below ``tol``; returns (labels, group index)."""
    E = np.asarray(energies, float)
    group = np.concatenate([[0], np.cumsum(np.diff(E) > tol)])
    labels = np.array([E[group == g].mean() for g in range(group[-1] + 1)])
    return labels, group


def qpe_kraus(energies, qpe: QPEModel) -> QPEKraus:
    E = np.asarray(energies, float)
    if qpe.mode == "perfect":
        labels, group = cluster_energies(E)
        alpha = np.zeros((E.size, labels.size))
        alpha[np.arange(E.size), group] = 1.0
        return QPEKraus(labels, alpha)
    y = E / qpe.nu0
    lo = np.floor(y)
    x = y - lo
    k0 = int(lo.min())
    k1 = int(np.ceil(y.max()))
    ks = np.arange(k0, k1 + 1)
    prob = np.zeros((E.size, ks.size))
    rows = np.arange(E.size)
    prob[rows, (lo - k0).astype(int)] += 1 - x
    hi = np.minimum((lo - k0).astype(int) + 1, ks.size - 1)
    prob[rows, hi] += np.where(x > 0, x, 0.0)
    t = qpe.tail_mass
    if t > 0:
        prob = (1 - t) * prob + t / ks.size
    return QPEKraus(ks * qpe.nu0, np.sqrt(prob))


def _guard(n: int):
    if n > MAX_DIM:
        raise CapacityError(f"full Metropolis maps limited to dim <= {MAX_DIM}, got {n}")


def _ops(interactions) -> np.ndarray:
    ops = getattr(interactions, "ops", interactions)
    ops = np.asarray(ops)
    return ops[None] if ops.ndim == 2 else ops


def metropolis_factor(labels, beta: float) -> np.ndarray:
    """F[k2, k1] = min(1, exp(-beta (E_k2 - E_k1)))."""
    d = labels[:, None] - labels[None, :]
    return np.exp(-beta * np.clip(d, 0.0, None))


def _pair_weights(kraus: QPEKraus) -> np.ndarray:
    """Phi[(i, i'), k] = alpha_k(E_i) alpha_k(E_i') in column-major order."""
    a = kraus.alpha
    n = a.shape[0]
    return np.einsum("ik,jk->jik", a, a).reshape(n * n, -1)


def _jump_tensor(ops: np.ndarray, p: np.ndarray) -> np.ndarray:
    """S = sum_a p_a conj(A_a) (x) A_a."""
    n = ops.shape[1]
    S = np.zeros((n * n, n * n), complex)
    for w, A in zip(p, ops):
        S += w * np.kron(A.conj(), A)
    return S


@dataclass
class CPMapBundle:
    acceptance: Superoperator
    rejection: Superoperator
    kraus: QPEKraus
    config: MetropolisConfig
    qpe: QPEModel
    energies: np.ndarray
    pair_factor: np.ndarray
    jump: np.ndarray

    @property
    def total(self) -> Superoperator:
        return self.acceptance + self.rejection

    @property
    def dim(self) -> int:
        return self.acceptance.dim

    def trace_deficit(self, rho) -> float:
        return float(1.0 - np.real(np.trace(self.total.apply(rho))))

    def pair(self, k2: int, k1: int) -> Superoperator:
        """Acceptance piece A_{k2 k1} for register indices k2, k1."""
        Phi = _pair_weights(self.kraus)
        W = self.pair_factor[k2, k1] * np.outer(Phi[:, k2], Phi[:, k1])
        return self.acceptance.with_matrix(W * self.jump)


def acceptance_map(energies, interactions, cfg: MetropolisConfig, qpe: QPEModel,
                   kraus: Optional[QPEKraus] = None) -> tuple:
    """A[rho] = sum_{k1,k2,a} p_a F(k2,k1) M_k2 A M_k1 rho M_k1 A M_k2.

    Returns ``(superoperator, S, Phi, F)`` with the pieces needed for the
    per-pair maps.
    """
    ops = _ops(interactions)
    n = ops.shape[1]
    _guard(n)
    kraus = qpe_kraus(energies, qpe) if kraus is None else kraus
    p = cfg.weights(ops.shape[0])
    S = _jump_tensor(ops, p)
    Phi = _pair_weights(kraus)
    F = metropolis_factor(kraus.labels, cfg.beta)
    W = Phi @ F @ Phi.T
    L = Superoperator(W * S, n, flags=frozenset({"cp"}))
    return L, S, Phi, F


def _perfect_rejection(kraus: QPEKraus, S: np.ndarray, Phi: np.ndarray, F: np.ndarray, n: int) -> np.ndarray:
    """Ideal rejection: Kraus sqrt(P_k (I - G_k) P_k) per eigenspace k."""
    ops = []
    for k in range(kraus.labels.size):
        idx = np.flatnonzero(kraus.alpha[:, k] > 0)
        # G_k = sum over k2 of F(k2,k) P_k A^dag P_k2 A P_k (averaged over a), read off S
        accept_diag = Phi @ F[:, k]
        Y = unvec(S @ (accept_diag * vec(np.eye(n))), n)
        P = np.zeros((n, n))
        P[idx, idx] = 1.0
        G = P @ Y @ P
        Rk = P - 0.5 * (G + G.conj().T)
        w, V = scipy.linalg.eigh(Rk)
        K = (V * np.sqrt(np.clip(w, 0, None))[None, :]) @ V.conj().T
        ops.append(K)
    M = np.zeros((n * n, n * n), complex)
    for K in ops:
        M += np.kron(K.conj(), K)
    return M


def rejection_map(energies, interactions, cfg: MetropolisConfig, qpe: QPEModel,
                  parts: Optional[tuple] = None) -> Superoperator:
    """Bounded rejection loop, summed over the first register reading.

    R_k1 = sum_{r < r_rej} P1 (Q0 P0)^r Q0 P1 with P1 = M_k1 . M_k1 and
    P0 = sum_{k != k1} M_k . M_k.  Q0 averages the Kraus sandwich of
    A R A over interactions, where R = sum_k2 sqrt(1 - F(k2, k1)) M_k2^2 is
    the rejected branch after the second energy reading is uncomputed.
    Perfect QPE uses the ideal projective rejection instead.
    """
    ops = _ops(interactions)
    n = ops.shape[1]
    _guard(n)
    if parts is None:
        kraus = qpe_kraus(energies, qpe)
        _, S, Phi, F = acceptance_map(energies, ops, cfg, qpe, kraus)
    else:
        kraus, S, Phi, F = parts
    if qpe.mode == "perfect":
        return Superoperator(_perfect_rejection(kraus, S, Phi, F, n), n, flags=frozenset({"cp"}))
    M = np.zeros((n * n, n * n), complex)
    if cfg.r_rej == 0:
        return Superoperator(M, n, flags=frozenset({"cp"}))
    p = cfg.weights(ops.shape[0])
    total_diag = Phi.sum(axis=1)
    prob = kraus.alpha**2
    for k1 in range(kraus.labels.size):
        P1 = Phi[:, k1]
        if not np.any(P1):
            continue
        P0 = total_diag - P1
        R = prob @ np.sqrt(1.0 - F[:, k1])
        Q0 = np.zeros_like(M)
        for w, A in zip(p, ops):
            Qa = (A * R[None, :]) @ A
            Q0 += w * np.kron(Qa.conj(), Qa)
        X = Q0 * P1[None, :]
        acc = np.zeros_like(M)
        for r in range(cfg.r_rej):
            acc += X
            if r + 1 < cfg.r_rej:
                X = Q0 @ (P0[:, None] * X)
        M += P1[:, None] * acc
    return Superoperator(M, n, flags=frozenset({"cp"}))


def build_bundle(energies, interactions, cfg: MetropolisConfig, qpe: QPEModel) -> CPMapBundle:
    E = np.asarray(energies, float)
    kraus = qpe_kraus(E, qpe)
    A, S, Phi, F = acceptance_map(E, interactions, cfg, qpe, kraus)
    R = rejection_map(E, interactions, cfg, qpe, (kraus, S, Phi, F))
    return CPMapBundle(A, R, kraus, cfg, qpe, E, F, S)


def population_kernel(bundle: CPMapBundle) -> np.ndarray:
    """K[i, j] = <j| N[|i><i|] |j>: the map restricted to diagonal inputs and outputs."""
    n = bundle.dim
    d = np.arange(n) * (n + 1)
    return np.real(bundle.total.matrix[np.ix_(d, d)]).T


def classical_metropolis(energies, interactions, cfg: MetropolisConfig) -> np.ndarray:
    """Classical Metropolis kernel with transition weights sum_a p_a |A_ji|^2."""
    ops = _ops(interactions)
    p = cfg.weights(ops.shape[0])
    T = np.einsum("a,aji->ij", p, np.abs(ops) ** 2)
    return metropolis_kernel(energies, T, cfg.beta)


def symmetry_residuals(bundle: CPMapBundle) -> dict:
    """Largest residuals of the acceptance and rejection symmetry identities.

    Acceptance: A_{k2 k1}^dag e^{-beta E_k1} = A_{k1 k2} e^{-beta E_k2}.
    Rejection: R = R^dag under the trace inner product.
    """
    labels = bundle.kraus.labels
    beta = bundle.config.beta
    w = np.exp(-beta * (labels - labels.min()))
    worst = 0.0
    K = labels.size
    for k2 in range(K):
        for k1 in range(k2 + 1):
            a21 = bundle.pair(k2, k1).matrix
            a12 = bundle.pair(k1, k2).matrix
            diff = np.abs(a21.conj().T * w[k1] - a12 * w[k2]).max()
            scale = max(np.abs(a21).max(), np.abs(a12).max(), 1e-300)
            worst = max(worst, diff / scale)
    R = bundle.rejection.matrix
    rscale = max(np.abs(R).max(), 1e-300)
    return {"acceptance": float(worst), "rejection": float(np.abs(R - R.conj().T).max() / rscale)}


def epsilon_db(bundle: CPMapBundle, sigma=None, **kw) -> float:
    """Lower bound on the 1->1 norm of the sigma-anti-self-adjoint part of N."""
    sigma = gibbs_diagonal(bundle.energies, bundle.config.beta) if sigma is None else sigma
    _, NA = hermitian_split(bundle.total, WeightedMetric(sigma, "inverse"))
    return one_one_norm_lower(NA, **kw).value


@dataclass
class FixedPointReport:
    traces: np.ndarray
    distances: np.ndarray
    lambda_lead: float
    sigma_fix: np.ndarray
    fix_distance: float
    lambda2_h: float
    split: Optional[dict] = None


def _power(M: np.ndarray, v: np.ndarray, max_iter: int, tol: float):
    for _ in range(max_iter):
        w = M @ v
        lam_new = np.vdot(v, w).real / np.vdot(v, v).real
        nrm = np.linalg.norm(w)
        if nrm == 0:
            raise ConvergenceError("map annihilates the iterate")
        res = np.linalg.norm(w - lam_new * v) / max(abs(lam_new), 1e-300)
        v = w / nrm
        if res < tol:
            return lam_new, v, res
    raise ConvergenceError(f"power iteration stalled with residual {res:.2e}")


def iterate_to_fixed_point(bundle: CPMapBundle, rho0, steps: int, sigma_target=None, window: Optional[float] = None,
                           tol: float = 1e-13, max_iter: int = 200000, hermitian_gap: bool = True) -> FixedPointReport:
    """Renormalized iteration rho -> N[rho]/Tr N[rho] plus leading-eigenpair diagnostics.

    ``hermitian_gap=False`` skips the dense eigensolve of the Hermitian part
    (``lambda2_h`` is then NaN), which dominates the cost at dim 64.
    """
    N = bundle.total
    n = bundle.dim
    sigma = gibbs_diagonal(bundle.energies, bundle.config.beta) if sigma_target is None else np.asarray(sigma_target)
    sigma_m = np.diag(sigma) if sigma.ndim == 1 else sigma
    rho = np.asarray(rho0, complex)
    traces, dists = [], []
    for _ in range(steps):
        out = N.apply(rho)
        t = float(np.real(np.trace(out)))
        rho = out / t
        traces.append(t)
        dists.append(trace_distance(rho, sigma_m))
    lam, v, _ = _power(N.matrix, vec(np.eye(n) / n).astype(complex), max_iter, tol)
    X = unvec(v, n)
    X = 0.5 * (X + X.conj().T)
    X = X / np.trace(X).real
    lam2 = float("nan")
    if hermitian_gap:
        metric = WeightedMetric(np.diag(sigma_m).real, "inverse")
        NH, _ = hermitian_split(N, metric)
        lam2 = float(np.real(spectrum_of(NH, metric))[1])
    split = None
    if window is not None:
        split = window_split(bundle, window, np.diag(sigma_m).real)
    return FixedPointReport(np.array(traces), np.array(dists), float(lam), X, 2 * trace_distance(X, sigma_m),
                            lam2, split)


def window_split(bundle: CPMapBundle, window: float, sigma) -> dict:
    """Second eigenvalues of the Hermitian parts of the near and far summands."""
    labels = bundle.kraus.labels
    near = np.abs(labels[:, None] - labels[None, :]) <= window + 1e-12
    Phi = _pair_weights(bundle.kraus)
    F = bundle.pair_factor
    metric = WeightedMetric(sigma, "inverse")
    out = {}
    for name, mask in (("near", near), ("far", ~near)):
        W = Phi @ (F * mask) @ Phi.T
        part = bundle.acceptance.with_matrix(W * bundle.jump)
        if name == "near":
            part = part + bundle.rejection
        H, _ = hermitian_split(part, metric)
        ev = np.real(spectrum_of(H, metric))
        out[name] = float(ev[1]) if ev.size > 1 else float(ev[0])
    return out


def trace_distance(a, b) -> float:
    d = np.asarray(a) - np.asarray(b)
    return 0.5 * float(np.sum(np.abs(scipy.linalg.eigvalsh(0.5 * (d + d.conj().T)))))
