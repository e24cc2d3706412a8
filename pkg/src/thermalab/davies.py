"""Rounded Davies generator and the finite-time dissipator D'.

Interaction operators live in the energy eigenbasis restricted to the retained
eigenindices of a :class:`~thermalab.spectrum.RoundedSpectrum`.  For an
entry ``A[p, r]`` the integer Bohr label ``W[p, r] = k[r] - k[p]`` records the
energy it removes in units of ``nu0``, so ``A(w)`` keeps entries with
``W == w / nu0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from . import bath as bathmod
from .errors import CapacityError, ValidationError
from .spectrum import RoundedSpectrum, SpectralModel, rounded_gibbs_diagonal
from .superop import Superoperator, WeightedMetric, adjoint, block_spectrum, evolve, self_adjoint_residual

DENSE_MAX_DIM = 64
PAULI = {"I": 0, "X": 1, "Y": 2, "Z": 3}


@dataclass(frozen=True)
class InteractionSet:
    ops: np.ndarray
    label: str

    def __post_init__(self):
        ops = np.asarray(self.ops)
        if ops.ndim == 2:
            ops = ops[None]
        if ops.ndim != 3 or ops.shape[0] < 1:
            raise ValidationError("need at least one interaction operator")
        herm = np.max(np.abs(ops - ops.conj().transpose(0, 2, 1)))
        if herm > 1e-10 * max(1.0, np.max(np.abs(ops))):
            raise ValidationError("interaction operators must be Hermitian")
        object.__setattr__(self, "ops", ops)

    @property
    def count(self) -> int:
        return int(self.ops.shape[0])

    @property
    def dim(self) -> int:
        return int(self.ops.shape[1])

    def subset(self, n: int) -> "InteractionSet":
        return InteractionSet(self.ops[:n], f"{self.label}[:{n}]")


@dataclass(frozen=True)
class TrueGeneratorConfig:
    m: int
    nu0: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValidationError("coherence multiple m must be an integer >= 1")
        if not self.nu0 > 0:
            raise ValidationError("nu0 must be positive")

    @property
    def mu0(self) -> float:
        return self.m * self.nu0


@dataclass(frozen=True)
class EvolutionConfig:
    coupling: float
    t: float

    @property
    def tau(self) -> float:
        return self.coupling**2 * self.t


def pauli_action(L: int, string: str):
    """Return (perm, phase) with (P psi)[x] = phase[x] * psi[perm[x]]."""
    if len(string) != L or any(ch not in PAULI for ch in string):
        raise ValidationError(f"invalid Pauli string {string!r} for L={L}")
    x = np.arange(2**L)
    flip = 0
    phase = np.ones(2**L, complex)
    for i, ch in enumerate(string):
        bit = 1 << (L - 1 - i)
        if ch in "XY":
            flip |= bit
    src = x ^ flip
    for i, ch in enumerate(string):
        b = (src >> (L - 1 - i)) & 1
        if ch == "Z":
            phase *= 1 - 2 * b
        elif ch == "Y":
            phase *= np.where(b == 0, 1j, -1j)
    return src, phase


def pauli_matrix(L: int, string: str) -> np.ndarray:
    src, phase = pauli_action(L, string)
    P = np.zeros((2**L, 2**L), complex)
    P[np.arange(2**L), src] = phase
    return P


def family_strings(L: int, family: str, periodic: bool = True) -> list:
    """Pauli strings for the shipped interaction families."""
    def place(sites, letters):
        s = ["I"] * L
        for q, ch in zip(sites, letters):
            s[q] = ch
        return "".join(s)

    if family == "sigma_x_sites":
        return [place([i], "X") for i in range(L)]
    letters = {"xxx": "XXX", "zzz": "ZZZ", "xyz": "XYZ"}.get(family)
    if letters is None:
        raise ValidationError(f"unknown interaction family {family!r}")
    starts = range(L) if periodic else range(L - 2)
    return [place([i % L, (i + 1) % L, (i + 2) % L], letters) for i in starts]


def energy_basis_ops(model: SpectralModel, strings: Sequence[str], rows=None, cols=None) -> np.ndarray:
    """U^dag P U restricted to retained (or given) eigenindices for each string."""
    if model.eigenbasis is None:
        raise ValidationError("model has no eigenbasis")
    L = int(round(math.log2(model.dim)))
    U = model.eigenbasis
    ret = np.arange(model.dim)[model.retained]
    rows = ret if rows is None else ret[np.asarray(rows)]
    cols = ret if cols is None else ret[np.asarray(cols)]
    Ur = U[:, rows].conj().T
    Uc = U[:, cols]
    out = []
    for s in strings:
        src, phase = pauli_action(L, s)
        out.append(Ur @ (phase[:, None] * Uc[src, :]))
    return np.array(out)


def interaction_set(model: SpectralModel, family: Optional[str] = None, strings=None, count=None) -> InteractionSet:
    if strings is None:
        if model.params is None:
            raise ValidationError("model lacks chain parameters; pass explicit strings")
        strings = family_strings(model.params.L, family, model.params.periodic)
        label = family
    else:
        label = "pauli_strings"
    if count is not None:
        strings = list(strings)[:count]
    return InteractionSet(energy_basis_ops(model, strings), label)


def bohr_labels(rounded: RoundedSpectrum) -> np.ndarray:
    k = rounded.index_k
    return k[None, :] - k[:, None]


def fourier_component(A: np.ndarray, rounded: RoundedSpectrum, omega: float) -> np.ndarray:
    """A(w): entries of A whose column bin exceeds the row bin by w."""
    w = omega / rounded.nu0
    wi = int(round(w))
    if abs(w - wi) > 1e-9:
        raise ValidationError("omega must be an integer multiple of nu0")
    return np.where(bohr_labels(rounded) == wi, A, 0)


def _ops(interactions) -> np.ndarray:
    if isinstance(interactions, InteractionSet):
        return interactions.ops
    ops = np.asarray(interactions)
    return ops[None] if ops.ndim == 2 else ops


def _rate_fn(bath):
    if isinstance(bath, bathmod.BathProfile):
        return lambda w: bathmod.gamma(bath, w)
    if callable(bath):
        return bath
    c = float(bath)
    return lambda w: np.full(np.shape(w), c)


def _guard(n: int):
    if n > DENSE_MAX_DIM:
        raise CapacityError(f"dense generator limited to dim <= {DENSE_MAX_DIM}, got {n}")


def _jump_superop(ops: np.ndarray, weights_pr: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Matrix of rho -> sum_a sum_w g(w) A_a(w) rho A_a(w)^dag in F-order vec."""
    na, n, _ = ops.shape
    B = (ops * weights_pr[None]).reshape(na, n * n)
    T = (B.T @ ops.conj().reshape(na, n * n)).reshape(n, n, n, n)  # [p, r, q, s]
    mask = W[:, :, None, None] == W[None, None, :, :]
    T = np.where(mask, T, 0)
    return T.transpose(2, 0, 3, 1).reshape(n * n, n * n)


def _same_bin_product(ops: np.ndarray, weights_pr: np.ndarray, k: np.ndarray) -> np.ndarray:
    """sum_a sum_w g(w) A_a(w)^dag A_a(w)."""
    K = np.einsum("apr,aps->rs", (ops * weights_pr[None]).conj(), ops)
    return np.where(k[:, None] == k[None, :], K, 0)


def _frequency_mask(W: np.ndarray, frequencies) -> np.ndarray:
    if frequencies is None:
        return np.ones_like(W, bool)
    allowed = np.array(sorted({int(round(f)) for f in frequencies}))
    return np.isin(W, allowed)


def lamb_shift_hamiltonian(rounded: RoundedSpectrum, interactions, bath: bathmod.BathProfile,
                           frequencies=None) -> np.ndarray:
    """H_LS = sum_w Im Gamma(w) A(w)^dag A(w) (same-frequency terms)."""
    ops = _ops(interactions)
    W = bohr_labels(rounded)
    ws = np.unique(W)
    imG = dict(zip(ws.tolist(), np.imag(bathmod.gamma_big(bath, ws * rounded.nu0))))
    S = np.vectorize(imG.get)(W).astype(float)
    S = np.where(_frequency_mask(W, frequencies), S, 0.0)
    return _same_bin_product(ops, S, rounded.index_k)


def commutator_superop(H: np.ndarray) -> np.ndarray:
    """Matrix of rho -> -i [H, rho]."""
    n = H.shape[0]
    I = np.eye(n)
    return -1j * (np.kron(I, H) - np.kron(H.T, I))


def rounded_davies(rounded: RoundedSpectrum, interactions, bath, include_lamb_shift: bool = False,
                   coupling: Optional[float] = None, frequencies=None) -> Superoperator:
    """Schroedinger-picture rounded Davies generator.

    ``bath`` is a BathProfile, a rate function, or a constant rate.
    ``frequencies`` optionally restricts the Bohr labels (integers in units
    of nu0) that contribute.  With ``include_lamb_shift`` the term
    -i[H_LS, .] is added; a finite ``coupling`` adds -i[H_S_bar, .]/coupling^2.
    """
    ops = _ops(interactions)
    n = ops.shape[1]
    _guard(n)
    rate = _rate_fn(bath)
    W = bohr_labels(rounded)
    g = rate(W * rounded.nu0) * _frequency_mask(W, frequencies)
    M = _jump_superop(ops, g, W)
    K = _same_bin_product(ops, g, rounded.index_k)
    I = np.eye(n)
    M = M - 0.5 * (np.kron(I, K) + np.kron(K.T, I))
    flags = {"trace_preserving", "hermiticity_preserving", "lindblad"}
    if include_lamb_shift:
        if not isinstance(bath, bathmod.BathProfile):
            raise ValidationError("Lamb shift needs a BathProfile")
        M = M + commutator_superop(lamb_shift_hamiltonian(rounded, ops, bath, frequencies))
    if coupling is not None:
        M = M + commutator_superop(np.diag(rounded.rounded_energies)) / coupling**2
    return Superoperator(M.astype(complex), n, None, "energy", frozenset(flags))


def heisenberg(L: Superoperator) -> Superoperator:
    return adjoint(L)


def true_dissipator(rounded: RoundedSpectrum, interactions, bath, cfg: TrueGeneratorConfig) -> Superoperator:
    """Schroedinger-picture D' with coherent cross-frequency terms |w - w'| <= m nu0.

    Built from the Heisenberg form

        X -> sum g(w, w') (A(w')^dag X A(w) - c1 X A(w')^dag A(w) - c2 A(w')^dag A(w) X)

    with g = gamma((w + w')/2), c1 = e^{b}/(1+e^{b}), c2 = 1/(1+e^{b}) and
    b = beta (w - w')/2, then transposed to the Schroedinger picture.
    """
    if abs(cfg.nu0 - rounded.nu0) > 1e-12 * rounded.nu0:
        raise ValidationError("config nu0 differs from the rounding precision")
    ops = _ops(interactions)
    na, n, _ = ops.shape
    _guard(n)
    rate = _rate_fn(bath)
    beta = bath.beta if isinstance(bath, bathmod.BathProfile) else 0.0
    nu0 = rounded.nu0
    W = bohr_labels(rounded)
    ws = np.unique(W)
    Mh = np.zeros((n * n, n * n), complex)
    K1 = np.zeros((n, n), complex)
    K2 = np.zeros((n, n), complex)
    conj = ops.conj()
    for wp in ws:
        left = np.where(W == wp, conj, 0)  # entries conj(A[r, p]) with W[r, p] = w'
        close = np.abs(W - wp) <= cfg.m
        g = rate(0.5 * (W + wp) * nu0) * close
        bm = 0.5 * beta * (W - wp) * nu0
        right = ops * g[None]
        # jump: (A(w')^dag X A(w))[p, q] = sum_rs conj(A[r, p]) X[r, s] A[s, q]
        T = np.einsum("arp,asq->pqrs", left, right, optimize=True)
        Mh += T.transpose(1, 0, 3, 2).reshape(n * n, n * n)
        # (A(w')^dag A(w))[r, s] = sum_p conj(A[p, r]) A[p, s]
        K1 += np.einsum("apr,aps->rs", left, ops * (g * expit(bm))[None])
        K2 += np.einsum("apr,aps->rs", left, ops * (g * expit(-bm))[None])
    I = np.eye(n)
    Mh -= np.kron(K1.T, I) + np.kron(I, K2)
    return Superoperator(Mh.conj().T.copy(), n, None, "energy",
                         frozenset({"trace_preserving", "hermiticity_preserving"}))


def true_lamb_shift_hamiltonian(rounded: RoundedSpectrum, interactions, bath: bathmod.BathProfile,
                                cfg: TrueGeneratorConfig) -> np.ndarray:
    """H_LS = sum_{|w-w'|<=m} S(w, w') A(w')^dag A(w)."""
    ops = _ops(interactions)
    n = ops.shape[1]
    nu0 = rounded.nu0
    W = bohr_labels(rounded)
    ws = np.unique(W)
    G = dict(zip(ws.tolist(), bathmod.gamma_big(bath, ws * nu0)))
    Gw = np.vectorize(G.get, otypes=[complex])(W)
    H = np.zeros((n, n), complex)
    for wp in ws:
        left = np.where(W == wp, ops.conj(), 0)
        S = (Gw - np.conj(G[int(wp)])) / 2j
        S = np.where(np.abs(W - wp) <= cfg.m, S, 0)
        H += np.einsum("apr,aps->rs", left, ops * S[None])
    return H


def commutator_self_adjoint_norm(H: np.ndarray, sigma) -> float:
    """||self-adjoint part of X -> -i[H, X]||_{inf, sigma} under the inverse metric.

    With s = sigma^(-1/2) the similarity-transformed map is
    X -> -i(H1 X - X H2), H1[p, r] = H[p, r] sqrt(s_p / s_r) and
    H2[r, q] = H[r, q] sqrt(s_q / s_r).  Its self-adjoint part is
    I (x) Ha - Hb^T (x) I with commuting Hermitian Ha, Hb, so the norm is the
    largest |a_i - b_j| over their eigenvalues.
    """
    s = 1.0 / np.sqrt(np.asarray(sigma, float) / np.sum(sigma))
    ratio = np.sqrt(s[:, None] / s[None, :])
    H1 = H * ratio
    H2 = H * ratio.T
    Ha = -0.5j * (H1 - H1.conj().T)
    Hb = -0.5j * (H2 - H2.conj().T)
    a = np.linalg.eigvalsh(0.5 * (Ha + Ha.conj().T))
    b = np.linalg.eigvalsh(0.5 * (Hb + Hb.conj().T))
    return float(max(a[-1] - b[0], b[-1] - a[0], 0.0))


def lamb_shift_residual(rounded: RoundedSpectrum, interactions, bath: bathmod.BathProfile,
                        cfg: TrueGeneratorConfig):
    """(||[H_LS, sigma_bar]||_1, ||self-adjoint part of -i[H_LS, .]||_{inf, sigma})."""
    H = true_lamb_shift_hamiltonian(rounded, interactions, bath, cfg)
    sig = rounded_gibbs_diagonal(rounded, bath.beta)
    C = H * sig[None, :] - sig[:, None] * H
    comm = float(np.sum(np.linalg.svd(C, compute_uv=False)))
    return comm, commutator_self_adjoint_norm(H, sig)


def lamb_shift_scan(model_factory, nu0_grid, bath, m: int = 1):
    """Table rows (nu0, commutator norm, self-adjoint norm) over ``nu0_grid``.

    ``model_factory(nu0)`` returns ``(rounded, interactions)``.
    """
    rows = []
    for nu0 in nu0_grid:
        rounded, inter = model_factory(nu0)
        c, s = lamb_shift_residual(rounded, inter, bath, TrueGeneratorConfig(m, nu0))
        rows.append({"nu0": float(nu0), "commutator": c, "self_adjoint_norm": s})
    return rows


def bohr_sectors(rounded: RoundedSpectrum):
    """Vector-entry groups with equal k[p] - k[q]; invariant under D_bar."""
    k = rounded.index_k
    diff = (k[:, None] - k[None, :]).ravel(order="F")
    order = np.argsort(diff, kind="stable")
    _, starts = np.unique(diff[order], return_index=True)
    return np.split(order, starts[1:])


def davies_spectrum(L: Superoperator, rounded: RoundedSpectrum, sigma=None) -> np.ndarray:
    """Eigenvalues of a rounded Davies generator computed sector by sector."""
    metric = None if sigma is None else WeightedMetric(sigma, "inverse")
    return block_spectrum(L, bohr_sectors(rounded), metric)


def detailed_balance_residual(L: Superoperator, sigma) -> float:
    return self_adjoint_residual(L, WeightedMetric(sigma, "inverse"))


def structure_residuals(L: Superoperator, sigma) -> dict:
    """Trace preservation, detailed balance and fixed-point residuals."""
    n = L.dim
    I = np.eye(n)
    Lh = adjoint(L)
    scale = max(np.max(np.abs(L.matrix)), 1e-300)
    return {
        "trace": float(np.max(np.abs(Lh.apply(I))) / scale),
        "detailed_balance": detailed_balance_residual(L, sigma),
        "fixed_point": float(np.max(np.abs(L.apply(np.diag(sigma)))) / scale),
    }


def mlsi_lower(gap: float, sigma) -> float:
    """Gap-to-MLSI conversion 2 gap / (ln ||sigma^-1|| + 2)."""
    return 2.0 * gap / (math.log(1.0 / float(np.min(sigma))) + 2.0)


@dataclass(frozen=True)
class ConvergenceCurve:
    taus: np.ndarray
    distances: np.ndarray
    rate: float


def fit_rate(taus, distances, floor: float = 1e-11, tail: float = 0.5) -> float:
    """Exponential rate from a log-linear fit over the late part of a curve."""
    taus = np.asarray(taus, float)
    d = np.asarray(distances, float)
    ok = d > floor
    idx = np.nonzero(ok)[0]
    if idx.size < 3:
        return float("nan")
    idx = idx[int(len(idx) * (1 - tail)):] if len(idx) >= 6 else idx
    slope = np.polyfit(taus[idx], np.log(d[idx]), 1)[0]
    return float(-slope)


def converge_to_gibbs(L: Superoperator, rho0, sigma_target, tau_max: float, n_points: int = 41) -> ConvergenceCurve:
    """Trace distance 0.5 ||exp(L tau)[rho0] - sigma||_1 on a uniform tau grid."""
    taus = np.linspace(0.0, tau_max, n_points)
    traj = evolve(L, rho0, taus)
    sig = np.asarray(sigma_target)
    if sig.ndim == 1:
        sig = np.diag(sig)
    dist = np.array([0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (r + r.conj().T) - sig))) for r in traj.states])
    return ConvergenceCurve(taus, dist, fit_rate(taus, dist))
