"""Dense superoperators on column-major vectorized operators.

A map acts on operators supported on a list of rectangular blocks
``X[rows_b, cols_b]`` of a ``dim x dim`` matrix.  The vector of a block
operator is the concatenation of ``X[rows_b, cols_b].ravel("F")``.  A full map
has the single block ``(range(dim), range(dim))`` so that
``vec(A X B) = kron(B.T, A) @ vec(X)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from .errors import CapacityError, DiagnosticError, ValidationError

EXPM_MAX_DIM = 32
EVOLVE_MAX_DIM = 64


def vec(X: np.ndarray) -> np.ndarray:
    return np.asarray(X).ravel(order="F")


def unvec(v: np.ndarray, shape) -> np.ndarray:
    if isinstance(shape, int):
        shape = (shape, shape)
    return np.asarray(v).reshape(shape, order="F")


def _as_blocks(blocks):
    return tuple((tuple(int(i) for i in r), tuple(int(j) for j in c)) for r, c in blocks)


@dataclass(frozen=True, eq=False)
class Superoperator:
    matrix: np.ndarray
    dim: int
    blocks: tuple = None
    basis_tag: str = "energy"
    flags: frozenset = frozenset()

    def __post_init__(self):
        if self.blocks is None:
            full = tuple(range(self.dim))
            object.__setattr__(self, "blocks", ((full, full),))
        else:
            object.__setattr__(self, "blocks", _as_blocks(self.blocks))
        n = sum(len(r) * len(c) for r, c in self.blocks)
        if self.matrix.shape != (n, n):
            raise ValidationError(f"matrix shape {self.matrix.shape} does not match block size {n}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValidationError("superoperator has non-finite entries")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_full(self) -> bool:
        r, c = self.blocks[0]
        return len(self.blocks) == 1 and r == tuple(range(self.dim)) and c == r

    def with_matrix(self, matrix, flags=None) -> "Superoperator":
        return replace(self, matrix=matrix, flags=self.flags if flags is None else frozenset(flags))

    def vectorize(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        return np.concatenate([X[np.ix_(r, c)].ravel(order="F") for r, c in self.blocks])

    def unvectorize(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=np.result_type(v, float))
        pos = 0
        for r, c in self.blocks:
            n = len(r) * len(c)
            out[np.ix_(r, c)] = v[pos:pos + n].reshape((len(r), len(c)), order="F")
            pos += n
        return out

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.unvectorize(self.matrix @ self.vectorize(X))

    def entry_indices(self):
        """Global (row, col) of every vector entry."""
        rows, cols = [], []
        for r, c in self.blocks:
            rr, cc = np.meshgrid(np.asarray(r, int), np.asarray(c, int), indexing="ij")
            rows.append(rr.ravel(order="F"))
            cols.append(cc.ravel(order="F"))
        return np.concatenate(rows), np.concatenate(cols)

    def __add__(self, other):
        _check_compatible(self, other)
        return self.with_matrix(self.matrix + other.matrix, self.flags & other.flags)

    def __sub__(self, other):
        _check_compatible(self, other)
        return self.with_matrix(self.matrix - other.matrix, frozenset())

    def scale(self, c) -> "Superoperator":
        return self.with_matrix(c * self.matrix, frozenset())


def _check_compatible(a: Superoperator, b: Superoperator):
    if a.basis_tag != b.basis_tag:
        raise ValidationError(f"basis mismatch: {a.basis_tag!r} vs {b.basis_tag!r}")
    if a.dim != b.dim or a.blocks != b.blocks:
        raise ValidationError("superoperators act on different block spaces")


def compose(a: Superoperator, b: Superoperator) -> Superoperator:
    """a after b."""
    _check_compatible(a, b)
    return a.with_matrix(a.matrix @ b.matrix, a.flags & b.flags)


def from_matrix(matrix, dim=None, basis_tag="energy", flags=()) -> Superoperator:
    matrix = np.asarray(matrix)
    if dim is None:
        dim = int(round(np.sqrt(matrix.shape[0])))
    return Superoperator(matrix, dim, None, basis_tag, frozenset(flags))


def identity_map(dim: int, basis_tag="energy") -> Superoperator:
    return from_matrix(np.eye(dim * dim), dim, basis_tag, ("hermiticity_preserving", "trace_preserving"))


def sandwich(A, B=None, basis_tag="energy") -> Superoperator:
    """X -> A X B (B defaults to A^dagger)."""
    A = np.asarray(A)
    B = A.conj().T if B is None else np.asarray(B)
    return from_matrix(np.kron(B.T, A), A.shape[0], basis_tag)


def kraus_map(ops, basis_tag="energy") -> Superoperator:
    ops = [np.asarray(K) for K in ops]
    M = sum(np.kron(K.conj(), K) for K in ops)
    return from_matrix(M, ops[0].shape[0], basis_tag, ("hermiticity_preserving",))


def from_function(f, dim: int, basis_tag="energy") -> Superoperator:
    """Tabulate a linear map by applying it to matrix units."""
    cols = []
    for j in range(dim):
        for i in range(dim):
            E = np.zeros((dim, dim), complex)
            E[i, j] = 1.0
            cols.append(vec(f(E)))
    return from_matrix(np.array(cols).T, dim, basis_tag)


@dataclass(frozen=True)
class WeightedMetric:
    """Inner product <A, B> = Tr[A^dag s B s] with s = sigma^(1/2) or sigma^(-1/2).

    ``mode="sigma"`` uses sqrt(sigma) (Heisenberg-picture detailed balance),
    ``mode="inverse"`` uses sigma^(-1/2) (Schroedinger picture).
    """

    sigma: np.ndarray
    mode: str = "sigma"

    def __post_init__(self):
        s = np.asarray(self.sigma, float)
        if s.ndim == 2:
            if np.max(np.abs(s - np.diag(np.diag(s)))) > 0:
                raise ValidationError("only diagonal weight states are supported")
            s = np.diag(s).copy()
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise ValidationError("weight state must be strictly positive")
        if self.mode not in ("sigma", "inverse"):
            raise ValidationError(f"unknown metric mode {self.mode!r}")
        object.__setattr__(self, "sigma", s / s.sum())

    def root(self) -> np.ndarray:
        return np.sqrt(self.sigma) if self.mode == "sigma" else 1.0 / np.sqrt(self.sigma)

    def entry_weights(self, L: Superoperator) -> np.ndarray:
        s = self.root()
        rows, cols = L.entry_indices()
        return s[rows] * s[cols]

    def inner(self, A, B) -> complex:
        s = self.root()
        return complex(np.sum(np.conj(A) * B * np.outer(s, s)))


def adjoint(L: Superoperator, metric: Optional[WeightedMetric] = None) -> Superoperator:
    """Adjoint under the trace (Hilbert-Schmidt) or a weighted inner product."""
    MH = L.matrix.conj().T
    if metric is None:
        return L.with_matrix(MH)
    w = metric.entry_weights(L)
    return L.with_matrix((MH * w[None, :]) / w[:, None])


def similarity(L: Superoperator, metric: WeightedMetric) -> np.ndarray:
    """Matrix of L in an orthonormal basis of the weighted inner product."""
    r = np.sqrt(metric.entry_weights(L))
    return (L.matrix * r[:, None]) / r[None, :]


def hermitian_split(L: Superoperator, metric: Optional[WeightedMetric] = None):
    Ld = adjoint(L, metric)
    LH = L.with_matrix(0.5 * (L.matrix + Ld.matrix))
    LA = L.with_matrix(0.5 * (L.matrix - Ld.matrix))
    return LH, LA


def self_adjoint_residual(L: Superoperator, metric: Optional[WeightedMetric] = None) -> float:
    """||L - L^adj||_F / ||L||_F."""
    num = np.linalg.norm(L.matrix - adjoint(L, metric).matrix)
    den = np.linalg.norm(L.matrix)
    return float(num / den) if den > 0 else float(num)


def weighted_norm(L: Superoperator, metric: WeightedMetric) -> float:
    """Operator norm induced by the weighted inner product."""
    return float(np.linalg.norm(similarity(L, metric), 2))


def _sort_desc(ev: np.ndarray) -> np.ndarray:
    return ev[np.lexsort((-np.imag(ev), -np.real(ev)))]


def spectrum_of(L: Superoperator, metric: Optional[WeightedMetric] = None, tol: float = 1e-9) -> np.ndarray:
    """Eigenvalues sorted by real part, descending.

    When ``L`` is self-adjoint under ``metric`` (or under the trace inner
    product when ``metric`` is None) a Hermitian eigensolver is used and the
    result is real.
    """
    if metric is None:
        S = L.matrix
    else:
        S = similarity(L, metric)
    scale = max(np.max(np.abs(S)), 1e-300)
    if np.max(np.abs(S - S.conj().T)) <= tol * scale:
        ev = scipy.linalg.eigvalsh(0.5 * (S + S.conj().T))
        return ev[::-1]
    return _sort_desc(scipy.linalg.eigvals(S))


def block_spectrum(L: Superoperator, groups: Sequence[np.ndarray], metric=None, tol=1e-9) -> np.ndarray:
    """Eigenvalues of L computed on an invariant partition of vector entries."""
    out = []
    covered = 0
    for g in groups:
        g = np.asarray(g, int)
        covered += g.size
        sub = L.matrix[np.ix_(g, g)]
        if metric is None:
            S = sub
        else:
            r = np.sqrt(metric.entry_weights(L))[g]
            S = (sub * r[:, None]) / r[None, :]
        scale = max(np.max(np.abs(S)), 1e-300)
        if np.max(np.abs(S - S.conj().T)) <= tol * scale:
            out.append(scipy.linalg.eigvalsh(0.5 * (S + S.conj().T)).astype(complex))
        else:
            out.append(scipy.linalg.eigvals(S))
    if covered != L.size:
        raise ValidationError("groups do not partition the vector space")
    ev = np.concatenate(out)
    if np.all(np.abs(ev.imag) == 0):
        return np.sort(ev.real)[::-1]
    return _sort_desc(ev)


def spectral_gap(eigs: np.ndarray) -> float:
    """-Re of the second eigenvalue in descending order (leading one assumed 0)."""
    return float(-np.real(eigs[1]))


def choi(L: Superoperator) -> np.ndarray:
    """Choi matrix sum_ij |i><j| (x) L(|i><j|) for a full map."""
    if not L.is_full:
        raise ValidationError("Choi matrix requires a full-space map")
    d = L.dim
    T = L.matrix.reshape(d, d, d, d)  # [b, a, j, i]
    return T.transpose(3, 1, 2, 0).reshape(d * d, d * d)


def choi_min_eig(L: Superoperator) -> float:
    C = choi(L)
    return float(scipy.linalg.eigvalsh(0.5 * (C + C.conj().T))[0])


def conditional_choi_min_eig(L: Superoperator) -> float:
    """Smallest eigenvalue of the Choi matrix projected off the maximally entangled vector.

    A generator L produces a completely positive semigroup exactly when this
    value is non-negative.
    """
    C = choi(L)
    d = L.dim
    omega = np.zeros(d * d)
    omega[np.arange(d) * (d + 1)] = 1.0 / np.sqrt(d)
    P = np.eye(d * d) - np.outer(omega, omega)
    C = P @ C @ P
    return float(scipy.linalg.eigvalsh(0.5 * (C + C.conj().T))[0])


def is_hermiticity_preserving(L: Superoperator, probes: int = 4, seed: int = 0, tol: float = 1e-10) -> bool:
    rng = np.random.default_rng(seed)
    d = L.dim
    for _ in range(probes):
        X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        Y1 = L.apply(X.conj().T)
        Y2 = L.apply(X).conj().T
        if np.max(np.abs(Y1 - Y2)) > tol * max(1.0, np.max(np.abs(Y2))):
            return False
    return True


@dataclass(frozen=True)
class NormEstimate:
    value: float
    upper: float
    converged: bool
    state: np.ndarray


def _trace_norm(Y: np.ndarray) -> float:
    return float(np.sum(np.abs(scipy.linalg.eigvalsh(0.5 * (Y + Y.conj().T)))))


def _top_vector(Y: np.ndarray) -> np.ndarray:
    w, V = scipy.linalg.eigh(0.5 * (Y + Y.conj().T))
    return V[:, -1]


def one_one_norm_lower(L: Superoperator, restarts: int = 8, seed: int = 0, max_iter: int = 100,
                       basis_seeds: int = 16, tol: float = 1e-12) -> NormEstimate:
    """Lower bound on max_psi ||L[psi psi^dag]||_1 by monotone ascent.

    Each step replaces psi by the top eigenvector of L*(sign(L[psi psi^dag])),
    which never decreases the objective.  Seeds are energy-basis states and
    random pure states.  ``upper`` is sqrt(d) * sigma_max(L).
    """
    if not L.is_full:
        raise ValidationError("1->1 norm requires a full-space map")
    d = L.dim
    M = L.matrix
    MH = M.conj().T
    rng = np.random.default_rng(seed)
    seeds = []
    for i in np.unique(np.linspace(0, d - 1, min(basis_seeds, d)).round().astype(int)):
        e = np.zeros(d, complex)
        e[i] = 1.0
        seeds.append(e)
    for _ in range(restarts):
        v = rng.normal(size=d) + 1j * rng.normal(size=d)
        seeds.append(v / np.linalg.norm(v))
    best, best_state, all_conv = -1.0, None, True
    for psi in seeds:
        val = -1.0
        conv = False
        for _ in range(max_iter):
            Y = unvec(M @ vec(np.outer(psi, psi.conj())), d)
            Yh = 0.5 * (Y + Y.conj().T)
            w, V = scipy.linalg.eigh(Yh)
            new = float(np.sum(np.abs(w)))
            if new <= val + tol * max(1.0, val):
                val = max(val, new)
                conv = True
                break
            val = new
            S = (V * np.sign(w)[None, :]) @ V.conj().T
            G = unvec(MH @ vec(S), d)
            psi = _top_vector(G)
        all_conv &= conv
        if val > best:
            best, best_state = val, psi
    upper = float(np.sqrt(d) * np.linalg.norm(M, 2))
    return NormEstimate(best, upper, all_conv, best_state)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    method: str


def evolve(L: Superoperator, rho0: np.ndarray, times, rtol: float = 1e-8, atol: float = 1e-12) -> Trajectory:
    """States exp(L t_k)[rho0] for the sorted non-negative times ``t_k``."""
    d = L.dim
    if d > EVOLVE_MAX_DIM:
        raise CapacityError(f"dense evolution limited to d <= {EVOLVE_MAX_DIM}, got {d}")
    rho0 = np.asarray(rho0, complex)
    if np.max(np.abs(rho0 - rho0.conj().T)) > 1e-10:
        raise ValidationError("rho0 must be Hermitian")
    if abs(np.trace(rho0) - 1) > 1e-10 or scipy.linalg.eigvalsh(rho0)[0] < -1e-10:
        raise ValidationError("rho0 must be a density matrix")
    times = np.asarray(times, float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValidationError("times must be non-negative and sorted")
    v0 = L.vectorize(rho0)
    M = L.matrix
    out = np.empty((times.size, v0.size), complex)
    if d <= EXPM_MAX_DIM:
        method = "expm"
        cache = {}
        v, t_prev = v0, 0.0
        for k, t in enumerate(times):
            dt = t - t_prev
            if dt > 0:
                key = round(dt, 12)
                if key not in cache:
                    cache[key] = scipy.linalg.expm(M * dt)
                v = cache[key] @ v
            out[k] = v
            t_prev = t
    else:
        method = "rk45"
        if times[-1] == 0:
            out[:] = v0
        else:
            sol = solve_ivp(lambda t, y: M @ y, (0.0, float(times[-1])), v0, method="RK45",
                            t_eval=times, rtol=rtol, atol=atol)
            if not sol.success:
                raise DiagnosticError(f"integrator failed: {sol.message}")
            out[:] = sol.y.T
    states = np.array([L.unvectorize(v) for v in out])
    if "trace_preserving" in L.flags:
        drift = np.max(np.abs(np.trace(states, axis1=1, axis2=2) - np.trace(rho0)))
        if drift > 1e-6:
            raise DiagnosticError(f"trace drift {drift:.2e} for a trace-preserving generator")
    return Trajectory(times, states, method)
