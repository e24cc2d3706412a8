"""Closed-form Gaussian bath functions.

``gamma`` is the Gaussian transition-rate profile satisfying KMS,
``gamma_big`` its half-line transform Gamma(w), and ``lamb_coefficient`` the
Lamb-shift weight S(w, w').
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import ConvergenceError, ValidationError

QUAD_TOL = 1e-8
CUTOFF = 8.0


@dataclass(frozen=True)
class BathProfile:
    beta: float
    delta_b: float = 1.0

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValidationError("beta must be non-negative")
        if not self.delta_b > 0:
            raise ValidationError("delta_b must be positive")

    @property
    def shift(self) -> float:
        """Peak position beta * delta_b^2 / 2 of gamma."""
        return 0.5 * self.beta * self.delta_b**2


def correlator(profile: BathProfile, t):
    """exp(i b t - D^2 t^2/2) + c.c. with b = beta D^2 / 2 (real valued)."""
    t = np.asarray(t, float)
    D = profile.delta_b
    return 2.0 * np.cos(profile.shift * t) * np.exp(-0.5 * D**2 * t**2)


def two_point(profile: BathProfile, t):
    """Two-point function c(t) whose full Fourier transform is ``gamma``.

    ``correlator(t) == 2*pi*(c(t) + conj(c(t)))``.
    """
    t = np.asarray(t, float)
    D = profile.delta_b
    return np.exp(-1j * profile.shift * t - 0.5 * D**2 * t**2) / (2 * np.pi)


def gamma(profile: BathProfile, omega):
    omega = np.asarray(omega, float)
    D = profile.delta_b
    return np.exp(-((omega - profile.shift) ** 2) / (2 * D**2)) / math.sqrt(2 * np.pi * D**2)


def _half_line(profile: BathProfile, omega: float) -> complex:
    D = profile.delta_b
    k = float(omega) - profile.shift
    T = CUTOFF / D
    env = lambda s: np.exp(-0.5 * D**2 * s**2)
    re, err_re = integrate.quad(env, 0.0, T, weight="cos", wvar=k, epsabs=1e-13, epsrel=1e-12, limit=200)
    im, err_im = integrate.quad(env, 0.0, T, weight="sin", wvar=k, epsabs=1e-13, epsrel=1e-12, limit=200)
    err = max(err_re, err_im) / (2 * np.pi)
    if err > QUAD_TOL:
        raise ConvergenceError(f"Gamma({omega}) quadrature reached only {err:.2e}")
    return complex(re, im) / (2 * np.pi)


def gamma_big(profile: BathProfile, omega):
    """Gamma(w) = int_0^{8/D} e^{i w s} c(s) ds by adaptive quadrature."""
    scalar = np.ndim(omega) == 0
    om = np.atleast_1d(np.asarray(omega, float))
    out = np.array([_half_line(profile, w) for w in om])
    return out[0] if scalar else out


def lamb_coefficient(profile: BathProfile, omega, omega_p):
    """S(w, w') = (Gamma(w) - conj(Gamma(w'))) / (2i)."""
    return (gamma_big(profile, omega) - np.conj(gamma_big(profile, omega_p))) / 2j


def correlator_l1(profile: BathProfile, T: float) -> float:
    """int_0^T |correlator(t)| dt; ``T=math.inf`` integrates the full tail."""
    if T < 0:
        raise ValidationError("T must be non-negative")
    if T == 0:
        return 0.0
    D = profile.delta_b
    # beyond 10/D the Gaussian tail contributes below 1e-20
    upper = min(T, 10.0 / D)
    b = profile.shift
    points = None
    if b > 0:
        j = np.arange(0, int(b * upper / np.pi) + 2)
        zeros = (np.pi / 2 + np.pi * j) / b
        zeros = zeros[zeros < upper]
        points = zeros if zeros.size else None
    f = lambda t: abs(correlator(profile, t))
    val, err = integrate.quad(f, 0.0, upper, points=points, limit=max(200, 4 * (0 if points is None else len(points))),
                              epsabs=1e-13, epsrel=1e-12)
    return float(val)


def fourier_spectrum(func, t_max: float, n: int):
    """Trapezoid transform int e^{i w t} func(t) dt on the FFT frequency grid.

    Returns ``(omega, values)`` with ``omega`` ascending.
    """
    dt = 2 * t_max / n
    t = (np.arange(n) - n // 2) * dt
    samples = np.asarray(func(t), complex)
    # sum_j f(t_j) e^{i w_k t_j} dt with w_k = 2 pi k / (n dt)
    vals = np.fft.ifft(np.fft.ifftshift(samples)) * n * dt
    omega = 2 * np.pi * np.fft.fftfreq(n, d=dt)
    order = np.argsort(omega)
    return omega[order], vals[order]


def bath_table(profile: BathProfile, omegas):
    om = np.asarray(omegas, float)
    G = gamma_big(profile, om)
    return {"omega": om, "gamma": gamma(profile, om), "re_Gamma": np.real(G), "im_Gamma": np.imag(G)}
