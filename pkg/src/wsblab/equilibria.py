"""Lagrange points, Euler's quintic and the linear spectrum at L1."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .dynamics import SystemParams, hamiltonian, jacobian, potential_gradient, potential_hessian
from .errors import SpectrumMismatch


@dataclass(frozen=True)
class LagrangePointSet:
    positions: dict  # name -> (x, y)
    energies: dict  # name -> H at the point
    x_plus: float

    def __getitem__(self, name):
        return self.positions[name]

    @property
    def x_l1(self) -> float:
        return self.positions["L1"][0]


@dataclass(frozen=True)
class L1Spectrum:
    lam: float
    nu: float
    eigenvalues: tuple

    @property
    def linear_period(self) -> float:
        return 2.0 * math.pi / self.nu


def quintic(x: float, mu: float) -> float:
    """Left-hand side of Euler's quintic for the L1 - P2 distance."""
    return ((((x - (3.0 - mu)) * x + (3.0 - 2.0 * mu)) * x - mu) * x + 2.0 * mu) * x - mu


def _quintic_prime(x: float, mu: float) -> float:
    return (((5.0 * x - 4.0 * (3.0 - mu)) * x + 3.0 * (3.0 - 2.0 * mu)) * x - 2.0 * mu) * x + 2.0 * mu


def quintic_root(params: SystemParams) -> float:
    """Positive root ``x_plus`` of Euler's quintic in (0, 1).

    Newton iteration safeguarded by the sign bracket ``f(0) = -mu < 0 < 1 - mu = f(1)``;
    a step leaving the bracket is replaced by bisection.
    """
    mu = params.mu
    lo, hi = 0.0, 1.0
    x = min((mu / 3.0) ** (1.0 / 3.0), 0.5)
    for _ in range(200):
        fx = quintic(x, mu)
        if fx == 0.0:
            return x
        if fx < 0.0:
            lo = x
        else:
            hi = x
        d = _quintic_prime(x, mu)
        x_new = x - fx / d if d != 0.0 else 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 4e-16 * max(abs(x), 1e-300):
            x = x_new
            break
        x = x_new
    return x


def _collinear(params: SystemParams, lo: float, hi: float) -> float:
    def g(x):
        return potential_gradient(x, 0.0, params)[0]

    x = brentq(g, lo, hi, xtol=1e-15, maxiter=500)
    # Newton polish on d omega / dx
    for _ in range(3):
        d = potential_hessian(x, 0.0, params)[0]
        step = g(x) / d
        x -= step
        if abs(step) < 1e-16:
            break
    return x


def lagrange_points(params: SystemParams) -> LagrangePointSet:
    mu = params.mu
    x_plus = quintic_root(params)
    x1 = -1.0 + mu + x_plus
    tiny = 1e-9
    # L2 beyond the lighter primary, L3 beyond the heavier one
    x2 = _collinear(params, -2.5, -1.0 + mu - tiny)
    x3 = _collinear(params, mu + tiny, 2.5)
    h = math.sqrt(3.0) / 2.0
    positions = {
        "L1": (x1, 0.0),
        "L2": (x2, 0.0),
        "L3": (x3, 0.0),
        "L4": (mu - 0.5, h),
        "L5": (mu - 0.5, -h),
    }
    energies = {k: hamiltonian((p[0], p[1], 0.0, 0.0), params) for k, p in positions.items()}
    return LagrangePointSet(positions, energies, x_plus)


def l1_spectrum(params: SystemParams, tol: float = 1e-10) -> L1Spectrum:
    """Eigenvalues ``{+-lam, +-i nu}`` of the linearisation at L1."""
    pts = lagrange_points(params)
    x1 = pts.x_l1
    J = jacobian((x1, 0.0, 0.0, 0.0), params)
    ev = np.linalg.eigvals(J)
    real = sorted(ev[np.abs(ev.imag) <= tol * max(1.0, np.abs(ev).max())].real)
    imag = sorted(ev[np.abs(ev.imag) > tol * max(1.0, np.abs(ev).max())].imag)
    if len(real) != 2 or len(imag) != 2:
        raise SpectrumMismatch(f"L1 spectrum is not of saddle-centre type: {ev}")
    lam = 0.5 * (real[1] - real[0])
    nu = 0.5 * (imag[1] - imag[0])
    if abs(real[0] + real[1]) > tol * lam or abs(imag[0] + imag[1]) > tol * nu or lam <= 0 or nu <= 0:
        raise SpectrumMismatch(f"L1 spectrum is not symmetric: {ev}")
    return L1Spectrum(lam, nu, (lam, -lam, complex(0.0, nu), complex(0.0, -nu)))
