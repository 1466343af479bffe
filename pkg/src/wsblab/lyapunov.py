"""Planar Lyapunov orbits about L1.

Orbits are anchored at a perpendicular crossing of the x-axis on the P2 side
of L1, ``(x0, 0, 0, vy0)``, and corrected by single shooting to the next
perpendicular crossing (half a period), using the ``y -> -y`` reflection
symmetry of the equations of motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .dynamics import SystemParams, hamiltonian, potential_hessian, rhs
from .equilibria import l1_spectrum, lagrange_points
from .errors import NoConvergence, NonHyperbolic, OutOfRange, SingularCorrection
from .propagation import propagate, propagate_with_stm, y_crossing


@dataclass(frozen=True)
class LyapunovOrbit:
    state0: np.ndarray
    period: float
    energy: float
    monodromy: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    amplitude: float
    x_l1: float
    residual: float = 0.0  # |phi_T(state0) - state0|, max norm
    iterations: int = 0

    @property
    def lambda_max(self) -> float:
        """Largest real monodromy multiplier."""
        return float(np.max(np.abs(self.eigenvalues.real[np.abs(self.eigenvalues.imag) < 1e-8])))

    def stable_eigenvector(self) -> np.ndarray:
        return _eigvec(self.monodromy, 1.0 / self.lambda_max)

    def unstable_eigenvector(self) -> np.ndarray:
        return _eigvec(self.monodromy, self.lambda_max)


def _eigvec(M, target):
    w, V = np.linalg.eig(M)
    k = int(np.argmin(np.abs(w - target)))
    v = np.real(V[:, k])
    return v / np.linalg.norm(v)


def initial_guess(amplitude: float, params: SystemParams):
    """Linear-centre approximation about L1.

    Returns ``(state, period)`` with ``state = (x_L1 - amplitude, 0, 0, vy0)``
    and period ``2 pi / nu``.
    """
    x1 = lagrange_points(params).x_l1
    spec = l1_spectrum(params)
    nu = spec.nu
    wxx = potential_hessian(x1, 0.0, params)[0]
    alpha = -amplitude
    beta = -(nu * nu + wxx) * alpha / (2.0 * nu)
    return np.array([x1 + alpha, 0.0, 0.0, beta * nu]), 2.0 * math.pi / nu


def _half_period(state, params, T_guess):
    direction = -1 if state[3] > 0 else 1
    traj, _ = propagate_with_stm(
        state, 3.0 * T_guess, params, events=[y_crossing(direction, terminal=True)]
    )
    if not traj.events:
        raise NoConvergence("no half-period x-axis crossing found")
    rec = traj.events[-1]
    return rec.t, rec.state, rec.sensitivity


def differential_correct(guess, params: SystemParams, period_guess: float | None = None, tol: float = 1e-13, max_iter: int = 30):
    """Correct ``guess = (x0, 0, 0, vy0)`` at fixed ``x0`` so the next x-axis crossing is perpendicular."""
    state = np.array(guess, dtype=float)
    state[1] = 0.0
    state[2] = 0.0
    if period_guess is None:
        period_guess = initial_guess(1e-3, params)[1]
    mu = params.mu
    for it in range(max_iter + 1):
        t_half, sf, phi = _half_period(state, params, period_guess / 2.0)
        vxf = sf[2]
        if abs(vxf) < tol:
            break
        if it == max_iter:
            raise NoConvergence(f"perpendicular crossing residual {abs(vxf):.3e} after {max_iter} iterations")
        acc = rhs(0.0, sf, mu)
        denom = phi[2, 3] - acc[2] * phi[1, 3] / sf[3]
        if abs(denom) < 1e-14:
            raise SingularCorrection("correction system is singular")
        state[3] -= vxf / denom
        period_guess = 2.0 * t_half
    return _finish(state, 2.0 * t_half, params, it)


def _finish(state, period, params, iterations):
    traj, M = propagate_with_stm(state, period, params)
    x1 = lagrange_points(params).x_l1
    orbit = LyapunovOrbit(
        state0=state.copy(),
        period=period,
        energy=hamiltonian(state, params),
        monodromy=M,
        eigenvalues=np.linalg.eigvals(M),
        amplitude=abs(state[0] - x1),
        x_l1=x1,
        residual=float(np.max(np.abs(traj.final_state - state))),
        iterations=iterations,
    )
    return orbit


def check_hyperbolic(orbit: LyapunovOrbit, margin: float = 1e-3) -> None:
    if not orbit.lambda_max > 1.0 + margin:
        raise NonHyperbolic(f"largest multiplier {orbit.lambda_max:.6g} is not hyperbolic")


def default_energy_ceiling(params: SystemParams) -> float:
    e = lagrange_points(params).energies
    return e["L1"] + 0.5 * (e["L2"] - e["L1"])


class _Family:
    """Cache of corrected ``vy0`` against amplitude, used to seed new corrections."""

    def __init__(self, params):
        self.params = params
        self.known: dict[float, tuple[float, float]] = {}

    def corrected(self, amplitude):
        if amplitude in self.known:
            return self.known[amplitude]
        state, T = initial_guess(amplitude, self.params)
        if len(self.known) >= 2:
            amps = sorted(self.known, key=lambda a: abs(a - amplitude))[:2]
            (a0, (v0, T0)), (a1, (v1, T1)) = [(a, self.known[a]) for a in amps]
            w = (amplitude - a0) / (a1 - a0)
            state[3] = v0 + w * (v1 - v0)
            T = T0 + w * (T1 - T0)
        elif self.known:
            a0 = min(self.known, key=lambda a: abs(a - amplitude))
            v0, T = self.known[a0]
            state[3] = v0 * amplitude / a0
        x0, _, _, vy0 = state
        s = np.array([x0, 0.0, 0.0, state[3]])
        T_half, sf, _ = self._correct(s, T)
        self.known[amplitude] = (s[3], 2.0 * T_half)
        return self.known[amplitude]

    def _correct(self, s, T):
        mu = self.params.mu
        for it in range(40):
            t_half, sf, phi = _half_period(s, self.params, T / 2.0)
            if abs(sf[2]) < 1e-13:
                return t_half, sf, it
            acc = rhs(0.0, sf, mu)
            denom = phi[2, 3] - acc[2] * phi[1, 3] / sf[3]
            if abs(denom) < 1e-14:
                raise SingularCorrection("correction system is singular")
            s[3] -= sf[2] / denom
            T = 2.0 * t_half
        raise NoConvergence("family continuation failed to correct an orbit")

    def energy(self, amplitude):
        vy0, _ = self.corrected(amplitude)
        x1 = lagrange_points(self.params).x_l1
        return hamiltonian((x1 - amplitude, 0.0, 0.0, vy0), self.params)


def orbit_at_energy(H_target: float, params: SystemParams, H_max: float | None = None, tol: float = 1e-11) -> LyapunovOrbit:
    """Lyapunov orbit with energy ``H_target`` in ``(H(L1), H_max)``.

    Amplitude is continued geometrically from a small seed until the energy
    is bracketed, then the amplitude-energy map is solved by Brent's
    secant/bisection iteration.
    """
    pts = lagrange_points(params)
    H1 = pts.energies["L1"]
    if H_max is None:
        H_max = default_energy_ceiling(params)
    if not H1 < H_target < H_max:
        raise OutOfRange(f"OutOfRange: H={H_target!r} outside ({H1!r}, {H_max!r})")
    fam = _Family(params)
    # rough amplitude from the quadratic energy growth near L1
    a_lo = 1e-4 * pts.x_plus
    h_lo = fam.energy(a_lo) - H_target
    if h_lo > 0:
        a_lo *= 1e-2
        h_lo = fam.energy(a_lo) - H_target
    a_hi = a_lo
    h_hi = h_lo
    while h_hi < 0:
        a_lo, h_lo = a_hi, h_hi
        a_hi = a_hi * 1.6
        if a_hi > 0.9 * pts.x_plus:
            raise OutOfRange(f"OutOfRange: no Lyapunov orbit found up to H={H_target!r}")
        h_hi = fam.energy(a_hi) - H_target

    amp = brentq(lambda a: fam.energy(a) - H_target, a_lo, a_hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    vy0, T = fam.corrected(amp)
    state = np.array([pts.x_l1 - amp, 0.0, 0.0, vy0])
    orbit = _finish(state, T, params, 0)
    if abs(orbit.energy - H_target) > tol:
        raise NoConvergence(f"energy targeting residual {abs(orbit.energy - H_target):.3e}")
    return orbit


def orbit_at_amplitude(amplitude: float, params: SystemParams) -> LyapunovOrbit:
    fam = _Family(params)
    vy0, T = fam.corrected(amplitude)
    x1 = lagrange_points(params).x_l1
    return _finish(np.array([x1 - amplitude, 0.0, 0.0, vy0]), T, params, 0)


def flow_residual(orbit: LyapunovOrbit, params: SystemParams) -> float:
    traj = propagate(orbit.state0, orbit.period, (), params)
    return float(np.max(np.abs(traj.final_state - orbit.state0)))
