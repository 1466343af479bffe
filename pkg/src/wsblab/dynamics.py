"""Equations of motion, energy and coordinate transformations of the PCRTBP.

Conventions: the heavier primary P1 sits at ``(mu, 0)`` and the lighter
primary P2 at ``(-1 + mu, 0)`` in the rotating frame. States are 4-vectors
``(x, y, vx, vy)`` where the velocity is the time derivative in the rotating
frame.

Polar coordinates are taken about P1. ``PolarState.thetadot`` is the angular
rate seen in the rotating frame; the osculating (two-body) rate about P1 is
``thetadot + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import AmbiguousEllipse, Collision, HyperbolicOsculation, NoAdmissibleEllipse, Singularity

TWO_PI = 2.0 * math.pi

# distances below this are treated as coincident with a primary
_SINGULAR_FLOOR = 1e-300


@dataclass(frozen=True)
class SystemParams:
    """Mass ratio ``mu = m2 / (m1 + m2)`` and the collision-guard radius."""

    mu: float
    r_min: float = 1e-4

    def __post_init__(self):
        if not (0.0 < self.mu <= 0.5):
            raise ValueError(f"mu must lie in (0, 1/2], got {self.mu!r}")
        if not self.r_min > 0.0:
            raise ValueError(f"r_min must be positive, got {self.r_min!r}")

    @property
    def gm1(self) -> float:
        return 1.0 - self.mu

    @property
    def p1(self) -> tuple[float, float]:
        return (self.mu, 0.0)

    @property
    def p2(self) -> tuple[float, float]:
        return (-1.0 + self.mu, 0.0)


class RotatingState(NamedTuple):
    x: float
    y: float
    vx: float
    vy: float


class PolarState(NamedTuple):
    r: float
    rdot: float
    theta: float
    thetadot: float


class OsculatingElements(NamedTuple):
    a: float
    e: float
    phi: float
    tau: float


def _mu(params) -> float:
    return params.mu if isinstance(params, SystemParams) else float(params)


def primary_distances(x: float, y: float, mu: float) -> tuple[float, float]:
    return math.hypot(x - mu, y), math.hypot(x + 1.0 - mu, y)


def effective_potential(x: float, y: float, params: SystemParams) -> float:
    """Effective potential ``omega(x, y)`` including the constant ``mu(1-mu)/2``."""
    mu = _mu(params)
    r1, r2 = primary_distances(x, y, mu)
    if r1 <= _SINGULAR_FLOOR or r2 <= _SINGULAR_FLOOR:
        raise Singularity(f"potential evaluated at a primary: (x, y) = ({x}, {y})")
    return 0.5 * (x * x + y * y) + (1.0 - mu) / r1 + mu / r2 + 0.5 * mu * (1.0 - mu)


def potential_gradient(x: float, y: float, params: SystemParams) -> tuple[float, float]:
    mu = _mu(params)
    dx1 = x - mu
    dx2 = x + 1.0 - mu
    r1 = math.hypot(dx1, y)
    r2 = math.hypot(dx2, y)
    if r1 <= _SINGULAR_FLOOR or r2 <= _SINGULAR_FLOOR:
        raise Singularity(f"gradient evaluated at a primary: (x, y) = ({x}, {y})")
    c1 = (1.0 - mu) / (r1 * r1 * r1)
    c2 = mu / (r2 * r2 * r2)
    return x - c1 * dx1 - c2 * dx2, y - c1 * y - c2 * y


def potential_hessian(x: float, y: float, params: SystemParams) -> tuple[float, float, float]:
    """Second derivatives ``(omega_xx, omega_xy, omega_yy)``."""
    mu = _mu(params)
    dx1 = x - mu
    dx2 = x + 1.0 - mu
    r1sq = dx1 * dx1 + y * y
    r2sq = dx2 * dx2 + y * y
    r1 = math.sqrt(r1sq)
    r2 = math.sqrt(r2sq)
    if r1 <= _SINGULAR_FLOOR or r2 <= _SINGULAR_FLOOR:
        raise Singularity(f"hessian evaluated at a primary: (x, y) = ({x}, {y})")
    c1 = (1.0 - mu) / (r1sq * r1)
    c2 = mu / (r2sq * r2)
    d1 = 3.0 * c1 / r1sq
    d2 = 3.0 * c2 / r2sq
    wxx = 1.0 - c1 - c2 + d1 * dx1 * dx1 + d2 * dx2 * dx2
    wyy = 1.0 - c1 - c2 + (d1 + d2) * y * y
    wxy = (d1 * dx1 + d2 * dx2) * y
    return wxx, wxy, wyy


def check_guard(s, params: SystemParams) -> None:
    """Raise :class:`Collision` inside the guard radius. A bare ``mu`` only rejects exact hits."""
    r_min = params.r_min if isinstance(params, SystemParams) else _SINGULAR_FLOOR
    r1, r2 = primary_distances(s[0], s[1], _mu(params))
    if r1 <= r_min or r2 <= r_min:
        raise Collision(f"state within r_min={r_min} of a primary (r1={r1:.3e}, r2={r2:.3e})", state=np.asarray(s))


def vector_field(s, params: SystemParams) -> np.ndarray:
    """Time derivative ``(vx, vy, 2 vy + omega_x, -2 vx + omega_y)``."""
    check_guard(s, params)
    x, y, vx, vy = s
    wx, wy = potential_gradient(x, y, params)
    return np.array([vx, vy, 2.0 * vy + wx, -2.0 * vx + wy])


def rhs(t, s, mu):
    """Unguarded right-hand side in the ``f(t, y)`` form used by the integrators."""
    x, y, vx, vy = s
    dx1 = x - mu
    dx2 = x + 1.0 - mu
    r1 = math.sqrt(dx1 * dx1 + y * y)
    r2 = math.sqrt(dx2 * dx2 + y * y)
    c1 = (1.0 - mu) / (r1 * r1 * r1)
    c2 = mu / (r2 * r2 * r2)
    return np.array([vx, vy, 2.0 * vy + x - c1 * dx1 - c2 * dx2, -2.0 * vx + y - (c1 + c2) * y])


def jacobian(s, params: SystemParams) -> np.ndarray:
    wxx, wxy, wyy = potential_hessian(s[0], s[1], params)
    return np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [wxx, wxy, 0.0, 2.0],
            [wxy, wyy, -2.0, 0.0],
        ]
    )


def variational_field(s, phi, params: SystemParams) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the state and of the 4x4 sensitivity ``phi``: ``dphi/dt = J(s) phi``."""
    ds = vector_field(s, params)
    return ds, jacobian(s, params) @ np.asarray(phi).reshape(4, 4)


def rhs_with_stm(t, z, mu):
    """Unguarded right-hand side for the 20-dimensional state + sensitivity system."""
    s = z[:4]
    wxx, wxy, wyy = potential_hessian(s[0], s[1], mu)
    jac = np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [wxx, wxy, 0.0, 2.0],
            [wxy, wyy, -2.0, 0.0],
        ]
    )
    out = np.empty(20)
    out[:4] = rhs(t, s, mu)
    out[4:] = (jac @ z[4:].reshape(4, 4)).ravel()
    return out


def hamiltonian(s, params: SystemParams) -> float:
    """Energy ``H = (vx^2 + vy^2) / 2 - omega(x, y)``."""
    x, y, vx, vy = s
    return 0.5 * (vx * vx + vy * vy) - effective_potential(x, y, params)


def polar_from_cartesian(s, params: SystemParams) -> PolarState:
    mu = _mu(params)
    x, y, vx, vy = s
    dx = x - mu
    r = math.hypot(dx, y)
    if r == 0.0:
        raise Singularity("polar angle undefined at P1")
    theta = math.atan2(y, dx) % TWO_PI
    rdot = (dx * vx + y * vy) / r
    thetadot = (dx * vy - y * vx) / (r * r)
    return PolarState(r, rdot, theta, thetadot)


def cartesian_from_polar(p: PolarState, params: SystemParams) -> RotatingState:
    mu = _mu(params)
    r, rdot, theta, thetadot = p
    if not r > 0.0:
        raise Singularity("polar radius must be positive")
    c = math.cos(theta)
    s = math.sin(theta)
    return RotatingState(
        mu + r * c,
        r * s,
        rdot * c - r * thetadot * s,
        rdot * s + r * thetadot * c,
    )


def elements_from_state(s, params: SystemParams) -> OsculatingElements:
    """Osculating ellipse about P1 (gravitational parameter ``1 - mu``).

    The inertial velocity relative to P1 is the rotating-frame velocity plus
    the frame rotation ``(-y, x - mu)``.
    """
    mu = _mu(params)
    gm = 1.0 - mu
    x, y, vx, vy = s
    dx = x - mu
    r = math.hypot(dx, y)
    if r == 0.0:
        raise Singularity("elements undefined at P1")
    ux = vx - y
    uy = vy + dx
    h = dx * uy - y * ux
    rdot = (dx * ux + y * uy) / r
    p = h * h / gm
    # eccentricity vector: avoids the cancellation in sqrt(1 + 2 E p / gm) near e = 0
    ex = (uy * h) / gm - dx / r
    ey = (-ux * h) / gm - y / r
    e = math.hypot(ex, ey)
    if e >= 1.0:
        raise HyperbolicOsculation(f"osculating eccentricity {e:.6g} >= 1")
    a = p / (1.0 - e * e)
    theta = math.atan2(y, dx) % TWO_PI
    if e == 0.0:
        tau = 0.0
    else:
        tau = math.atan2(rdot * h / gm, p / r - 1.0) % TWO_PI
    phi = (theta - tau) % TWO_PI
    return OsculatingElements(a, e, phi, tau)


def state_from_wsb_coords(r0: float, rdot0: float, theta0: float, e0: float, params: SystemParams, root: str | None = "periapsis"):
    """Build the rotating state fixed by ``(r0, rdot0, theta0, e0)``.

    The semi-latus rectum ``p`` solves
    ``p^2/r0^2 + p (rdot0^2/(1-mu) - 2/r0) + (1 - e0^2) = 0``. When both roots
    are admissible, ``root="periapsis"`` keeps the one with the smaller
    ``|tau|``, ``root="other"`` the remaining one and ``root=None`` raises
    :class:`AmbiguousEllipse`.

    Returns ``(RotatingState, H, OsculatingElements)``.
    """
    mu = _mu(params)
    gm = 1.0 - mu
    r_min = params.r_min if isinstance(params, SystemParams) else 0.0
    if not r0 > r_min:
        raise NoAdmissibleEllipse(f"r0={r0} not above the collision guard")
    if not 0.0 <= e0 < 1.0:
        raise NoAdmissibleEllipse(f"e0={e0} outside [0, 1)")
    qa = 1.0 / (r0 * r0)
    qb = rdot0 * rdot0 / gm - 2.0 / r0
    qc = 1.0 - e0 * e0
    # qb^2 - 4 qa qc expanded so that it vanishes exactly for a circular start
    u = rdot0 * rdot0 / gm
    disc = u * (u - 4.0 / r0) + 4.0 * e0 * e0 / (r0 * r0)
    if disc < 0.0:
        if disc > -1e-14 * qb * qb:
            disc = 0.0
        else:
            raise NoAdmissibleEllipse(f"no ellipse with e={e0} through r={r0}, rdot={rdot0}")
    sq = math.sqrt(disc)
    # numerically stable pair of roots
    qq = -0.5 * (qb - sq) if qb < 0.0 else -0.5 * (qb + sq)
    roots = {qq / qa}
    if qq != 0.0:
        roots.add(qc / qq)
    candidates = []
    for p in sorted(roots):
        if p > 0.0:
            tau = math.atan2(rdot0 * math.sqrt(p / gm), p / r0 - 1.0) if e0 > 0.0 else 0.0
            candidates.append((abs(tau), p, tau))
    if not candidates:
        raise NoAdmissibleEllipse(f"no positive semi-latus rectum for r={r0}, rdot={rdot0}, e={e0}")
    candidates.sort()
    if len(candidates) > 1 and abs(candidates[0][1] - candidates[1][1]) > 1e-15 * candidates[0][1]:
        if root is None:
            raise AmbiguousEllipse(f"two admissible ellipses for r={r0}, rdot={rdot0}, e={e0}")
        if root == "other":
            candidates = candidates[1:]
        elif root != "periapsis":
            raise ValueError(f"unknown root selector {root!r}")
    _, p, tau = candidates[0]
    osc_rate = math.sqrt(p * gm) / (r0 * r0)
    thetadot = osc_rate - 1.0
    if not thetadot > 0.0:
        raise NoAdmissibleEllipse(
            f"rotating-frame rate {thetadot:.3e} is not positive at r={r0}; the state is not on the section"
        )
    state = cartesian_from_polar(PolarState(r0, rdot0, theta0, thetadot), params)
    elements = OsculatingElements(p / (1.0 - e0 * e0), e0, (theta0 - tau) % TWO_PI, tau % TWO_PI)
    return state, hamiltonian(state, params), elements


def section_state(r: float, rdot: float, theta0: float, H: float, params: SystemParams) -> RotatingState:
    """State on the section ``theta = theta0`` with positive rotating rate fixed by the energy ``H``."""
    c, s = math.cos(theta0), math.sin(theta0)
    x = params.mu + r * c
    y = r * s
    v2 = 2.0 * (H + effective_potential(x, y, params)) - rdot * rdot
    if v2 <= 0.0:
        raise NoAdmissibleEllipse(f"(r, rdot)=({r}, {rdot}) is not on the section at H={H}")
    thetadot = math.sqrt(v2) / r
    return cartesian_from_polar(PolarState(r, rdot, theta0, thetadot), params)
