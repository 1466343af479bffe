"""Conley isolating block about L1, Hill-region membership and section constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq
from skimage.measure import find_contours

from .dynamics import SystemParams, effective_potential, potential_gradient
from .equilibria import lagrange_points
from .errors import Collision, NotIsolating, NotOnBoundary
from .propagation import propagate, x_plane

INSIDE = "inside"
OUTSIDE = "outside"
BOUNDARY = "boundary"

EXIT = "exit"
ENTRY = "entry"
TANGENCY = "tangency"

TRANSIT = "transit"
BOUNCE = "bounce"
DWELL = "dwell"

DEFAULT_DWELL_BUDGET = 50.0


@dataclass(frozen=True)
class BlockSpec:
    a: float
    b: float
    validated: bool = False


@dataclass(frozen=True)
class BoundaryClass:
    side: str  # "a" or "b"
    kind: str  # exit / entry / tangency


@dataclass(frozen=True)
class TransitOutcome:
    kind: str
    entry: tuple  # (t, state)
    exit: tuple | None


@dataclass(frozen=True)
class SectionGeometry:
    H_star: float
    y_b: float
    theta1: float
    D1: float
    a: float
    b: float

    def admissible(self, theta0: float) -> bool:
        """True when ``theta0`` (mod 2 pi, taken in (-pi, pi]) avoids the block sector."""
        th = (theta0 + math.pi) % (2.0 * math.pi) - math.pi
        return -math.pi + self.theta1 < th < math.pi - self.theta1


def default_block_spec(params: SystemParams, fraction: float = 0.4) -> BlockSpec:
    pts = lagrange_points(params)
    d = fraction * pts.x_plus
    return BlockSpec(pts.x_l1 - d, pts.x_l1 + d)


def hill_membership(x: float, y: float, H: float, params: SystemParams, tol: float = 1e-12) -> str:
    """Position ``(x, y)`` against the Hill region of energy ``H``."""
    g = effective_potential(x, y, params) + H
    if abs(g) < tol:
        return BOUNDARY
    return INSIDE if g > 0.0 else OUTSIDE


def zero_velocity_curve(H: float, params: SystemParams, resolution: int = 400, extent: float = 2.0, tol: float = 1e-12):
    """Traced components of the level set ``omega(x, y) + H = 0``.

    Marching squares on a ``resolution x resolution`` grid over
    ``[-extent, extent]^2`` gives polylines; each vertex is then moved onto
    the curve by Newton steps along the gradient. Returns a list of
    ``(k, 2)`` arrays.
    """
    omega_min = 1.5  # minimum of omega, attained at L4 and L5
    if -H <= omega_min:
        raise ValueError(f"H={H} is above the minimum of -omega; the Hill region is the whole plane")
    xs = np.linspace(-extent, extent, resolution)
    ys = np.linspace(-extent, extent, resolution)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    mu = params.mu
    r1 = np.hypot(X - mu, Y)
    r2 = np.hypot(X + 1.0 - mu, Y)
    with np.errstate(divide="ignore"):
        W = 0.5 * (X**2 + Y**2) + (1.0 - mu) / r1 + mu / r2 + 0.5 * mu * (1.0 - mu) + H
    W = np.where(np.isfinite(W), W, 1e6)
    h = xs[1] - xs[0]
    curves = []
    for c in find_contours(W, 0.0):
        pts = np.column_stack([xs[0] + c[:, 0] * h, ys[0] + c[:, 1] * h])
        for k in range(len(pts)):
            x, y = pts[k]
            for _ in range(50):
                g = effective_potential(x, y, params) + H
                if abs(g) < tol:
                    break
                gx, gy = potential_gradient(x, y, params)
                n2 = gx * gx + gy * gy
                x -= g * gx / n2
                y -= g * gy / n2
            pts[k] = x, y
        curves.append(pts)
    return curves


def classify_boundary_point(s, spec: BlockSpec, tol: float = 1e-10) -> BoundaryClass:
    x, vx = s[0], s[2]
    if abs(x - spec.a) < tol:
        side = "a"
    elif abs(x - spec.b) < tol:
        side = "b"
    else:
        raise NotOnBoundary(f"x={x} is on neither x=a={spec.a} nor x=b={spec.b}")
    if abs(vx) < tol:
        return BoundaryClass(side, TANGENCY)
    outward = vx < 0.0 if side == "a" else vx > 0.0
    return BoundaryClass(side, EXIT if outward else ENTRY)


def neck_height(x: float, H: float, params: SystemParams, y_cap: float = 1.0) -> float:
    """Largest ``y > 0`` such that ``(x, s)`` is in the Hill region for all ``0 <= s <= y``.

    Returns 0 if ``(x, 0)`` itself is outside.
    """
    f = lambda y: effective_potential(x, y, params) + H  # noqa: E731
    if f(0.0) <= 0.0:
        return 0.0
    ys = np.linspace(0.0, y_cap, 2001)
    for y0, y1 in zip(ys[:-1], ys[1:]):
        if f(y1) <= 0.0:
            return brentq(f, y0, y1, xtol=1e-15)
    return y_cap


def _tangency_states(x, H, params, n):
    ymax = neck_height(x, H, params)
    if ymax == 0.0:
        return []
    out = []
    for y in np.linspace(-ymax, ymax, n)[1:-1]:
        v2 = 2.0 * (effective_potential(x, y, params) + H)
        if v2 < 0.0:
            continue
        v = math.sqrt(v2)
        out.append((x, y, 0.0, v))
        out.append((x, y, 0.0, -v))
    return out


def validate_block(spec: BlockSpec, H: float, params: SystemParams, n_samples: int = 200) -> BlockSpec:
    """Check the tangency conditions ``xddot < 0`` on ``x = a`` and ``xddot > 0`` on ``x = b``."""
    x1 = lagrange_points(params).x_l1
    if not spec.a < x1 < spec.b:
        raise ValueError(f"block planes must straddle x_L1={x1}: a={spec.a}, b={spec.b}")
    for x, sgn in ((spec.a, -1.0), (spec.b, 1.0)):
        states = _tangency_states(x, H, params, n_samples)
        if not states:
            raise NotIsolating(f"no Hill-region tangency samples on x={x} at H={H}")
        for s in states:
            wx, _ = potential_gradient(s[0], s[1], params)
            xddot = 2.0 * s[3] + wx
            if sgn * xddot <= 0.0:
                raise NotIsolating(f"tangency at x={x}, y={s[1]:.6g}, vy={s[3]:.6g} has xddot={xddot:.3e}")
    return replace(spec, validated=True)


def validate_block_band(spec: BlockSpec, H_lo: float, H_hi: float, params: SystemParams, n_energies: int = 8, n_samples: int = 200) -> BlockSpec:
    for H in np.linspace(H_lo, H_hi, n_energies + 1)[1:]:
        spec = validate_block(spec, H, params, n_samples)
    return spec


def section_geometry(spec: BlockSpec, H_star: float, params: SystemParams) -> SectionGeometry:
    y_b = neck_height(spec.b, H_star, params)
    theta1 = math.atan(y_b / (params.mu - spec.b))
    return SectionGeometry(H_star, y_b, theta1, params.mu - spec.a, spec.a, spec.b)


def block_transit(s_entry, spec: BlockSpec, params: SystemParams, T_max: float = DEFAULT_DWELL_BUDGET) -> TransitOutcome:
    """Follow an entry state on ``x = b`` until it leaves the block or ``T_max`` elapses."""
    cls = classify_boundary_point(s_entry, spec)
    if cls.side != "b" or cls.kind != ENTRY:
        raise NotOnBoundary(f"state is not in the entry set of x=b ({cls})")
    traj = propagate(
        s_entry,
        T_max,
        [x_plane(spec.a, -1, True, "a"), x_plane(spec.b, 1, True, "b")],
        params,
    )
    entry = (0.0, np.asarray(s_entry, dtype=float))
    if traj.status == "event:a":
        return TransitOutcome(TRANSIT, entry, (traj.final_time, traj.final_state))
    if traj.status == "event:b":
        return TransitOutcome(BOUNCE, entry, (traj.final_time, traj.final_state))
    return TransitOutcome(DWELL, entry, None)


def first_block_encounter(s0, spec: BlockSpec, params: SystemParams, t_max: float = 200.0):
    """Propagate ``s0`` to its first entry through ``x = b``; returns the entry state or None."""
    try:
        traj = propagate(s0, t_max, [x_plane(spec.b, -1, True, "b")], params)
    except Collision:
        return None
    return traj.final_state if traj.status == "event:b" else None
