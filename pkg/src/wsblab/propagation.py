"""Adaptive trajectory propagation with event detection.

Integration uses scipy's DOP853 stepper driven step by step, so that events
can be localised on the dense output of each step and the unwrapped polar
angle about P1 can be tracked as the trajectory advances.

Event directions always refer to *forward* time: ``direction=+1`` fires when
the event function increases through zero as ``t`` increases, regardless of
whether the integration itself runs forwards or backwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.integrate import DOP853
from scipy.optimize import brentq

from .dynamics import TWO_PI, SystemParams, check_guard, hamiltonian, rhs, rhs_with_stm
from .errors import Collision, EnergyDriftExceeded, StepFailure

DEFAULT_RTOL = 1e-12
DEFAULT_ATOL = 1e-12

_tolerances = {"rtol": DEFAULT_RTOL, "atol": DEFAULT_ATOL}


def set_default_tolerances(rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> None:
    """Change the tolerances used when ``propagate`` is called without explicit ones."""
    if not (rtol > 0.0 and atol > 0.0):
        raise ValueError("tolerances must be positive")
    _tolerances["rtol"] = float(rtol)
    _tolerances["atol"] = float(atol)


def current_tolerances() -> tuple[float, float]:
    return _tolerances["rtol"], _tolerances["atol"]


@dataclass(frozen=True)
class EventSpec:
    """Scalar event ``g(t, state) = 0``.

    ``accept`` optionally filters roots (for example restricting a line
    crossing to a half-line); rejected roots are not recorded and never
    terminate the integration.
    """

    func: Callable[[float, np.ndarray], float]
    direction: int = 0
    terminal: bool = False
    name: str = ""
    accept: Callable[[float, np.ndarray], bool] | None = None


class EventRecord(NamedTuple):
    t: float
    state: np.ndarray
    name: str
    index: int
    theta: float  # unwrapped polar angle about P1 at the event
    sensitivity: np.ndarray | None = None


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    states: np.ndarray
    theta: np.ndarray
    events: list = field(default_factory=list)
    status: str = "t_max"
    energy_drift: float = 0.0
    energy_flagged: bool = False
    samples: np.ndarray | None = None  # states at requested t_eval, if any

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.t[-1])

    def events_named(self, name: str) -> list:
        return [e for e in self.events if e.name == name]


def _wrap(a: float) -> float:
    return (a + math.pi) % TWO_PI - math.pi


def angle_crossing(theta0: float, params: SystemParams, direction: int = 0, terminal: bool = False, name: str = "section"):
    """Crossing of the half-line from P1 at polar angle ``theta0``.

    The event function is ``r sin(theta - theta0)``, whose forward-time slope on
    the half-line is ``r * thetadot``; ``direction=+1`` therefore selects
    crossings with positive rotating-frame angular rate.
    """
    mu = params.mu
    c, s = math.cos(theta0), math.sin(theta0)

    def g(t, z):
        return -(z[0] - mu) * s + z[1] * c

    def on_half_line(t, z):
        return (z[0] - mu) * c + z[1] * s > 0.0

    return EventSpec(g, direction, terminal, name, on_half_line)


def radius_threshold(D: float, params: SystemParams, direction: int = 1, terminal: bool = True, name: str = "radius"):
    """Distance to P1 crossing ``D``."""
    mu = params.mu

    def g(t, z):
        return math.hypot(z[0] - mu, z[1]) - D

    return EventSpec(g, direction, terminal, name)


def x_plane(x0: float, direction: int = 0, terminal: bool = False, name: str = "x-plane"):
    def g(t, z):
        return z[0] - x0

    return EventSpec(g, direction, terminal, name)


def y_crossing(direction: int = 0, terminal: bool = False, name: str = "y=0"):
    """Crossing of the x-axis (``y = 0``)."""

    def g(t, z):
        return z[1]

    return EventSpec(g, direction, terminal, name)


def custom_event(func, direction: int = 0, terminal: bool = False, name: str = "custom", accept=None):
    return EventSpec(func, direction, terminal, name, accept)


def _crossing(g_old: float, g_new: float, forward: bool, direction: int) -> bool:
    if not ((g_old < 0.0 < g_new) or (g_old > 0.0 > g_new) or (g_new == 0.0 and g_old != 0.0)):
        return False
    if direction == 0:
        return True
    g_early, g_late = (g_old, g_new) if forward else (g_new, g_old)
    rising = g_early < g_late
    return rising if direction > 0 else not rising


def _integrate(
    fun,
    z0: np.ndarray,
    t0: float,
    t_max: float,
    events: Sequence[EventSpec],
    params: SystemParams,
    rtol: float,
    atol: float,
    stop,
    energy_tol,
    check_collision: bool,
    t_eval,
    with_stm: bool,
):
    mu = params.mu
    r_min = params.r_min
    t_end = t0 + t_max
    forward = t_max >= 0
    H0 = hamiltonian(z0[:4], params)
    theta_cur = math.atan2(z0[1], z0[0] - mu)
    theta_unwrapped = theta_cur

    ts = [t0]
    zs = [z0.copy()]
    thetas = [theta_unwrapped]
    records: list[EventRecord] = []
    drift = 0.0
    status = "t_max"
    samples = None
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        samples = np.full((t_eval.size, z0.size), np.nan)
        samples[t_eval == t0] = z0

    if t_max == 0.0:
        return ts, zs, thetas, records, drift, status, samples

    solver = DOP853(lambda t, y: fun(t, y, mu), t0, z0, t_end, rtol=rtol, atol=atol)
    g_prev = [spec.func(t0, z0) for spec in events]

    while True:
        message = solver.step()
        if solver.status == "failed":
            raise StepFailure(f"integration failed at t={solver.t}: {message}")
        t_old, t_new = solver.t_old, solver.t
        z_new = solver.y
        dense = None

        if t_eval is not None:
            lo, hi = (t_old, t_new) if forward else (t_new, t_old)
            mask = (t_eval > lo) & (t_eval <= hi) if forward else (t_eval >= lo) & (t_eval < hi)
            if mask.any():
                dense = solver.dense_output()
                samples[mask] = dense(t_eval[mask]).T

        hits = []
        g_new_all = []
        for k, spec in enumerate(events):
            g_new = spec.func(t_new, z_new)
            g_new_all.append(g_new)
            if not _crossing(g_prev[k], g_new, forward, spec.direction):
                continue
            if dense is None:
                dense = solver.dense_output()
            if g_new == 0.0:
                t_ev = t_new
            else:
                f = lambda t, spec=spec: spec.func(t, dense(t))  # noqa: E731
                a, b = (t_old, t_new) if forward else (t_new, t_old)
                t_ev = brentq(f, a, b, xtol=1e-14, maxiter=200)
            z_ev = z_new.copy() if t_ev == t_new else dense(t_ev)
            if spec.accept is not None and not spec.accept(t_ev, z_ev):
                continue
            hits.append((abs(t_ev - t_old), k, t_ev, z_ev))
        g_prev = g_new_all

        terminated = False
        if hits:
            hits.sort(key=lambda h: (h[0], h[1]))
            for _, k, t_ev, z_ev in hits:
                th = theta_unwrapped + _wrap(math.atan2(z_ev[1], z_ev[0] - mu) - theta_cur)
                rec = EventRecord(
                    float(t_ev),
                    z_ev[:4].copy(),
                    events[k].name,
                    k,
                    th,
                    z_ev[4:].reshape(4, 4).copy() if with_stm else None,
                )
                records.append(rec)
                if events[k].terminal or (stop is not None and stop(rec)):
                    terminated = True
                    status = f"event:{events[k].name}" if events[k].terminal else "stop"
                    t_new, z_new = t_ev, z_ev
                    break

        theta_new_raw = math.atan2(z_new[1], z_new[0] - mu)
        theta_unwrapped += _wrap(theta_new_raw - theta_cur)
        theta_cur = theta_new_raw

        if check_collision:
            r1 = math.hypot(z_new[0] - mu, z_new[1])
            r2 = math.hypot(z_new[0] + 1.0 - mu, z_new[1])
            if r1 <= r_min or r2 <= r_min:
                raise Collision(
                    f"trajectory entered the collision guard at t={t_new:.6g} (r1={r1:.3e}, r2={r2:.3e})",
                    t=t_new,
                    state=np.array(z_new[:4]),
                )

        drift = max(drift, abs(hamiltonian(z_new[:4], params) - H0))
        ts.append(float(t_new))
        zs.append(np.array(z_new))
        thetas.append(theta_unwrapped)
        if terminated or solver.status == "finished":
            break

    if energy_tol is not None and drift > energy_tol:
        raise EnergyDriftExceeded(f"energy drift {drift:.3e} exceeds {energy_tol:.1e}")
    return ts, zs, thetas, records, drift, status, samples


def propagate(
    s0,
    t_max: float,
    events: Sequence[EventSpec] = (),
    params: SystemParams | None = None,
    rtol: float | None = None,
    atol: float | None = None,
    stop=None,
    t0: float = 0.0,
    energy_tol: float | None = None,
    drift_flag: float = 1e-10,
    check_collision: bool = True,
    t_eval=None,
) -> Trajectory:
    """Propagate ``s0`` for a signed duration ``t_max``.

    ``stop(record)`` is called for every recorded event; returning True ends
    the integration at that event. ``energy_tol`` turns the energy drift
    check into an error; otherwise drifts above ``drift_flag`` only set
    ``Trajectory.energy_flagged``.
    """
    if params is None:
        raise TypeError("params is required")
    rtol = _tolerances["rtol"] if rtol is None else rtol
    atol = _tolerances["atol"] if atol is None else atol
    z0 = np.array(s0, dtype=float).reshape(4)
    if check_collision:
        check_guard(z0, params)
    ts, zs, thetas, records, drift, status, samples = _integrate(
        rhs, z0, t0, t_max, events, params, rtol, atol, stop, energy_tol, check_collision, t_eval, False
    )
    return Trajectory(
        np.array(ts),
        np.array(zs),
        np.array(thetas),
        records,
        status,
        drift,
        drift > drift_flag,
        samples,
    )


def propagate_with_stm(
    s0,
    t_max: float,
    params: SystemParams,
    events: Sequence[EventSpec] = (),
    rtol: float | None = None,
    atol: float | None = None,
    stop=None,
    t0: float = 0.0,
    t_eval=None,
    check_collision: bool = True,
):
    """Propagate the state together with its 4x4 sensitivity (initially identity).

    Returns ``(Trajectory, phi_end)``. Event records carry the sensitivity at
    the event time; ``Trajectory.samples`` (if ``t_eval`` given) holds the
    20-component state + flattened sensitivity.
    """
    rtol = _tolerances["rtol"] if rtol is None else rtol
    atol = _tolerances["atol"] if atol is None else atol
    z0 = np.concatenate([np.array(s0, dtype=float).reshape(4), np.eye(4).ravel()])
    if check_collision:
        check_guard(z0[:4], params)
    ts, zs, thetas, records, drift, status, samples = _integrate(
        rhs_with_stm, z0, t0, t_max, events, params, rtol, atol, stop, None, check_collision, t_eval, True
    )
    zs = np.array(zs)
    traj = Trajectory(np.array(ts), zs[:, :4].copy(), np.array(thetas), records, status, drift, drift > 1e-10, samples)
    return traj, zs[-1, 4:].reshape(4, 4).copy()
