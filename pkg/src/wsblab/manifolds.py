"""Globalised invariant manifolds of Lyapunov orbits and their section cuts.

Seeds are placed at a fixed distance ``epsilon`` from the orbit along the
stable (or unstable) eigenvector of the monodromy matrix transported by the
state transition matrix, then re-projected onto the orbit's energy level by
rescaling the velocity. The stable branch is propagated backwards, the
unstable branch forwards, in both cases into the P1 region.

Cuts with the section ``theta = theta0`` (positive rotating-frame rate) are
labelled by the accumulated angle between the crossing and the seed:
index ``i`` collects crossings with ``2 i pi <= dtheta < 2 (i + 1) pi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .dynamics import TWO_PI, SystemParams, effective_potential, polar_from_cartesian
from .equilibria import lagrange_points
from .errors import Collision, CutNotClosed, CutNotReached, WrongBranch
from .lyapunov import LyapunovOrbit, check_hyperbolic
from .propagation import angle_crossing, propagate, propagate_with_stm, x_plane

STABLE = "stable"
UNSTABLE = "unstable"


@dataclass(frozen=True)
class Seed:
    phase: float
    state: np.ndarray
    trajectory: object  # propagation.Trajectory, or None if it failed to start
    status: str


@dataclass(frozen=True)
class ManifoldBranch:
    orbit: LyapunovOrbit
    stability: str
    epsilon: float
    sign: int
    max_turns: int
    params: SystemParams
    seeds: list = field(repr=False)
    block: tuple = (None, None)  # (a, b) planes used for branch termination
    t_budget: float = 0.0

    @property
    def time_direction(self) -> int:
        return -1 if self.stability == STABLE else 1

    @property
    def energy(self) -> float:
        return self.orbit.energy


@dataclass(frozen=True)
class ManifoldCut:
    theta0: float
    index: int
    points: np.ndarray  # (n, 2) columns r, rdot, ordered by seed phase
    phases: np.ndarray
    closed: bool
    energy: float
    states: np.ndarray = field(default=None, repr=False)

    def closed_polygon(self) -> np.ndarray:
        """Points with the first one repeated at the end."""
        return np.vstack([self.points, self.points[:1]])


def default_block(params: SystemParams) -> tuple[float, float]:
    pts = lagrange_points(params)
    d = 0.4 * pts.x_plus
    return pts.x_l1 - d, pts.x_l1 + d


def _reproject(state, H, params):
    x, y, vx, vy = state
    speed2 = 2.0 * (H + effective_potential(x, y, params))
    v = math.hypot(vx, vy)
    if speed2 <= 0.0 or v == 0.0:
        return np.array(state, dtype=float)
    k = math.sqrt(speed2) / v
    return np.array([x, y, vx * k, vy * k])


def _eigvec_at(orbit, stability, phases, params):
    """Orbit states and transported, normalised eigenvectors at the given phases."""
    phases = np.asarray(phases, dtype=float)
    traj, _ = propagate_with_stm(orbit.state0, orbit.period, params, t_eval=phases)
    samples = traj.samples
    v0 = orbit.stable_eigenvector() if stability == STABLE else orbit.unstable_eigenvector()
    states = samples[:, :4]
    vecs = np.einsum("kij,j->ki", samples[:, 4:].reshape(-1, 4, 4), v0)
    vecs /= np.linalg.norm(vecs, axis=1)[:, None]
    return states, vecs


class _TurnStop:
    """Stop callback: end once the unwrapped angle has moved ``limit`` away from the start."""

    def __init__(self, theta_start, limit):
        self.theta_start = theta_start
        self.limit = limit

    def __call__(self, rec):
        return rec.name == "marker" and abs(rec.theta - self.theta_start) >= self.limit


def _seed_trajectory(state, direction, max_turns, block, params, t_budget):
    a, b = block
    theta_start = math.atan2(state[1], state[0] - params.mu)
    events = [angle_crossing(0.0, params, 0, name="marker")]
    if a is not None:
        events.append(x_plane(a, 0, terminal=True, name="exit-a"))
    try:
        traj = propagate(
            state,
            direction * t_budget,
            events,
            params,
            stop=_TurnStop(theta_start, TWO_PI * (max_turns + 1)),
        )
    except Collision:
        return None, "collision"
    return traj, traj.status


def _choose_sign(orbit, stability, vec, state, block, params):
    """+1 or -1 so that the seed leaves the block neighbourhood through ``x = b``."""
    a, b = block
    direction = -1 if stability == STABLE else 1
    for sign in (1, -1):
        seed = _reproject(state + sign * 1e-6 * vec, orbit.energy, params)
        traj = propagate(
            seed,
            direction * 20.0 * orbit.period,
            [x_plane(a, 0, True, "a"), x_plane(b, 0, True, "b")],
            params,
        )
        if traj.status == "event:b":
            return sign
    raise WrongBranch("neither displacement direction leaves the block towards the P1 region")


def globalize(
    orbit: LyapunovOrbit,
    stability: str = STABLE,
    n_seeds: int = 200,
    epsilon: float = 1e-6,
    params: SystemParams | None = None,
    max_turns: int = 2,
    block: tuple | None = None,
    t_budget: float | None = None,
) -> ManifoldBranch:
    """Globalise the P1-side branch of the stable or unstable manifold of ``orbit``."""
    if stability not in (STABLE, UNSTABLE):
        raise ValueError(f"stability must be {STABLE!r} or {UNSTABLE!r}")
    check_hyperbolic(orbit)
    if block is None:
        block = default_block(params)
    if t_budget is None:
        t_budget = 40.0 * (max_turns + 2)
    phases = np.arange(n_seeds) * (orbit.period / n_seeds)
    states, vecs = _eigvec_at(orbit, stability, phases, params)
    sign = _choose_sign(orbit, stability, vecs[0], states[0], block, params)
    direction = -1 if stability == STABLE else 1
    seeds = []
    for ph, st, v in zip(phases, states, vecs):
        s = _reproject(st + sign * epsilon * v, orbit.energy, params)
        traj, status = _seed_trajectory(s, direction, max_turns, block, params, t_budget)
        seeds.append(Seed(float(ph), s, traj, status))
    branch = ManifoldBranch(orbit, stability, epsilon, sign, max_turns, params, seeds, tuple(block), t_budget)
    exits = sum(1 for sd in seeds if sd.status == "event:exit-a" and _turns_done(sd, direction) < 1)
    if exits > n_seeds // 2:
        raise WrongBranch(f"{exits} of {n_seeds} seeds left through x=a before one turn about P1")
    return branch


def _turns_done(seed, direction):
    if seed.trajectory is None:
        return 0
    th = seed.trajectory.theta
    return int(abs(th[-1] - th[0]) // TWO_PI)


def seed_at(branch: ManifoldBranch, phase: float) -> np.ndarray:
    """Seed state at an arbitrary orbit phase (same epsilon and branch sign)."""
    phase = float(phase) % branch.orbit.period
    states, vecs = _eigvec_at(branch.orbit, branch.stability, [phase], branch.params)
    return _reproject(states[0] + branch.sign * branch.epsilon * vecs[0], branch.orbit.energy, branch.params)


def _label(theta_seed, theta_cross, direction):
    dtheta = (theta_seed - theta_cross) if direction < 0 else (theta_cross - theta_seed)
    return int(math.floor(dtheta / TWO_PI)), dtheta


def _crossing_from_trajectory(traj, theta0, index, direction, params):
    """Locate the crossing with label ``index`` on a stored trajectory.

    Sign changes are located on the stored samples and the crossing is then
    refined by re-propagating across the bracketing step with an event.
    Returns ``(state, dtheta)`` or None.
    """
    mu = params.mu
    c, s = math.cos(theta0), math.sin(theta0)
    X = traj.states
    g = -(X[:, 0] - mu) * s + X[:, 1] * c
    theta_seed = traj.theta[0]
    idx = np.nonzero(np.signbit(g[:-1]) != np.signbit(g[1:]))[0]
    for k in idx:
        if g[k] == 0.0 and k == 0:
            continue
        # forward-time slope must be positive
        g_early, g_late = (g[k], g[k + 1]) if direction > 0 else (g[k + 1], g[k])
        if not g_early < g_late:
            continue
        mid = 0.5 * (X[k] + X[k + 1])
        if (mid[0] - mu) * c + mid[1] * s <= 0.0:
            continue
        th_est = traj.theta[k]
        target = theta0 + TWO_PI * round((th_est - theta0) / TWO_PI)
        lab, _ = _label(theta_seed, target, direction)
        if lab > index:
            return None
        if lab < index:
            continue
        step = traj.t[k + 1] - traj.t[k]
        sub = propagate(
            X[k],
            step * 1.5,
            [angle_crossing(theta0, params, 1, terminal=True, name="cut")],
            params,
            t0=traj.t[k],
            check_collision=False,
        )
        if not sub.events:
            continue
        rec = sub.events[0]
        th_cross = th_est + ((math.atan2(rec.state[1], rec.state[0] - mu) - math.atan2(X[k][1], X[k][0] - mu) + math.pi) % TWO_PI - math.pi)
        lab, dtheta = _label(theta_seed, th_cross, direction)
        if lab == index:
            return rec.state, dtheta
    return None


def _cut_point(branch, state, theta0, index):
    direction = branch.time_direction
    traj, status = _seed_trajectory(state, direction, max(branch.max_turns, index), branch.block, branch.params, branch.t_budget)
    if traj is None:
        return None
    return _crossing_from_trajectory(traj, theta0, index, direction, branch.params)


def cut_crossing_at_phase(branch: ManifoldBranch, phase: float, theta0: float, index: int):
    """Section state of the manifold trajectory through the seed at ``phase`` (or None)."""
    res = _cut_point(branch, seed_at(branch, phase), theta0, index)
    return None if res is None else res[0]


def cut(
    branch: ManifoldBranch,
    theta0: float,
    index: int,
    params: SystemParams | None = None,
    max_gap: float | None = None,
    max_refine: int = 400,
) -> ManifoldCut:
    """Cut ``index`` of the branch with the section ``theta = theta0``.

    With ``max_gap`` set, extra seeds are inserted at mid-phases until the
    distance in ``(r, rdot)`` between consecutive points is below ``max_gap``
    (or ``max_refine`` extra seeds have been spent).
    """
    params = params or branch.params
    if index > branch.max_turns:
        raise CutNotReached(f"cut {index} requested from a branch globalised for {branch.max_turns} turns")
    direction = branch.time_direction
    pts = {}
    missing = []
    for sd in branch.seeds:
        res = None
        if sd.trajectory is not None:
            res = _crossing_from_trajectory(sd.trajectory, theta0, index, direction, params)
        if res is None:
            missing.append(sd.phase)
        else:
            pts[sd.phase] = res[0]
    if not pts:
        raise CutNotReached(f"no manifold trajectory reaches cut {index} at theta0={theta0}")
    T = branch.orbit.period
    closed = not missing
    if max_gap is not None and closed:
        budget = max_refine
        while budget > 0:
            phases = sorted(pts)
            ring = phases + [phases[0] + T]
            polar = {ph: polar_from_cartesian(pts[ph], params) for ph in phases}
            inserted = 0
            for p0, p1 in zip(ring[:-1], ring[1:]):
                q0 = polar[p0 % T if p0 >= T else p0]
                q1 = polar[p1 - T if p1 >= T else p1]
                if math.hypot(q0.r - q1.r, q0.rdot - q1.rdot) > max_gap and budget > 0:
                    mid = 0.5 * (p0 + p1) % T
                    res = _cut_point(branch, seed_at(branch, mid), theta0, index)
                    budget -= 1
                    if res is None:
                        closed = False
                        missing.append(mid)
                        budget = 0
                        break
                    pts[mid] = res[0]
                    inserted += 1
            if inserted == 0:
                break
    phases = np.array(sorted(pts))
    states = np.array([pts[ph] for ph in phases])
    polar = [polar_from_cartesian(s, params) for s in states]
    points = np.array([[q.r, q.rdot] for q in polar])
    if closed and len(points) > 3:
        closed = _is_simple(np.vstack([points, points[:1]]))
    return ManifoldCut(theta0, index, points, phases, closed, branch.energy, states)


def _is_simple(poly) -> bool:
    """True when no two non-adjacent edges of the closed polygon cross."""
    n = len(poly) - 1
    a = poly[:-1]
    b = poly[1:]
    for i in range(n - 2):
        j = np.arange(i + 2, n if i > 0 else n - 1)
        if j.size == 0:
            continue
        p, q = a[i], b[i]
        r, s = a[j], b[j]
        d1 = (q[0] - p[0]) * (r[:, 1] - p[1]) - (q[1] - p[1]) * (r[:, 0] - p[0])
        d2 = (q[0] - p[0]) * (s[:, 1] - p[1]) - (q[1] - p[1]) * (s[:, 0] - p[0])
        d3 = (s[:, 0] - r[:, 0]) * (p[1] - r[:, 1]) - (s[:, 1] - r[:, 1]) * (p[0] - r[:, 0])
        d4 = (s[:, 0] - r[:, 0]) * (q[1] - r[:, 1]) - (s[:, 1] - r[:, 1]) * (q[0] - r[:, 0])
        if np.any((d1 * d2 < 0) & (d3 * d4 < 0)):
            return False
    return True


def distance_to_curve(cut: ManifoldCut, q) -> float:
    """Euclidean distance in ``(r, rdot)`` from ``q`` to the closed polyline."""
    poly = cut.closed_polygon()
    a = poly[:-1]
    d = poly[1:] - a
    q = np.asarray(q, dtype=float)
    L2 = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("ij,ij->i", q - a, d) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    proj = a + t[:, None] * d
    return float(np.min(np.hypot(*(proj - q).T)))


INSIDE = "inside"
OUTSIDE = "outside"
ON_CURVE = "on-curve"


def point_location(cut: ManifoldCut, q, band: float = 1e-7) -> str:
    """Classify ``q = (r, rdot)`` against a closed cut by ray crossing."""
    if not cut.closed:
        raise CutNotClosed("point location needs a closed cut")
    if distance_to_curve(cut, q) <= band:
        return ON_CURVE
    poly = cut.closed_polygon()
    x, y = float(q[0]), float(q[1])
    x0, y0 = poly[:-1, 0], poly[:-1, 1]
    x1, y1 = poly[1:, 0], poly[1:, 1]
    straddle = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    crossings = np.count_nonzero(straddle & (xc > x))
    return INSIDE if crossings % 2 == 1 else OUTSIDE


def refine_crossing(branch: ManifoldBranch, theta0: float, index: int, rdot_target: float, phase_lo: float, phase_hi: float, xtol: float = 1e-14):
    """Phase, state and polar point where cut ``index`` meets ``rdot = rdot_target``.

    ``[phase_lo, phase_hi]`` must bracket a sign change of ``rdot - rdot_target``
    along the cut.
    """
    params = branch.params
    cache = {}

    def f(ph):
        st = cut_crossing_at_phase(branch, ph, theta0, index)
        if st is None:
            raise CutNotReached(f"seed at phase {ph} does not reach cut {index}")
        cache[ph] = st
        return polar_from_cartesian(st, params).rdot - rdot_target

    ph = brentq(f, phase_lo, phase_hi, xtol=xtol, maxiter=200)
    st = cache.get(ph)
    if st is None:
        f(ph)
        st = cache[ph]
    return ph, st, polar_from_cartesian(st, params)


def write_cut_csv(path, cut: ManifoldCut, mu: float) -> None:
    with open(path, "w") as fh:
        fh.write("mu,H,theta0,cut_index\n")
        fh.write(f"{mu:.10g},{cut.energy:.10g},{cut.theta0:.10g},{cut.index}\n")
        fh.write("point_index,r,rdot\n")
        for k, (r, rd) in enumerate(cut.points):
            fh.write(f"{k},{r:.10g},{rd:.10g}\n")


def read_cut_csv(path):
    """Return ``(meta dict, points array)`` from a cut CSV."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    keys = lines[0].split(",")
    vals = lines[1].split(",")
    meta = {k: (int(v) if k == "cut_index" else float(v)) for k, v in zip(keys, vals)}
    pts = np.array([[float(c) for c in ln.split(",")[1:]] for ln in lines[3:]])
    return meta, pts
