"""Weak n-stability classification, boundary extraction and the manifold comparison.

A trajectory starts on the half-line ``theta = theta0`` about P1 with data
``(r0, rdot0, e0)`` and positive rotating-frame angular rate. It is weakly
n-stable when it completes ``n`` prograde turns about P1 (positive-rate
returns to the half-line, each one full revolution of the unwrapped angle
after the previous one), every crossing of the half-line is transverse, and
its distance to P1 stays below ``D1``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator

from .block import SectionGeometry, default_block_spec, section_geometry, validate_block_band
from .dynamics import TWO_PI, SystemParams, polar_from_cartesian, state_from_wsb_coords
from .equilibria import lagrange_points
from .errors import (
    BracketInvalid,
    Collision,
    CutNotClosed,
    EmptyRange,
    NoAdmissibleEllipse,
    NotIsolating,
    StepFailure,
)
from .lyapunov import default_energy_ceiling, orbit_at_energy
from .manifolds import STABLE, cut, distance_to_curve, globalize, refine_crossing
from .propagation import angle_crossing, propagate, radius_threshold

DISTANCE_EXCEEDED = "distance-exceeded"
NONTRANSVERSE = "nontransverse-crossing"
COLLISION = "collision"
BUDGET = "budget-exhausted"
INADMISSIBLE = "inadmissible"

TRANSVERSALITY_FLOOR = 1e-8


@dataclass(frozen=True)
class WSBQuery:
    rdot0: float = 0.0
    theta0: float = 0.0
    e0: float = 0.0
    n: int = 1
    r_range: tuple | None = None  # restrict the radial scan; default: admissible range
    grid_step: float | None = None  # default: admissible width / 200
    delta_r: float = 1e-8
    t_budget: float | None = None  # default 100 n
    root: str = "periapsis"

    def __post_init__(self):
        if not 0.0 <= self.e0 < 1.0:
            raise ValueError(f"e0={self.e0} outside [0, 1)")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"stability order n={self.n} must be a positive integer")
        if not self.delta_r > 0.0:
            raise ValueError("delta_r must be positive")

    @property
    def budget(self) -> float:
        return self.t_budget if self.t_budget is not None else 100.0 * self.n


@dataclass(frozen=True)
class StabilityVerdict:
    r0: float
    stable_order: int
    failure: str | None
    energy: float | None
    crossings: list = field(default_factory=list, repr=False)  # (t, theta_unwrapped, rate)
    turn_times: list = field(default_factory=list)
    final_state: np.ndarray | None = field(default=None, repr=False)

    def is_stable(self, n: int) -> bool:
        return self.stable_order >= n


@dataclass(frozen=True)
class WSBPoint:
    r_star: float
    H_star: float
    bracket: tuple  # (r_stable, r_unstable)
    side: str  # "lower-end" (stable interval above r_star) or "upper-end"
    failure: str | None
    n: int


@dataclass(frozen=True)
class AdmissibleRange:
    intervals: list  # list of (lo, hi)

    def contains(self, r: float) -> bool:
        return any(lo < r < hi for lo, hi in self.intervals)

    @property
    def span(self) -> tuple:
        return self.intervals[0][0], self.intervals[-1][1]


@dataclass(frozen=True)
class ScanResult:
    intervals: list
    samples: list  # (r, StabilityVerdict) sorted by r
    admissible: AdmissibleRange


def default_geometry(params: SystemParams, H_star: float | None = None, block=None) -> SectionGeometry:
    """Validated default block and section constants."""
    pts = lagrange_points(params)
    H1 = pts.energies["L1"]
    explicit = H_star is not None
    if H_star is None:
        H_star = default_energy_ceiling(params)
    spec = block if block is not None else default_block_spec(params)
    for _ in range(6):
        try:
            checked = validate_block_band(spec, H1, H_star, params)
            break
        except NotIsolating:
            if explicit:
                raise
            # tighten the default ceiling toward H(L1)
            H_star = H1 + 0.5 * (H_star - H1)
    else:
        raise NotIsolating(f"block ({spec.a}, {spec.b}) does not isolate near H(L1)")
    return section_geometry(checked, H_star, params)


def _normalize_angle(theta: float) -> float:
    return (theta + math.pi) % TWO_PI - math.pi


def check_theta0(theta0: float, geom: SectionGeometry) -> float:
    """Normalized section angle; raises ValueError inside the block sector."""
    if not geom.admissible(theta0):
        raise ValueError(f"theta0={theta0} lies in the block sector |theta - pi| <= {geom.theta1:.6g}")
    return _normalize_angle(theta0)


def initial_energy(r0: float, q: WSBQuery, params: SystemParams):
    """Energy of ``z0(r0, rdot0, theta0, e0)``, or None when no admissible state exists."""
    try:
        _, H, _ = state_from_wsb_coords(r0, q.rdot0, q.theta0, q.e0, params, root=q.root)
    except NoAdmissibleEllipse:
        return None
    return H


def admissible_range(q: WSBQuery, geom: SectionGeometry, params: SystemParams, n_grid: int = 4000) -> AdmissibleRange:
    """Maximal open r0-intervals with energy in ``(H(L1), H*)``.

    A grid scan on ``(r_min, D1)`` locates the intervals; each endpoint is
    refined by bisection on the failing condition (energy bound or existence
    of the initial state).
    """
    check_theta0(q.theta0, geom)
    H1 = lagrange_points(params).energies["L1"]
    H_hi = geom.H_star
    lo_r, hi_r = (params.r_min * 1.0001, geom.D1) if q.r_range is None else q.r_range

    def ok(r):
        H = initial_energy(r, q, params)
        return H is not None and H1 < H < H_hi

    rs = np.linspace(lo_r, hi_r, n_grid)
    flags = np.array([ok(r) for r in rs])
    if not flags.any():
        raise EmptyRange(f"no r0 gives an energy in (H(L1), H*) for rdot0={q.rdot0}, e0={q.e0}")

    def refine(r_in, r_out):
        for _ in range(200):
            mid = 0.5 * (r_in + r_out)
            if mid in (r_in, r_out):
                break
            if ok(mid):
                r_in = mid
            else:
                r_out = mid
        return r_in

    intervals = []
    k = 0
    while k < len(rs):
        if not flags[k]:
            k += 1
            continue
        j = k
        while j + 1 < len(rs) and flags[j + 1]:
            j += 1
        lo = refine(rs[k], rs[k - 1]) if k > 0 else rs[k]
        hi = refine(rs[j], rs[j + 1]) if j + 1 < len(rs) else rs[j]
        intervals.append((lo, hi))
        k = j + 1
    return AdmissibleRange(intervals)


class _TurnCounter:
    def __init__(self, theta0, n):
        self.theta0 = theta0
        self.n = n
        self.turns = 0
        self.crossings = []
        self.turn_times = []
        self.nontransverse = False

    def __call__(self, rec):
        if rec.name != "section":
            return False
        pol_rate = _rate(rec.state, self.mu)
        self.crossings.append((rec.t, rec.theta, pol_rate))
        if abs(pol_rate) < TRANSVERSALITY_FLOOR:
            self.nontransverse = True
            return True
        level = round((rec.theta - self.theta0) / TWO_PI)
        if pol_rate > 0.0 and level == self.turns + 1:
            self.turns += 1
            self.turn_times.append(rec.t)
            return self.turns >= self.n
        return False


def _rate(s, mu):
    dx = s[0] - mu
    return (dx * s[3] - s[1] * s[2]) / (dx * dx + s[1] * s[1])


def classify_stability(r0: float, q: WSBQuery, geom: SectionGeometry, params: SystemParams, admissible: AdmissibleRange | None = None) -> StabilityVerdict:
    """Weak-stability verdict for one initial radius. Integration problems are reported in ``failure``."""
    theta0 = check_theta0(q.theta0, geom)
    if admissible is not None and not admissible.contains(r0):
        return StabilityVerdict(r0, 0, INADMISSIBLE, None)
    try:
        s0, H, _ = state_from_wsb_coords(r0, q.rdot0, theta0, q.e0, params, root=q.root)
    except NoAdmissibleEllipse:
        return StabilityVerdict(r0, 0, INADMISSIBLE, None)
    if r0 >= geom.D1:
        return StabilityVerdict(r0, 0, DISTANCE_EXCEEDED, H)
    counter = _TurnCounter(theta0, q.n)
    counter.mu = params.mu
    events = [
        angle_crossing(theta0, params, 0, name="section"),
        radius_threshold(geom.D1, params, 1, terminal=True, name="distance"),
    ]
    try:
        traj = propagate(s0, q.budget, events, params, stop=counter)
    except Collision:
        return StabilityVerdict(r0, counter.turns, COLLISION, H, counter.crossings, counter.turn_times)
    except StepFailure:
        return StabilityVerdict(r0, counter.turns, BUDGET, H, counter.crossings, counter.turn_times)
    if counter.nontransverse:
        failure = NONTRANSVERSE
    elif traj.status == "event:distance":
        failure = DISTANCE_EXCEEDED
    elif counter.turns >= q.n:
        failure = None
    else:
        failure = BUDGET
    return StabilityVerdict(r0, counter.turns, failure, H, counter.crossings, counter.turn_times, traj.final_state)


def _grid(q: WSBQuery, adm: AdmissibleRange):
    rs = []
    for lo, hi in adm.intervals:
        step = q.grid_step if q.grid_step is not None else (hi - lo) / 200.0
        m = max(2, int(math.ceil((hi - lo) / step)))
        # open interval: keep interior nodes only
        rs.extend(np.linspace(lo, hi, m + 1)[1:-1])
    return np.array(rs)


def stable_set_scan(q: WSBQuery, geom: SectionGeometry, params: SystemParams, map_fn=map, admissible: AdmissibleRange | None = None) -> ScanResult:
    """Classify a radial grid and merge consecutive n-stable samples into intervals."""
    adm = admissible if admissible is not None else admissible_range(q, geom, params)
    rs = _grid(q, adm)
    verdicts = list(map_fn(_Classifier(q, geom, params, adm), rs))
    samples = list(zip(rs, verdicts))
    intervals = []
    start = None
    prev = None
    for r, v in samples:
        if v.is_stable(q.n):
            if start is None:
                start = r
            prev = r
        elif start is not None:
            intervals.append((start, prev))
            start = None
    if start is not None:
        intervals.append((start, prev))
    return ScanResult(intervals, samples, adm)


class _Classifier:
    """Picklable ``r -> verdict`` closure for worker pools."""

    def __init__(self, q, geom, params, adm=None):
        self.q, self.geom, self.params, self.adm = q, geom, params, adm

    def __call__(self, r):
        return classify_stability(float(r), self.q, self.geom, self.params, self.adm)


def boundary_brackets(scan: ScanResult, n: int, failures=(DISTANCE_EXCEEDED,)):
    """Adjacent grid pairs whose verdicts differ, as ``(r_stable, r_unstable)``.

    Only pairs whose unstable end failed for one of ``failures`` are kept, so
    boundaries caused by collisions or the edge of the admissible range are
    excluded.
    """
    out = []
    for (r0, v0), (r1, v1) in zip(scan.samples[:-1], scan.samples[1:]):
        if not (scan.admissible.contains(r0) and scan.admissible.contains(r1)):
            continue
        # brackets straddling a gap between admissible intervals are not boundaries
        if not any(lo < r0 and r1 < hi for lo, hi in scan.admissible.intervals):
            continue
        s0, s1 = v0.is_stable(n), v1.is_stable(n)
        if s0 == s1:
            continue
        stable, unstable = (r0, r1) if s0 else (r1, r0)
        vu = v1 if s0 else v0
        if vu.failure in failures and vu.stable_order == n - 1:
            out.append((stable, unstable))
    return out


def refine_boundary(bracket, q: WSBQuery, geom: SectionGeometry, params: SystemParams) -> WSBPoint:
    """Bisect ``(r_stable, r_unstable)`` down to ``q.delta_r``."""
    r_s, r_u = float(bracket[0]), float(bracket[1])
    vs = classify_stability(r_s, q, geom, params)
    vu = classify_stability(r_u, q, geom, params)
    if not vs.is_stable(q.n) or vu.is_stable(q.n):
        raise BracketInvalid(f"bracket ({r_s}, {r_u}) does not separate stable from unstable")
    while abs(r_u - r_s) > q.delta_r:
        mid = 0.5 * (r_s + r_u)
        vm = classify_stability(mid, q, geom, params)
        if vm.is_stable(q.n):
            r_s = mid
        else:
            r_u, vu = mid, vm
    r_star = 0.5 * (r_s + r_u)
    H = initial_energy(r_star, q, params)
    side = "lower-end" if r_s > r_u else "upper-end"
    return WSBPoint(r_star, H, (r_s, r_u), side, vu.failure, q.n)


def find_wsb_points(q: WSBQuery, geom: SectionGeometry, params: SystemParams, map_fn=map, scan: ScanResult | None = None):
    scan = scan if scan is not None else stable_set_scan(q, geom, params, map_fn)
    brackets = boundary_brackets(scan, q.n)
    return list(map_fn(_Refiner(q, geom, params), brackets)), scan


class _Refiner:
    def __init__(self, q, geom, params):
        self.q, self.geom, self.params = q, geom, params

    def __call__(self, bracket):
        return refine_boundary(bracket, self.q, self.geom, self.params)


@dataclass(frozen=True)
class PointComparison:
    r_star: float
    H_star: float
    cut_index: int
    r_cut: float | None
    distance: float  # |r_cut - r_star| at rdot = rdot0, or the polyline distance if the cut misses that line
    curve_distance: float
    method: str


@dataclass(frozen=True)
class ComparisonReport:
    points: list
    max_distance: float
    mean_distance: float



def cut_line_crossings(branch, theta0: float, index: int, rdot0: float, n_refine_seeds: int | None = None):
    """All points where cut ``index`` meets ``rdot = rdot0``, refined on the seed phase.

    Returns ``(cut, [(phase, r), ...])``.
    """
    c = cut(branch, theta0, index, max_gap=2e-2)
    if not c.closed:
        raise CutNotClosed(f"cut {index} at H={branch.energy} is not a closed curve")
    pts = c.closed_polygon()
    phases = list(c.phases) + [c.phases[0] + branch.orbit.period]
    out = []
    for k in range(len(pts) - 1):
        f0 = pts[k, 1] - rdot0
        f1 = pts[k + 1, 1] - rdot0
        if f0 == 0.0:
            out.append((phases[k], pts[k, 0]))
        elif f0 * f1 < 0.0:
            ph, _, pol = refine_crossing(branch, theta0, index, rdot0, phases[k], phases[k + 1])
            out.append((ph, pol.r))
    return c, out


def compare_point(point: WSBPoint, q: WSBQuery, params: SystemParams, index: int | None = None, n_seeds: int = 64, H_max: float | None = None) -> PointComparison:
    index = q.n - 1 if index is None else index
    orbit = orbit_at_energy(point.H_star, params, H_max=H_max)
    branch = globalize(orbit, STABLE, n_seeds, 1e-6, params, max_turns=index)
    c, crossings = cut_line_crossings(branch, _normalize_angle(q.theta0), index, q.rdot0)
    curve_d = distance_to_curve(c, (point.r_star, q.rdot0))
    if crossings:
        r_cut = min((r for _, r in crossings), key=lambda r: abs(r - point.r_star))
        dist = abs(r_cut - point.r_star)
    else:
        r_cut, dist = None, curve_d
    return PointComparison(point.r_star, point.H_star, index, r_cut, dist, curve_d, "exact")


def compare_with_manifold(points, q: WSBQuery, params: SystemParams, index: int | None = None, mode: str = "exact", tol: float = 1e-6, n_grid: int = 15, map_fn=map, H_max: float | None = None) -> ComparisonReport:
    """Distance of each WSB point to the stable-manifold cut ``n - 1`` at its own energy.

    ``mode="exact"`` recomputes the orbit, branch and cut for every point.
    ``mode="grid"`` interpolates the cut/line crossing over an energy grid
    and falls back to the exact computation when the interpolation residual
    estimate exceeds ``0.1 * tol``.
    """
    points = list(points)
    if not points:
        return ComparisonReport([], 0.0, 0.0)
    if mode == "exact":
        res = list(map_fn(_Comparer(q, params, index, H_max), points))
    elif mode == "grid":
        res = _compare_grid(points, q, params, index, tol, n_grid, H_max)
    else:
        raise ValueError(f"unknown comparison mode {mode!r}")
    d = np.array([p.distance for p in res])
    return ComparisonReport(res, float(d.max()), float(d.mean()))


class _Comparer:
    def __init__(self, q, params, index, H_max):
        self.q, self.params, self.index, self.H_max = q, params, index, H_max

    def __call__(self, point):
        return compare_point(point, self.q, self.params, self.index, H_max=self.H_max)


def _compare_grid(points, q, params, index, tol, n_grid, H_max):
    index = q.n - 1 if index is None else index
    H1 = lagrange_points(params).energies["L1"]
    H_hi = H_max if H_max is not None else default_energy_ceiling(params)
    Hs = [p.H_star for p in points]
    lo = max(H1 + 1e-9, min(Hs) - 1e-4)
    hi = min(H_hi - 1e-9, max(Hs) + 1e-4)
    grid = np.linspace(lo, hi, n_grid)
    theta0 = _normalize_angle(q.theta0)
    curves = []
    for H in grid:
        orbit = orbit_at_energy(H, params, H_max=H_max)
        branch = globalize(orbit, STABLE, 48, 1e-6, params, max_turns=index)
        _, crossings = cut_line_crossings(branch, theta0, index, q.rdot0)
        curves.append(sorted(r for _, r in crossings))
    out = []
    for p in points:
        # follow the crossing branch closest to the point
        ref = [min(c, key=lambda r: abs(r - p.r_star)) if c else np.nan for c in curves]
        ref = np.array(ref)
        good = np.isfinite(ref)
        if good.sum() >= 4:
            pchip = PchipInterpolator(grid[good], ref[good])
            lin = np.interp(p.H_star, grid[good], ref[good])
            r_cut = float(pchip(p.H_star))
            if abs(r_cut - lin) <= 0.1 * tol:
                out.append(PointComparison(p.r_star, p.H_star, index, r_cut, abs(r_cut - p.r_star), float("nan"), "grid"))
                continue
        k = compare_point(p, q, params, index, H_max=H_max)
        out.append(replace(k, method="exact-fallback"))
    return out


@dataclass(frozen=True)
class ReturnProfile:
    r: np.ndarray
    offsets: np.ndarray  # distance from the stable bracket end, in r
    return_times: np.ndarray  # time of the n-th return (nan where unstable)
    return_states: np.ndarray  # (k, 2): (r, rdot) at the n-th return
    verdicts: list


def return_time_profile(point: WSBPoint, q: WSBQuery, geom: SectionGeometry, params: SystemParams, decades: float = 3.0, n_samples: int = 12, past: int = 3) -> ReturnProfile:
    """n-th return time and state for r0 approaching ``r_star`` from the stable side.

    Offsets from the stable bracket end are log-spaced over ``decades``
    decades of the bracket width, ending at one bracket width; ``past``
    extra samples are taken beyond ``r_star`` on the unstable side.
    """
    r_s, r_u = point.bracket
    width = max(abs(r_u - r_s), q.delta_r)
    direction = 1.0 if r_s > r_u else -1.0  # from the boundary into the stable side
    offsets = np.logspace(math.log10(width) + decades, math.log10(width), n_samples)
    rs = [r_s + direction * d for d in offsets]
    past_offsets = np.logspace(math.log10(width), math.log10(width) + decades, past) if past else np.array([])
    rs += [r_u - direction * d for d in past_offsets]
    offs = np.concatenate([offsets, -past_offsets])
    times, states, verdicts = [], [], []
    for r in rs:
        v = classify_stability(r, q, geom, params)
        verdicts.append(v)
        if v.is_stable(q.n) and v.final_state is not None:
            times.append(v.turn_times[q.n - 1])
            pol = polar_from_cartesian(v.final_state, params)
            states.append((pol.r, pol.rdot))
        else:
            times.append(np.nan)
            states.append((np.nan, np.nan))
    return ReturnProfile(np.array(rs), offs, np.array(times), np.array(states), verdicts)


def choose_e0(rdot0: float, theta0: float, n: int, geom: SectionGeometry, params: SystemParams, candidates=None, grid_points: int = 16, map_fn=map):
    """Admissibility pre-scan for the eccentricity.

    For each candidate ``e0`` the admissible range is computed and classified
    on a coarse grid; the first candidate whose scan exhibits a
    distance-exceeded stability boundary inside the admissible range wins.
    Returns ``(e0, scan)`` or ``(None, None)``.
    """
    if candidates is None:
        candidates = np.round(np.arange(0.0, 0.951, 0.005), 3)
    for e0 in candidates:
        q = WSBQuery(rdot0=rdot0, theta0=theta0, e0=float(e0), n=n)
        try:
            adm = admissible_range(q, geom, params, n_grid=800)
        except EmptyRange:
            continue
        width = sum(hi - lo for lo, hi in adm.intervals)
        q = replace(q, grid_step=width / grid_points)
        scan = stable_set_scan(q, geom, params, map_fn, admissible=adm)
        if boundary_brackets(scan, n):
            return float(e0), scan
    return None, None


def default_query(n: int, geom: SectionGeometry, params: SystemParams, rdot0: float = 0.0, theta0: float = 0.0, map_fn=map) -> WSBQuery:
    """Query with ``e0`` from :func:`choose_e0`.

    When no candidate shows a boundary, the first eccentricity with a
    non-empty admissible range is used, so the scan still runs and reports
    an empty boundary set.
    """
    e0, _ = choose_e0(rdot0, theta0, n, geom, params, map_fn=map_fn)
    if e0 is None:
        for cand in np.round(np.arange(0.0, 0.951, 0.005), 3):
            try:
                admissible_range(WSBQuery(rdot0=rdot0, theta0=theta0, e0=float(cand), n=n), geom, params, n_grid=800)
            except EmptyRange:
                continue
            e0 = float(cand)
            break
        else:
            raise EmptyRange(f"no eccentricity gives an admissible range for rdot0={rdot0}")
    return WSBQuery(rdot0=rdot0, theta0=theta0, e0=e0, n=n)


def _g(x: float) -> str:
    return f"{x:.10g}"


def write_wsb_csv(path, points, q: WSBQuery, mu: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mu", "theta0", "rdot0", "e0", "n"])
        w.writerow([_g(mu), _g(q.theta0), _g(q.rdot0), _g(q.e0), q.n])
        w.writerow(["r_star", "H_star", "bracket_lo", "bracket_hi", "side"])
        for p in points:
            lo, hi = sorted(p.bracket)
            w.writerow([_g(p.r_star), _g(p.H_star), _g(lo), _g(hi), p.side])


def read_wsb_csv(path):
    """Returns ``(meta dict, list of row dicts)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    meta = dict(zip(rows[0], rows[1]))
    meta = {k: (int(v) if k == "n" else float(v)) for k, v in meta.items()}
    out = []
    for row in rows[3:]:
        d = dict(zip(rows[2], row))
        out.append({k: (v if k == "side" else float(v)) for k, v in d.items()})
    return meta, out


def write_comparison_json(path, report: ComparisonReport) -> None:
    doc = {
        "points": [
            {
                "r_star": float(_g(p.r_star)),
                "H_star": float(_g(p.H_star)),
                "cut_index": p.cut_index,
                "r_cut": None if p.r_cut is None else float(_g(p.r_cut)),
                "distance": float(_g(p.distance)),
                "curve_distance": float(_g(p.curve_distance)),
                "method": p.method,
            }
            for p in report.points
        ],
        "max": float(_g(report.max_distance)),
        "mean": float(_g(report.mean_distance)),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, allow_nan=True)
