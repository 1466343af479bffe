import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from wsblab.dynamics import elements_from_state, polar_from_cartesian, section_state, state_from_wsb_coords
from wsblab.errors import BracketInvalid, EmptyRange
from wsblab.manifolds import point_location
from wsblab.wsb import (
    DISTANCE_EXCEEDED,
    INADMISSIBLE,
    ComparisonReport,
    WSBQuery,
    admissible_range,
    boundary_brackets,
    classify_stability,
    compare_with_manifold,
    find_wsb_points,
    initial_energy,
    read_wsb_csv,
    refine_boundary,
    return_time_profile,
    stable_set_scan,
    write_comparison_json,
    write_wsb_csv,
)

# slice with two boundary points of the 2-stable set (found by the eccentricity pre-scan)
Q2 = WSBQuery(rdot0=0.0, theta0=0.0, e0=0.405, n=2)


@pytest.fixture(scope="module")
def scan2(geom, params):
    return stable_set_scan(Q2, geom, params)


@pytest.fixture(scope="module")
def points2(geom, params, scan2):
    return find_wsb_points(Q2, geom, params, scan=scan2)[0]


def test_query_validation(geom, params):
    with pytest.raises(ValueError):
        WSBQuery(e0=1.0)
    with pytest.raises(ValueError):
        WSBQuery(n=0)
    with pytest.raises(ValueError):
        admissible_range(WSBQuery(theta0=np.pi), geom, params)


def test_admissible_range_endpoints(geom, params, H1):
    q = WSBQuery(e0=0.0, n=1)
    adm = admissible_range(q, geom, params)
    assert len(adm.intervals) == 1
    lo, hi = adm.intervals[0]
    Hs = sorted([initial_energy(lo, q, params), initial_energy(hi, q, params)])
    assert abs(Hs[0] - H1) < 1e-10
    assert abs(Hs[1] - geom.H_star) < 1e-10
    for r in np.linspace(lo, hi, 12)[1:-1]:
        _, H, _ = state_from_wsb_coords(r, 0.0, 0.0, 0.0, params)
        assert H1 < H < geom.H_star


def test_admissible_range_empty_near_parabolic(geom, params):
    with pytest.raises(EmptyRange):
        admissible_range(WSBQuery(e0=0.99, n=1), geom, params)


def test_near_circular_start_is_stable(geom, params):
    q = WSBQuery(e0=0.0, n=1)
    lo, hi = admissible_range(q, geom, params).intervals[0]
    v = classify_stability(0.5 * (lo + hi), q, geom, params)
    assert v.stable_order >= 1 and v.failure is None
    assert len(v.turn_times) == 1


def test_outside_admissible_range(geom, params):
    q = WSBQuery(e0=0.0, n=1)
    adm = admissible_range(q, geom, params)
    v = classify_stability(adm.intervals[0][1] + 0.05, q, geom, params, admissible=adm)
    assert v.failure == INADMISSIBLE and v.stable_order == 0


def test_start_inside_first_cut_is_unstable(cut0, orbit5, geom, params):
    centroid = cut0.points.mean(axis=0)
    assert point_location(cut0, centroid) == "inside"
    s = section_state(centroid[0], centroid[1], 0.0, orbit5.energy, params)
    e = elements_from_state(s, params).e
    for root in ("periapsis", "other"):
        q = WSBQuery(rdot0=centroid[1], e0=e, n=1, root=root)
        s2, H, _ = state_from_wsb_coords(centroid[0], centroid[1], 0.0, e, params, root=root)
        if np.allclose(s2, s, atol=1e-10):
            break
    assert H == pytest.approx(orbit5.energy, abs=1e-10)
    v = classify_stability(centroid[0], q, geom, params)
    assert v.stable_order == 0 and v.failure == DISTANCE_EXCEEDED


def test_scan_structure(scan2):
    ivs = scan2.intervals
    assert len(ivs) == 2
    for (a, b), (c, d) in zip(ivs[:-1], ivs[1:]):
        assert a <= b < c <= d
    stable_rs = [r for r, v in scan2.samples if v.is_stable(2)]
    assert all(any(a <= r <= b for a, b in ivs) for r in stable_rs)


def test_interval_samples_reclassify_stable(scan2, geom, params):
    for a, b in scan2.intervals:
        for r in np.linspace(a, b, 4):
            assert classify_stability(r, Q2, geom, params).is_stable(2)


def test_refinement_keeps_wide_intervals(scan2, geom, params):
    lo, hi = scan2.admissible.intervals[0]
    step = (hi - lo) / 200
    fine = stable_set_scan(replace(Q2, grid_step=step / 2), geom, params, admissible=scan2.admissible)
    for a, b in scan2.intervals:
        if b - a > 4 * step:
            assert any(c < b and a < d for c, d in fine.intervals)


def test_points_and_brackets(points2, geom, params, H1):
    assert len(points2) == 2
    for p in points2:
        assert abs(p.bracket[0] - p.bracket[1]) <= Q2.delta_r
        assert H1 < p.H_star < geom.H_star
        assert p.failure == DISTANCE_EXCEEDED
        sgn = np.sign(p.bracket[0] - p.bracket[1])
        assert classify_stability(p.r_star + 10 * Q2.delta_r * sgn, Q2, geom, params).is_stable(2)
        assert not classify_stability(p.r_star - 10 * Q2.delta_r * sgn, Q2, geom, params).is_stable(2)
    assert {p.side for p in points2} == {"lower-end", "upper-end"}


def test_openness(scan2, geom, params):
    stable = [r for r, v in scan2.samples if v.is_stable(2)]
    for r in stable[:: max(1, len(stable) // 8)]:
        for d in (-Q2.delta_r / 10, Q2.delta_r / 10):
            assert classify_stability(r + d, Q2, geom, params).is_stable(2)


def test_bisection_convergence(points2, geom, params):
    p = points2[0]
    half = refine_boundary(p.bracket, replace(Q2, delta_r=Q2.delta_r / 2), geom, params)
    assert abs(half.r_star - p.r_star) < Q2.delta_r
    assert abs(half.bracket[0] - half.bracket[1]) <= Q2.delta_r / 2


def test_bracket_invalid(points2, geom, params):
    p = points2[0]
    with pytest.raises(BracketInvalid):
        refine_boundary((p.bracket[1], p.bracket[0]), Q2, geom, params)


def test_empty_comparison(params):
    rep = compare_with_manifold([], Q2, params)
    assert rep == ComparisonReport([], 0.0, 0.0)


def test_return_profile(points2, geom, params):
    p = points2[0]
    prof = return_time_profile(p, Q2, geom, params, decades=3.0, n_samples=10, past=2)
    stable = prof.offsets > 0
    T = prof.return_times[stable]
    assert np.all(np.isfinite(T)) and np.all(np.diff(T) > 0)
    assert np.all(np.isnan(prof.return_times[~stable]))
    assert not any(v.is_stable(2) for v, s in zip(prof.verdicts, stable) if not s)


def test_return_map_continuous_away_from_boundary(points2, geom, params):
    p = points2[0]
    r_s, r_u = p.bracket
    r0 = r_s + np.sign(r_s - r_u) * 5e-5
    ref = classify_stability(r0, Q2, geom, params)
    diffs = []
    for h in (1e-7, 1e-8, 1e-9):
        v = classify_stability(r0 + h, Q2, geom, params)
        a = polar_from_cartesian(ref.final_state, params)
        b = polar_from_cartesian(v.final_state, params)
        diffs.append(abs(a.r - b.r) + abs(a.rdot - b.rdot) + abs(ref.turn_times[-1] - v.turn_times[-1]))
    assert diffs[0] > diffs[1] > diffs[2]


def test_csv_and_json_roundtrip(tmp_path, points2, params):
    path = tmp_path / "wsb.csv"
    write_wsb_csv(path, points2, Q2, params.mu)
    meta, rows = read_wsb_csv(path)
    assert meta == {"mu": params.mu, "theta0": 0.0, "rdot0": 0.0, "e0": 0.405, "n": 2}
    assert [r["side"] for r in rows] == [p.side for p in points2]
    np.testing.assert_allclose([r["r_star"] for r in rows], [p.r_star for p in points2], rtol=1e-9)
    rep = ComparisonReport([], 0.0, 0.0)
    write_comparison_json(tmp_path / "c.json", rep)
    assert json.loads((tmp_path / "c.json").read_text()) == {"points": [], "max": 0.0, "mean": 0.0}


def test_boundary_brackets_need_distance_failure(scan2):
    assert len(boundary_brackets(scan2, 2)) == 2
    assert boundary_brackets(scan2, 2, failures=("collision",)) == []


def test_process_pool_matches_serial(geom, params, scan2):
    q = replace(Q2, grid_step=(scan2.admissible.span[1] - scan2.admissible.span[0]) / 20)
    serial = stable_set_scan(q, geom, params, admissible=scan2.admissible)
    with ProcessPoolExecutor(2) as pool:
        par = stable_set_scan(q, geom, params, map_fn=pool.map, admissible=scan2.admissible)
    assert serial.intervals == par.intervals
    assert [v.stable_order for _, v in serial.samples] == [v.stable_order for _, v in par.samples]
