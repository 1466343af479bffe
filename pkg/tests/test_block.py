import numpy as np
import pytest

from wsblab.block import (
    BOUNCE,
    BOUNDARY,
    DWELL,
    ENTRY,
    EXIT,
    INSIDE,
    OUTSIDE,
    TANGENCY,
    TRANSIT,
    BlockSpec,
    block_transit,
    classify_boundary_point,
    default_block_spec,
    first_block_encounter,
    hill_membership,
    section_geometry,
    validate_block,
    zero_velocity_curve,
)
from wsblab.dynamics import effective_potential, section_state
from wsblab.errors import NotIsolating, NotOnBoundary
from wsblab.lyapunov import default_energy_ceiling
from wsblab.manifolds import distance_to_curve, point_location
from wsblab.propagation import propagate


def test_hill_membership(params, points, H1):
    x1 = points.x_l1
    assert hill_membership(x1, 0.0, H1, params) == BOUNDARY
    assert hill_membership(0.3, 0.4, -effective_potential(0.3, 0.4, params), params) == BOUNDARY
    H = H1 + 5e-4
    assert hill_membership(params.mu + 0.2, 0.0, H, params) == INSIDE
    assert hill_membership(-1 + params.mu + 0.02, 0.0, H, params) == INSIDE
    assert hill_membership(points.positions["L2"][0] - 0.02, 0.0, H, params) == OUTSIDE


def test_boundary_classes(params):
    spec = default_block_spec(params)
    assert classify_boundary_point((spec.b, 0.0, 0.1, 0.0), spec).kind == EXIT
    assert classify_boundary_point((spec.a, 0.0, 0.1, 0.0), spec).kind == ENTRY
    assert classify_boundary_point((spec.b, 0.0, 0.0, 0.1), spec).kind == TANGENCY
    assert classify_boundary_point((spec.a, 0.0, -0.1, 0.0), spec).kind == EXIT
    with pytest.raises(NotOnBoundary):
        classify_boundary_point((0.0, 0.0, 0.1, 0.0), spec)


def test_default_block_validates(params, points, H1):
    spec = default_block_spec(params)
    d = 0.4 * points.x_plus
    assert spec.a == pytest.approx(points.x_l1 - d) and spec.b == pytest.approx(points.x_l1 + d)
    assert validate_block(spec, H1 + 5e-4, params).validated


@pytest.mark.parametrize("a,b", [(None, -0.3), (-1.1, None)])
def test_block_too_wide_fails(params, H1, a, b):
    spec = default_block_spec(params)
    spec = BlockSpec(a if a is not None else spec.a, b if b is not None else spec.b)
    with pytest.raises(NotIsolating):
        validate_block(spec, H1 + 5e-4, params)


def test_block_must_straddle_l1(params, points, H1):
    with pytest.raises(ValueError):
        validate_block(BlockSpec(points.x_l1, points.x_l1 + 0.05), H1 + 5e-4, params)


def test_section_geometry(params, points, H1, geom):
    spec = default_block_spec(params)
    assert geom.D1 == params.mu - spec.a
    assert geom.y_b == pytest.approx(0.14992, abs=1e-5)
    assert geom.theta1 == pytest.approx(0.18785, abs=1e-5)
    Hs = np.linspace(H1 + 1e-4, default_energy_ceiling(params), 5)
    ybs = [section_geometry(spec, H, params).y_b for H in Hs]
    assert np.all(np.diff(ybs) > 0)
    assert geom.admissible(0.0) and not geom.admissible(np.pi) and not geom.admissible(-np.pi + 0.1)


def _fate(q, orbit, params, spec):
    s = section_state(q[0], q[1], 0.0, orbit.energy, params)
    entry = first_block_encounter(s, spec, params, t_max=30.0)
    if entry is None:
        return None, None
    return block_transit(entry, spec, params), entry


def test_transit_agrees_with_cut(cut0, orbit5, params):
    spec = validate_block(default_block_spec(params), orbit5.energy, params)
    c = cut0.points.mean(axis=0)
    inside = [c + f * (p - c) for p in cut0.points[::20] for f in (0.3, 0.8)]
    outside = [c + f * (p - c) for p in cut0.points[::20] for f in (1.3,)]
    outside = [q for q in outside if distance_to_curve(cut0, q) > 1e-3]
    for q in inside:
        assert point_location(cut0, q) == "inside"
        out, entry = _fate(q, orbit5, params, spec)
        assert out is not None and out.kind == TRANSIT
    x_floor = 2 * orbit5.x_l1 - spec.b
    for q in outside:
        try:
            out, entry = _fate(q, orbit5, params, spec)
        except ValueError:
            continue
        if out is None:
            continue
        assert out.kind == BOUNCE
        traj = propagate(entry, out.exit[0], (), params)
        assert traj.states[:, 0].min() > x_floor


def test_dwell_on_the_manifold(cut0, orbit5, params):
    spec = validate_block(default_block_spec(params), orbit5.energy, params)
    entry = first_block_encounter(cut0.states[0], spec, params, t_max=30.0)
    out = block_transit(entry, spec, params, T_max=3.0)
    assert out.kind == DWELL and out.exit is None


def test_transit_needs_entry_state(params):
    spec = default_block_spec(params)
    with pytest.raises(NotOnBoundary):
        block_transit((spec.b, 0.0, 0.1, 0.0), spec, params)


def test_zero_velocity_curve(params, H1):
    H = H1 + 5e-4
    curves = zero_velocity_curve(H, params, resolution=300)
    assert len(curves) == 2
    for c in curves:
        assert max(abs(effective_potential(x, y, params) + H) for x, y in c) < 1e-10
    inner = min(curves, key=lambda c: np.ptp(c[:, 0]))
    # the bounded component surrounds both primaries
    assert inner[:, 0].min() < -1 + params.mu < params.mu < inner[:, 0].max()
    finer = zero_velocity_curve(H, params, resolution=600)
    assert sum(map(len, finer)) > 1.5 * sum(map(len, curves))
    with pytest.raises(ValueError):
        zero_velocity_curve(-1.4, params)
