from __future__ import annotations

import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from blemuseum.core import BeaconMap, BeaconPlacement, PathLossModel, Position2D
from blemuseum.localization import (
    DegenerateGeometryError,
    InsufficientAnchorsError,
    RangeObservation,
    build_canonical_frame,
    localize,
    position_error,
    trilaterate_canonical,
)
from blemuseum.simulator import localization_topology

LAB = PathLossModel(2.208, -68.99)


def _map(points):
    return BeaconMap(tuple(BeaconPlacement(f"B{i + 1}", x, y) for i, (x, y) in enumerate(points)), LAB)


def _ranges(points, target):
    return [RangeObservation(f"B{i + 1}", math.hypot(x - target[0], y - target[1])) for i, (x, y) in enumerate(points)]


def test_canonical_example():
    p = trilaterate_canonical(math.sqrt(2), 1.0, math.sqrt(2), 2.0, 1.0, 2.0)
    assert (p.x, p.y) == pytest.approx((1.0, 1.0), abs=1e-12)


@pytest.mark.parametrize("k", [0.5, 2.0, 7.0])
def test_equal_outer_radii_put_x_at_midpoint(k):
    assert trilaterate_canonical(3.0, 1.0, 3.0, k, 0.3, 1.0).x == pytest.approx(k / 2)


def test_canonical_rejects_m_zero():
    with pytest.raises(DegenerateGeometryError, match="collinear anchors"):
        trilaterate_canonical(1.0, 1.0, 1.0, 2.0, 1.0, 0.0)


def test_frame_identity_for_canonical_pose():
    f = build_canonical_frame(Position2D(0, 0), Position2D(1, 2), Position2D(2, 0))
    assert (f.translation.x, f.translation.y, f.rotation, f.reflection) == (0.0, 0.0, 0.0, False)


def test_frame_translation_example():
    anchors = [Position2D(5, 5), Position2D(6, 7), Position2D(7, 5)]
    f = build_canonical_frame(*anchors)
    assert (f.translation.x, f.translation.y) == (-5.0, -5.0)
    assert f.rotation == pytest.approx(0.0, abs=1e-15)
    images = [f.to_canonical(a) for a in anchors]
    assert [(p.x, p.y) for p in images] == pytest.approx([(0, 0), (1, 2), (2, 0)], abs=1e-12)


def test_frame_reflects_when_apex_below_baseline():
    f = build_canonical_frame(Position2D(0, 0), Position2D(1, -2), Position2D(2, 0))
    assert f.reflection
    assert f.to_canonical(Position2D(1, -2)).y == pytest.approx(2.0)


def test_coincident_anchors_rejected():
    with pytest.raises(DegenerateGeometryError):
        build_canonical_frame(Position2D(1, 1), Position2D(1, 1), Position2D(1, 1))


def test_localize_fig_topology_small():
    pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]
    fix = localize(_map(pts), _ranges(pts, (1.0, 0.5)))
    assert position_error(fix.position, Position2D(1.0, 0.5)) < 1e-9
    assert fix.residual < 1e-9
    assert fix.source_beacons == ("B1", "B2", "B3")


def test_localize_recovers_point_on_d1_1_d2_2_triangle():
    pts = [(p.x, p.y) for p in localization_topology(1.0, 2.0)]
    fix = localize(_map(pts), _ranges(pts, (1.0, 1.0)))
    assert position_error(fix.position, Position2D(1.0, 1.0)) < 1e-9


def test_localize_least_squares_with_four_anchors():
    pts = [(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0)]
    fix = localize(_map(pts), _ranges(pts, (1.3, 2.2)))
    assert position_error(fix.position, Position2D(1.3, 2.2)) < 1e-6


def test_localize_errors():
    pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]
    m = _map(pts)
    with pytest.raises(InsufficientAnchorsError, match="insufficient anchors"):
        localize(m, _ranges(pts, (1, 0.5))[:2])
    with pytest.raises(KeyError):
        localize(m, [RangeObservation("X", 1.0)] + _ranges(pts, (1, 0.5))[:2])
    with pytest.raises(ValueError):
        localize(m, [RangeObservation("B1", 1.0)] * 3)
    line = _map([(0, 0), (1, 0), (2, 0), (3, 0)])
    with pytest.raises(DegenerateGeometryError):
        localize(line, _ranges([(0, 0), (1, 0), (2, 0), (3, 0)], (1, 1)))


def test_inconsistent_radii_still_fix_with_residual():
    pts = [(0.0, 0.0), (1.0, 2.0), (2.0, 0.0)]
    fix = localize(_map(pts), [RangeObservation("B1", 1.0), RangeObservation("B2", 1.0), RangeObservation("B3", 5.0)])
    assert fix.residual > 0


def test_position_error_examples():
    assert position_error(Position2D(1, 1), Position2D(1, 1)) == 0
    assert position_error(Position2D(0, 0), Position2D(3, 4)) == 5
    assert position_error(Position2D(0.142, 0), Position2D(0, 0)) == pytest.approx(0.142)


coord = st.floats(-20.0, 20.0)


@given(st.tuples(coord, coord), st.tuples(coord, coord), st.tuples(coord, coord), st.tuples(coord, coord),
       st.floats(-math.pi, math.pi), st.tuples(coord, coord))
def test_frame_equivariance(a, b, c, p, angle, shift):
    """Rotating and translating the whole scene moves the fix the same way."""
    area = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    assume(area > 1.0)
    pts = [a, b, c]
    assume(min(math.hypot(q[0] - p[0], q[1] - p[1]) for q in pts) > 1e-3)
    fix = localize(_map(pts), _ranges(pts, p)).position
    cs, sn = math.cos(angle), math.sin(angle)

    def move(q):
        return (cs * q[0] - sn * q[1] + shift[0], sn * q[0] + cs * q[1] + shift[1])

    moved = [move(q) for q in pts]
    fix2 = localize(_map(moved), _ranges(moved, move(p))).position
    expect = move((fix.x, fix.y))
    assert math.hypot(fix2.x - expect[0], fix2.y - expect[1]) < 1e-6


@given(st.tuples(coord, coord), st.tuples(coord, coord), st.tuples(coord, coord))
def test_position_error_is_a_metric(a, b, c):
    pa, pb, pc = Position2D(*a), Position2D(*b), Position2D(*c)
    assert position_error(pa, pb) == position_error(pb, pa) >= 0
    assert position_error(pa, pc) <= position_error(pa, pb) + position_error(pb, pc) + 1e-9


@given(st.tuples(coord, coord), st.tuples(coord, coord), st.tuples(coord, coord))
def test_frame_round_trip(a, b, c):
    area = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    assume(area > 1e-3)
    f = build_canonical_frame(Position2D(*a), Position2D(*b), Position2D(*c))
    q = f.from_canonical(f.to_canonical(Position2D(*b)))
    assert math.hypot(q.x - b[0], q.y - b[1]) < 1e-9
    cb = f.to_canonical(Position2D(*b))
    cc = f.to_canonical(Position2D(*c))
    assert cb.y > 0 and cc.x > 0 and abs(cc.y) < 1e-9
