import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import Helix, helix_frame, near_axis_points, straight_frame
from leafsurf.errors import DegenerateGeometryError, OutsideDomainError
from leafsurf.frame import build_frame, frame_axes, leaf_to_world, world_to_leaf


@pytest.fixture(scope="module")
def helix():
    return helix_frame()


@pytest.fixture(scope="module")
def straight():
    return straight_frame()


def test_straight_frame_axes(straight):
    t = np.linspace(0, straight.length, 50)
    T, V, W = frame_axes(straight, t)
    np.testing.assert_allclose(T, np.tile([1, 0, 0], (50, 1)), atol=1e-8)
    np.testing.assert_allclose(V, np.tile([0, 0, 1], (50, 1)), atol=1e-8)
    # W = T x V
    np.testing.assert_allclose(W, np.tile([0, -1, 0], (50, 1)), atol=1e-8)
    assert straight.length == pytest.approx(4.0, abs=1e-12)


def test_straight_frame_transforms(straight):
    y = world_to_leaf(straight, np.array([0.5, 2.0, 3.0]))
    np.testing.assert_allclose(y, [0.5, -2.0, 3.0], atol=1e-9)
    np.testing.assert_allclose(leaf_to_world(straight, y), [0.5, 2.0, 3.0], atol=1e-9)
    np.testing.assert_allclose(leaf_to_world(straight, [1.5, 0, 0]), [1.5, 0, 0], atol=1e-12)


def test_knots_map_to_axis(helix):
    h, frame = helix
    for j in range(1, len(frame.params) - 1, 7):
        tj = frame.params[j]
        y = world_to_leaf(frame, frame.medial(tj))
        np.testing.assert_allclose(y, [tj, 0, 0], atol=1e-9 * frame.length)


def test_planar_arc_frame():
    ang = np.linspace(0, 1.2, 7)
    rad = 5.0
    ctrl = np.column_stack([rad * np.cos(ang), rad * np.sin(ang), np.zeros(7)])
    rng = np.random.default_rng(0)
    a = rng.uniform(-0.1, 1.3, 20000)
    r = rng.uniform(rad - 1, rad + 1, 20000)
    cloud = np.column_stack([r * np.cos(a), r * np.sin(a), np.zeros(20000)])
    frame = build_frame(cloud, ctrl, 0.8)
    T, V, W = frame_axes(frame, frame.params)
    np.testing.assert_allclose(np.abs(V[:, 2]), 1, atol=1e-10)
    np.testing.assert_allclose(W[:, 2], 0, atol=1e-10)
    radial = ctrl / rad
    c = np.abs(np.sum(W * radial, axis=1))
    np.testing.assert_allclose(c[1:-1], 1, atol=1e-3)
    # zero end curvature of the natural spline tilts the end tangents by a few degrees
    np.testing.assert_allclose(c[[0, -1]], 1, atol=5e-3)
    np.testing.assert_allclose(np.sum(T * W, axis=1), 0, atol=1e-12)


def test_helix_axes_match_closed_form(helix):
    h, frame = helix
    t = np.linspace(0.1 * frame.length, 0.9 * frame.length, 400)
    T, V, W = frame_axes(frame, t)
    Ta, Na, Ba = h.frenet(t)
    # the leaf normal is the helix binormal; W = T x V is then -N
    assert np.abs(T - Ta).max() < 1e-3
    assert np.abs(V - Ba).max() < 1e-3
    assert np.abs(W + Na).max() < 1e-3


def test_orthonormal_everywhere(helix):
    _, frame = helix
    t = np.random.default_rng(1).uniform(0, frame.length, 1000)
    T, V, W = frame_axes(frame, t)
    for a, b in [(T, V), (T, W), (V, W)]:
        assert np.abs(np.sum(a * b, axis=1)).max() < 1e-8
    for a in (T, V, W):
        assert np.abs(np.linalg.norm(a, axis=1) - 1).max() < 1e-8


def test_orientation_continuity(helix):
    _, frame = helix
    t = np.linspace(0, frame.length, 1001)
    _, V, _ = frame_axes(frame, t)
    assert np.all(np.sum(V[1:] * V[:-1], axis=1) > 0)
    v = frame.normal(frame.params)
    assert np.all(np.sum(v[1:] * v[:-1], axis=1) > 0)


def test_round_trip_near_axis(helix):
    h, frame = helix
    x = near_axis_points(h, frame, 10_000, frame.radius / 2)
    y, clamped = world_to_leaf(frame, x, return_clamped=True)
    assert not clamped.any()
    err = np.linalg.norm(leaf_to_world(frame, y) - x, axis=1)
    assert err.max() < 1e-6 * frame.length


def test_reverse_round_trip_near_axis(helix):
    _, frame = helix
    rng = np.random.default_rng(2)
    n = 2000
    r = frame.radius / 2 * np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0, 2 * np.pi, n)
    y = np.column_stack([rng.uniform(0.1, 0.9, n) * frame.length, r * np.cos(th),
                         r * np.sin(th)])
    back = world_to_leaf(frame, leaf_to_world(frame, y))
    assert np.abs(back - y).max() < 1e-6 * frame.length


def test_projection_is_global_minimum(helix):
    # points near a turn of the helix: 64-sample bracketing must pick the right branch
    h, frame = helix
    rng = np.random.default_rng(3)
    x = h.point(rng.uniform(5, 35, 300)) + rng.normal(0, 1.5, (300, 3))
    y = world_to_leaf(frame, x)
    dense = np.linspace(0, frame.length, 40001)
    m = frame.medial(dense)
    best = np.array([np.min(np.sum((m - p) ** 2, axis=1)) for p in x])
    got = np.sum((frame.medial(y[:, 0]) - x) ** 2, axis=1)
    assert np.all(got <= best + 1e-9)


def test_clamped_projections_flagged(straight):
    y, c = world_to_leaf(straight, np.array([[-3.0, 0, 0], [2.0, 0.1, 0], [9.0, 0, 1]]),
                         return_clamped=True)
    np.testing.assert_array_equal(c, [True, False, True])
    assert y[0, 0] == 0.0 and y[2, 0] == pytest.approx(straight.length)


def test_leaf_to_world_domain(straight):
    with pytest.raises(OutsideDomainError):
        leaf_to_world(straight, [straight.length + 0.1, 0, 0])
    with pytest.raises(OutsideDomainError):
        leaf_to_world(straight, [-0.1, 0, 0])


def test_build_frame_errors():
    cloud = np.random.default_rng(0).uniform(size=(100, 3))
    with pytest.raises(ValueError):
        build_frame(cloud, cloud[:2], 1.0)
    line = np.column_stack([np.linspace(0, 4, 50), np.zeros(50), np.zeros(50)])
    ctrl = line[::12]
    with pytest.raises(DegenerateGeometryError, match="control point 0"):
        build_frame(line, ctrl, 0.5)


def test_perpendicular_normals_rejected():
    # three flat panels: xy plane, then a vertical panel
    a = np.column_stack([np.random.default_rng(1).uniform(-1, 1, (500, 2)), np.zeros(500)])
    b = a[:, [0, 2, 1]] + [4, 0, 0]
    ctrl = np.array([[0, 0, 0], [2, 0, 0], [4, 0, 0.0]])
    cloud = np.vstack([a, a + [2, 0, 0], b])
    with pytest.raises(DegenerateGeometryError):
        build_frame(cloud, ctrl, 0.9)


def test_degenerate_gram_schmidt(straight):
    from leafsurf.frame import LeafFrame
    from leafsurf.numerics import fit_cubic_spline
    bad = LeafFrame(straight.medial, fit_cubic_spline(straight.params,
                                                      np.tile([1.0, 0, 0], (5, 1))),
                    straight.params, 1.0)
    with pytest.raises(DegenerateGeometryError):
        frame_axes(bad, 1.0)


def test_rigid_motion_invariance(helix):
    h, frame = helix
    rot = np.linalg.qr(np.random.default_rng(4).standard_normal((3, 3)))[0]
    if np.linalg.det(rot) < 0:
        rot[:, 0] *= -1
    shift = np.array([5.0, -2.0, 7.0])
    moved = build_frame(h.ribbon() @ rot.T + shift, h.control() @ rot.T + shift, frame.radius,
                        normal_hint=rot @ h.frenet(0.0)[2])
    x = near_axis_points(h, frame, 500, 1.0, seed=5)
    np.testing.assert_allclose(world_to_leaf(moved, x @ rot.T + shift), world_to_leaf(frame, x),
                               atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.floats(3.0, 37.0), st.floats(0.0, 1.2), st.floats(0, 2 * np.pi))
def test_round_trip_property(s, r, th):
    h, frame = _HELIX
    T, N, B = h.frenet(s)
    x = h.point(s) + r * (np.cos(th) * N + np.sin(th) * B)
    y, clamped = world_to_leaf(frame, x, return_clamped=True)
    assert not clamped
    assert np.linalg.norm(leaf_to_world(frame, y) - x) < 1e-6 * frame.length
    assert abs(np.hypot(y[1], y[2]) - r) < 1e-3


_HELIX = helix_frame()
