import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from leafsurf.errors import DegenerateGeometryError
from leafsurf.numerics import (SaddleSystem, brent_min, fit_cubic_spline, kkt_residual,
                               pca_normal, reparam_arclength, segment_lengths, solve_saddle)
from leafsurf.rbf import THIN_PLATE_2D
from scipy.spatial.distance import cdist


def test_saddle_hand_solved():
    sys = SaddleSystem(np.eye(2), np.ones((2, 1)), np.array([1.0, -1.0]))
    lam, a = solve_saddle(sys)
    np.testing.assert_allclose(lam, [1, -1], atol=1e-14)
    np.testing.assert_allclose(a, [0], atol=1e-14)


def test_saddle_zero_rhs():
    sys = SaddleSystem(np.eye(3), np.ones((3, 1)), np.zeros(3))
    lam, a = solve_saddle(sys)
    assert not lam.any() and not a.any()


def test_linear_data_goes_into_the_tail():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (5, 2))
    f = 2 * x[:, 0] + 1
    A = THIN_PLATE_2D(cdist(x, x))
    P = np.hstack([np.ones((5, 1)), x])
    lam, a = solve_saddle(SaddleSystem(A, P, f))
    assert np.abs(lam).max() < 1e-8
    np.testing.assert_allclose(a, [1, 2, 0], atol=1e-9)
    # oracle: plain dense solve of the same augmented matrix
    K = np.block([[A, P], [P.T, np.zeros((3, 3))]])
    ref = np.linalg.solve(K, np.concatenate([f, np.zeros(3)]))
    np.testing.assert_allclose(np.concatenate([lam, a]), ref, atol=1e-9)


def test_collinear_sites_rejected():
    x = np.column_stack([np.linspace(0, 1, 6), np.zeros(6)])
    A = THIN_PLATE_2D(cdist(x, x))
    P = np.hstack([np.ones((6, 1)), x])
    with pytest.raises(DegenerateGeometryError):
        solve_saddle(SaddleSystem(A, P, x[:, 0]))


def test_saddle_shape_checks():
    with pytest.raises(ValueError):
        SaddleSystem(np.eye(2), np.ones((2, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        SaddleSystem(np.eye(2), np.ones((2, 1)), np.zeros(2), sigma=-1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 200), st.integers(1, 4), st.integers(0, 2**31 - 1),
       st.floats(0.0, 10.0))
def test_saddle_kkt_residual_property(N, n, seed, sigma):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((N, N))
    A = B @ B.T / N + np.eye(N)
    P = rng.standard_normal((N, n))
    rhs = rng.standard_normal(N) * 10
    sys = SaddleSystem(A, P, rhs, sigma)
    lam, a = solve_saddle(sys)
    assert kkt_residual(sys, lam, a) < 1e-8 * (1 + np.abs(rhs).max())


def test_spline_two_points_is_a_segment():
    s = fit_cubic_spline([0.0, 2.0], [[0, 0, 0], [2, 4, 6]])
    t = np.linspace(0, 2, 9)
    np.testing.assert_allclose(s(t), np.outer(t, [1, 2, 3]), atol=1e-12)
    np.testing.assert_allclose(s(t, 1), np.tile([1, 2, 3], (9, 1)), atol=1e-12)


def test_spline_collinear_points():
    t = np.arange(6.0)
    pts = np.outer(t, [0.5, -1, 2]) + [1, 1, 1]
    s = fit_cubic_spline(t, pts)
    tt = np.linspace(0, 5, 101)
    assert np.abs(s(tt) - (np.outer(tt, [0.5, -1, 2]) + 1)).max() < 1e-10


def test_spline_circle_arc_error_bound():
    ang = np.linspace(0, np.pi / 2, 5)
    pts = np.column_stack([np.cos(ang), np.sin(ang), np.zeros(5)])
    s = fit_cubic_spline(ang, pts)
    mid = 0.5 * (ang[1:] + ang[:-1])
    err = np.abs(np.linalg.norm(s(mid)[:, :2], axis=1) - 1)
    # cubic interpolation error on a step of pi/8 with |m''''| = 1
    h = ang[1] - ang[0]
    assert err[1:-1].max() < h**4  # generous over the (5/384) h^4 interior bound
    # natural end conditions zero the curvature at the ends, so near the ends
    # only the chord bound h^2 |m''| / 8 of linear interpolation applies
    dense = np.linspace(0, np.pi / 2, 2001)
    assert np.abs(np.linalg.norm(s(dense)[:, :2], axis=1) - 1).max() < h**2 / 8


def test_spline_natural_ends_and_continuity():
    rng = np.random.default_rng(0)
    t = np.cumsum(rng.uniform(0.5, 1.5, 8))
    pts = rng.standard_normal((8, 3))
    s = fit_cubic_spline(t, pts)
    np.testing.assert_allclose(s(t), pts, atol=1e-10 * np.abs(pts).max())
    np.testing.assert_allclose(s(t[[0, -1]], 2), 0, atol=1e-10)
    e = 1e-9
    for k in t[1:-1]:
        np.testing.assert_allclose(s(k - e, 1), s(k + e, 1), atol=1e-7)
        np.testing.assert_allclose(s(k - e, 2), s(k + e, 2), atol=1e-6)


@pytest.mark.parametrize("params", [[0.0, 0.0, 1.0], [0.0, 2.0, 1.0]])
def test_spline_bad_params(params):
    with pytest.raises(ValueError):
        fit_cubic_spline(params, np.zeros((3, 3)))


def test_spline_count_mismatch():
    with pytest.raises(ValueError):
        fit_cubic_spline([0.0, 1.0], np.zeros((3, 3)))


def test_reparam_straight_line():
    pts = np.outer(np.arange(5.0), [0.6, 0.8, 0.0])
    t, s = reparam_arclength(fit_cubic_spline(np.arange(5.0) * 3.0, pts))
    np.testing.assert_allclose(t, np.arange(5.0), atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(s(np.linspace(0, 4, 50), 1), axis=1), 1, atol=1e-10)


def test_reparam_two_points():
    t, _ = reparam_arclength(fit_cubic_spline([0.0, 1.0], [[0, 0, 0], [3, 4, 0]]))
    np.testing.assert_allclose(t, [0, 5])


def test_reparam_unit_circle_quarters():
    # dense enough that the interpolant's own arc length matches the circle's
    ang = np.linspace(0, 2 * np.pi, 257)
    pts = np.column_stack([np.cos(ang), np.sin(ang), np.zeros_like(ang)])
    t, s = reparam_arclength(fit_cubic_spline(np.arange(257.0), pts))
    np.testing.assert_allclose(np.diff(t[::64]), np.pi / 2, atol=1e-6)
    sp = np.linalg.norm(s(np.linspace(0, t[-1], 100), 1), axis=1)
    assert sp.min() > 0.9 and sp.max() < 1.1


def test_reparam_quadrature_matches_dense_integral():
    rng = np.random.default_rng(2)
    pts = np.cumsum(rng.uniform(0.2, 1.0, (6, 3)), axis=0)
    s = fit_cubic_spline(np.arange(6.0), pts)
    lens = segment_lengths(s)
    for j in range(5):
        u = np.linspace(j, j + 1, 200_001)
        sp = np.linalg.norm(s(u, 1), axis=1)
        ref = np.sum(0.5 * (sp[1:] + sp[:-1]) * np.diff(u))
        assert abs(lens[j] - ref) < 1e-8 * ref


def test_reparam_zero_length_segment():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1, 0, 0], [2, 0, 0]], float)
    # a natural spline cannot stand still over a whole interval unless the data does
    s = fit_cubic_spline([0.0, 1.0, 2.0, 3.0], pts)
    if segment_lengths(s)[1] > 0:
        pts = np.zeros((2, 3))
        s = fit_cubic_spline([0.0, 1.0], pts)
    with pytest.raises(ValueError):
        reparam_arclength(s)


def test_brent_quadratic():
    assert abs(brent_min(lambda t: (t - 0.3) ** 2, 0, 1, 1e-8) - 0.3) < 1e-7


def test_brent_monotone_boundary():
    assert brent_min(lambda t: t, 0.0, 1.0) < 1e-6


def test_brent_cosine():
    assert abs(brent_min(np.cos, 0, 2 * np.pi) - np.pi) < 1e-6


def test_brent_bad_interval():
    with pytest.raises(ValueError):
        brent_min(np.cos, 1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 10), st.floats(-3, 3))
def test_brent_stays_in_bounds(lo, width, c):
    hi = lo + width
    seen = []

    def f(t):
        seen.append(t)
        return np.cosh(t - c)

    ts = brent_min(f, lo, hi)
    assert lo <= ts <= hi
    assert all(lo <= t <= hi for t in seen)
    grid = np.linspace(lo, hi, 20001)
    assert f(ts) <= f(grid).min() + 1e-8 * width
    assert abs(ts - min(max(c, lo), hi)) < 1e-4 * width


def test_pca_planes():
    rng = np.random.default_rng(0)
    xy = rng.uniform(-1, 1, (50, 2))
    n = pca_normal(np.column_stack([xy, np.zeros(50)]))
    np.testing.assert_allclose(np.abs(n), [0, 0, 1], atol=1e-12)
    a = np.array([1, -1, 0]) / np.sqrt(2)
    b = np.array([1, 1, -2]) / np.sqrt(6)
    pts = xy[:, :1] * a + xy[:, 1:] * b
    n = pca_normal(pts)
    assert abs(abs(n @ np.ones(3) / np.sqrt(3)) - 1) < 1e-10


def test_pca_noisy_plane_within_two_degrees():
    rng = np.random.default_rng(5)
    true = np.array([0.2, -0.3, 0.9])
    true /= np.linalg.norm(true)
    u = np.cross(true, [1, 0, 0])
    u /= np.linalg.norm(u)
    v = np.cross(true, u)
    c = rng.uniform(-0.5, 0.5, (400, 2))
    pts = c[:, :1] * u + c[:, 1:] * v + 0.01 * rng.standard_normal((400, 1)) * true
    n = pca_normal(pts)
    assert np.degrees(np.arccos(min(1.0, abs(n @ true)))) < 2


def test_pca_degenerate():
    line = np.outer(np.linspace(0, 1, 10), [1, 2, 3])
    with pytest.raises(DegenerateGeometryError):
        pca_normal(line)
    with pytest.raises(DegenerateGeometryError):
        pca_normal(np.zeros((2, 3)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (12, 3), elements=st.floats(-10, 10)))
def test_pca_unit_norm(pts):
    try:
        n = pca_normal(pts)
    except DegenerateGeometryError:
        return
    assert abs(np.linalg.norm(n) - 1) < 1e-12
