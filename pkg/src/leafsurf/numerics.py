"""Shared numerical primitives.

Dense saddle-point solves for the RBF systems, natural cubic splines in
three components with arc-length reparameterisation, bounded scalar
minimisation and PCA normal estimation.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, PPoly
from scipy.linalg import lapack
from scipy.optimize import minimize_scalar

from .errors import DegenerateGeometryError

KKT_RTOL = 1e-8
_GAUSS_NODES = 16


@dataclass(frozen=True)
class SaddleSystem:
    """Blocks of ``[[A + sigma I, P], [P^T, 0]] [lam; a] = [rhs; 0]``."""

    A: np.ndarray
    P: np.ndarray
    rhs: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        N = self.A.shape[0]
        if self.A.shape != (N, N):
            raise ValueError("A must be square")
        if self.P.ndim != 2 or self.P.shape[0] != N:
            raise ValueError("P must have one row per data site")
        if self.P.shape[1] >= N:
            raise ValueError("polynomial block must be smaller than the data block")
        if self.rhs.shape != (N,):
            raise ValueError("rhs must have length N")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


def _augmented(sys: SaddleSystem) -> np.ndarray:
    N, n = sys.P.shape
    K = np.zeros((N + n, N + n))
    K[:N, :N] = sys.A
    if sys.sigma:
        K[np.arange(N), np.arange(N)] += sys.sigma
    K[:N, N:] = sys.P
    K[N:, :N] = sys.P.T
    return K


def kkt_residual(sys: SaddleSystem, lam, a) -> float:
    """Infinity norm of the residual of both block equations."""
    r1 = sys.A @ lam + sys.sigma * lam + sys.P @ a - sys.rhs
    r2 = sys.P.T @ lam
    return float(max(np.abs(r1).max(initial=0.0), np.abs(r2).max(initial=0.0)))


def _check_rank(P):
    s = np.linalg.svd(P, compute_uv=False)
    if s.size == 0 or s[-1] <= 1e-12 * max(s[0], 1e-300) * max(P.shape):
        raise DegenerateGeometryError(
            "polynomial block is rank deficient: sites are too degenerate "
            "(e.g. all collinear/coplanar) for a linear polynomial tail"
        )


@functools.lru_cache(maxsize=64)
def _sytrf_lwork(n: int) -> int:
    # The default workspace is minimal and forces the unblocked factorisation.
    work, info = lapack.dsytrf_lwork(n, lower=1)
    return max(int(work), 1) if info == 0 else max(n, 1)


def solve_saddle(sys: SaddleSystem, refine_steps: int = 3):
    """Solve the symmetric indefinite augmented system directly.

    Uses an LDL^T (Bunch-Kaufman) factorisation of the full augmented
    matrix, followed by up to ``refine_steps`` rounds of iterative
    refinement while the KKT residual exceeds ``1e-8 (1 + |rhs|_inf)``.
    Returns ``(lam, a)``.
    """
    N, n = sys.P.shape
    _check_rank(sys.P)
    K = _augmented(sys)
    b = np.concatenate([sys.rhs, np.zeros(n)])
    if not np.any(b):
        return np.zeros(N), np.zeros(n)
    fac, ipiv, info = lapack.dsytrf(K, lower=1, lwork=_sytrf_lwork(K.shape[0]))
    if info > 0:
        raise DegenerateGeometryError(
            f"augmented matrix is singular (zero pivot at {info - 1})"
        )
    x, info = lapack.dsytrs(fac, ipiv, b, lower=1)
    if info != 0:
        raise DegenerateGeometryError("back-substitution failed")
    target = KKT_RTOL * (1.0 + np.abs(sys.rhs).max())
    for _ in range(refine_steps):
        r = b - K @ x
        if np.abs(r).max() < 0.1 * target:
            break
        dx, _ = lapack.dsytrs(fac, ipiv, r, lower=1)
        x = x + dx
    if not np.all(np.isfinite(x)):
        raise DegenerateGeometryError("augmented solve produced non-finite values")
    return x[:N].copy(), x[N:].copy()


class CubicSpline3:
    """Piecewise cubic curve in R^3 (or R^k) on strictly increasing knots."""

    def __init__(self, poly: PPoly):
        self._pp = poly
        self._d1 = poly.derivative(1)
        self._d2 = poly.derivative(2)

    @property
    def knots(self) -> np.ndarray:
        return self._pp.x

    @property
    def coefficients(self) -> np.ndarray:
        """Array of shape (4, K-1, dim), highest power first per segment."""
        return self._pp.c

    @property
    def domain(self):
        return float(self._pp.x[0]), float(self._pp.x[-1])

    @classmethod
    def from_coefficients(cls, knots, coefficients) -> "CubicSpline3":
        return cls(PPoly(np.asarray(coefficients, float), np.asarray(knots, float)))

    def __call__(self, t, nu: int = 0):
        t = np.asarray(t, float)
        if nu == 0:
            return self._pp(t)
        if nu == 1:
            return self._d1(t)
        if nu == 2:
            return self._d2(t)
        return self._pp(t, nu)

    def derivative(self, t):
        return self._d1(np.asarray(t, float))


def fit_cubic_spline(params, points) -> CubicSpline3:
    """Interpolating natural cubic spline through ``points`` at ``params``."""
    params = np.asarray(params, float)
    points = np.asarray(points, float)
    if params.ndim != 1 or params.size < 2:
        raise ValueError("need at least two parameter values")
    if points.shape[0] != params.size:
        raise ValueError("parameter and point counts differ")
    dt = np.diff(params)
    if np.any(dt == 0):
        raise ValueError("duplicate spline parameters")
    if np.any(dt < 0):
        raise ValueError("spline parameters must be strictly increasing")
    cs = CubicSpline(params, points, bc_type="natural", axis=0)
    return CubicSpline3(PPoly(cs.c, cs.x))


def segment_lengths(spline: CubicSpline3, nodes: int = _GAUSS_NODES) -> np.ndarray:
    """Gauss-Legendre arc length of each knot interval."""
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    k = spline.knots
    lo, hi = k[:-1], k[1:]
    half = 0.5 * (hi - lo)
    s = (0.5 * (hi + lo))[:, None] + half[:, None] * xg[None, :]
    speed = np.linalg.norm(spline(s.ravel(), 1), axis=-1).reshape(s.shape)
    return half * (speed @ wg)


def reparam_arclength(spline: CubicSpline3, nodes: int = _GAUSS_NODES):
    """Re-fit ``spline`` through its knot points with arc-length parameters.

    Returns ``(t, new_spline)`` with ``t[0] == 0``.
    """
    lengths = segment_lengths(spline, nodes)
    if np.any(lengths <= 1e-14 * max(lengths.max(initial=0.0), 1e-300)):
        raise ValueError("zero-length spline segment")
    t = np.concatenate([[0.0], np.cumsum(lengths)])
    ctrl = spline(spline.knots)
    return t, fit_cubic_spline(t, ctrl)


def brent_min(f, lo: float, hi: float, tol: float | None = None) -> float:
    """Bounded Brent minimisation (golden section with parabolic steps)."""
    lo = float(lo)
    hi = float(hi)
    if not lo < hi:
        raise ValueError("brent_min needs lo < hi")
    if tol is None:
        tol = 1e-8 * (hi - lo)
    res = minimize_scalar(
        f, bounds=(lo, hi), method="bounded", options={"xatol": tol, "maxiter": 500}
    )
    best = float(min(max(res.x, lo), hi))
    fbest = f(best)
    # the bounded method never lands exactly on an endpoint; check them directly
    for end in (lo, hi):
        fe = f(end)
        if fe <= fbest:
            best, fbest = end, fe
    return best


def pca_normal(points) -> np.ndarray:
    """Unit eigenvector of the point covariance with the smallest eigenvalue."""
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise DegenerateGeometryError("pca_normal needs at least 3 points")
    centred = pts - pts.mean(axis=0)
    cov = centred.T @ centred / pts.shape[0]
    w, v = np.linalg.eigh(cov)
    if w[1] - w[0] <= 1e-12 * max(w[-1], 1e-300):
        raise DegenerateGeometryError(
            "ambiguous normal: the two smallest covariance eigenvalues coincide"
        )
    n = v[:, 0]
    return n / np.linalg.norm(n)
