"""Polyharmonic spline kernels and local smoothed RBF interpolants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from . import _kernels
from .errors import DegenerateGeometryError
from .numerics import SaddleSystem, kkt_residual, solve_saddle

# Small batches are cheaper in numpy than through the compiled loop.
_NUMPY_EVAL_LIMIT = 64


@dataclass(frozen=True)
class Kernel:
    """Order-2 polyharmonic spline in dimension 2 (r^2 log r) or 3 (r^3)."""

    dim: int
    order: int = 2

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("only d=2 (thin plate) and d=3 (cubic) kernels exist")
        if self.order != 2:
            raise ValueError("only order m=2 is supported")

    @property
    def theta(self) -> float:
        return 8.0 * math.pi if self.dim == 2 else 96.0 * math.pi

    def __call__(self, r):
        return phi(self.dim, r)


THIN_PLATE_2D = Kernel(2)
CUBIC_3D = Kernel(3)


def kernel_for(dim: int) -> Kernel:
    return THIN_PLATE_2D if dim == 2 else CUBIC_3D


def phi(dim: int, r):
    r = np.asarray(r, float)
    if dim == 3:
        return r * r * r
    out = np.zeros_like(r)
    pos = r > 0
    rp = r[pos]
    out[pos] = rp * rp * np.log(rp)
    return out if out.ndim else float(out)


def kernel_eval(kernel: Kernel, r):
    """phi(r) for ``r >= 0``; ``r^2 log r`` is continued by 0 at the origin."""
    arr = np.asarray(r, float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("kernel radius must be nonnegative")
    out = phi(kernel.dim, arr)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class LocalRBF:
    """Fitted local interpolant.

    ``centers`` are stored in world coordinates; the polynomial tail
    ``a = [a0, a1, ..., ad]`` acts on ``x - origin``.
    """

    kernel: Kernel
    centers: np.ndarray
    lam: np.ndarray
    a: np.ndarray
    rho: float
    origin: np.ndarray
    kkt_residual: float = 0.0
    _cx: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self._cx is None:
            local = (self.centers - self.origin).T
            object.__setattr__(self, "_cx", np.ascontiguousarray(local))

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.kernel.dim

    def __call__(self, x):
        return eval_local(self, x)


def polynomial_block(x: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _check_sites(x: np.ndarray, d: int):
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"sample sites must have shape (N, {d})")
    if x.shape[0] < d + 1:
        raise DegenerateGeometryError(
            f"need at least {d + 1} samples for a linear tail in {d}-D, got {x.shape[0]}"
        )
    if np.unique(x, axis=0).shape[0] != x.shape[0]:
        raise DegenerateGeometryError("sample sites must be pairwise distinct")


def fit_local(points, values, rho: float, kernel: Kernel, origin=None) -> LocalRBF:
    """Fit a smoothed polyharmonic interpolant with a linear polynomial tail.

    Solves ``(A + rho N / theta I) lam + P a = f`` with ``P^T lam = 0``.
    Values are mean-centred for the solve; the mean is folded back into the
    constant tail coefficient.
    """
    x = np.asarray(points, float)
    f = np.asarray(values, float).ravel()
    d = kernel.dim
    _check_sites(x, d)
    if f.shape[0] != x.shape[0]:
        raise ValueError("values and sites differ in length")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    origin = np.zeros(d) if origin is None else np.asarray(origin, float)
    xl = x - origin
    N = x.shape[0]
    mean = float(f.mean())
    fc = f - mean
    A = kernel(cdist(xl, xl))
    P = polynomial_block(xl)
    sys = SaddleSystem(A, P, fc, rho * N / kernel.theta)
    lam, a = solve_saddle(sys)
    resid = kkt_residual(sys, lam, a) / (1.0 + np.abs(fc).max(initial=0.0))
    a = a.copy()
    a[0] += mean
    return LocalRBF(kernel, x, lam, a, float(rho), origin, float(resid))


def eval_local(rbf: LocalRBF, x):
    """``sum_j lam_j phi(|x - x_j|) + a . [1, x - origin]`` at one or many points."""
    q = np.asarray(x, float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    if q.shape[1] != rbf.dim:
        raise ValueError(f"query points must have dimension {rbf.dim}")
    if q.shape[0] <= _NUMPY_EVAL_LIMIT:
        ql = q - rbf.origin
        vals = rbf.kernel(cdist(ql, rbf.centers - rbf.origin)) @ rbf.lam
        vals = vals + polynomial_block(ql) @ rbf.a
    else:
        vals = _kernels.local_eval(
            np.ascontiguousarray(q), rbf.dim, rbf._cx, rbf.lam,
            rbf.a.reshape(1, -1), rbf.origin,
        )
    return float(vals[0]) if single else vals
