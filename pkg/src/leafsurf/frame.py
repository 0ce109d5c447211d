"""Locally orthogonal leaf coordinates following a medial-axis spline.

Leaf coordinates are ``y = [y1, y2, y3]``: arc length along the medial
axis, lateral offset along the binormal ``W`` and height along the
approximate surface normal ``V``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError, OutsideDomainError
from .numerics import CubicSpline3, brent_min, fit_cubic_spline, pca_normal, reparam_arclength

N_SAMPLES = 64
_CHUNK = 20_000


@dataclass(frozen=True, eq=False)
class LeafFrame:
    medial: CubicSpline3
    normal: CubicSpline3
    params: np.ndarray
    radius: float

    @property
    def length(self) -> float:
        """Parameter domain end ``t_K`` (total arc length)."""
        return float(self.params[-1])

    def axes(self, t):
        return frame_axes(self, t)

    def to_leaf(self, x, return_clamped=False):
        return world_to_leaf(self, x, return_clamped=return_clamped)

    def to_world(self, y):
        return leaf_to_world(self, y)


def _orient(normals, hint):
    v = np.array(normals, float)
    if hint is None:
        hint = np.array([0.0, 0.0, 1.0])
        if abs(v[0] @ hint) < 1e-6:
            hint = None
    if hint is not None and v[0] @ np.asarray(hint, float) < 0:
        v[0] = -v[0]
    for j in range(1, len(v)):
        dot = v[j] @ v[j - 1]
        if abs(dot) < 1e-12:
            raise DegenerateGeometryError(
                f"cannot orient normal at control point {j}: perpendicular to its predecessor"
            )
        if dot < 0:
            v[j] = -v[j]
    return v


def build_frame(cloud, control_points, R: float, normal_hint=None) -> LeafFrame:
    """Fit medial-axis and normal splines through ordered control points.

    Normals are PCA estimates from cloud points within ``R`` of each control
    point; the first is oriented along ``normal_hint`` (default world +z)
    and the rest follow by continuity.
    """
    cloud = np.asarray(cloud, float)
    ctrl = np.asarray(control_points, float)
    if ctrl.ndim != 2 or ctrl.shape[1] != 3:
        raise ValueError("control points must have shape (K, 3)")
    if ctrl.shape[0] < 3:
        raise ValueError("need at least 3 control points")
    if R <= 0:
        raise ValueError("R must be positive")
    chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(ctrl, axis=0), axis=1))])
    t, medial = reparam_arclength(fit_cubic_spline(chord, ctrl))
    tree = cKDTree(cloud)
    normals = []
    for j, c in enumerate(ctrl):
        idx = tree.query_ball_point(c, R)
        try:
            normals.append(pca_normal(cloud[idx]))
        except DegenerateGeometryError as exc:
            raise DegenerateGeometryError(
                f"control point {j} ({c}): {len(idx)} neighbours within R: {exc}"
            ) from exc
    v = _orient(normals, normal_hint)
    frame = LeafFrame(medial, fit_cubic_spline(t, v), t, float(R))
    frame_axes(frame, np.linspace(0.0, frame.length, 257))
    return frame


def frame_axes(frame: LeafFrame, t):
    """Unit tangent, normal V and binormal W = tangent x V at ``t``."""
    t = np.asarray(t, float)
    d1 = frame.medial(t, 1)
    tan = d1 / np.linalg.norm(d1, axis=-1, keepdims=True)
    vt = frame.normal(t)
    vh = vt - np.sum(vt * tan, axis=-1, keepdims=True) * tan
    nv = np.linalg.norm(vh, axis=-1, keepdims=True)
    if np.any(nv <= 1e-12 * np.linalg.norm(vt, axis=-1, keepdims=True)):
        raise DegenerateGeometryError("normal spline is parallel to the medial axis")
    V = vh / nv
    W = np.cross(tan, V)
    return tan, V, W


def _closest_param(frame: LeafFrame, p, lo, hi):
    m = frame.medial
    tol = 1e-8 * frame.length

    def dist2(s):
        q = m(s) - p
        return float(q @ q)

    return brent_min(dist2, lo, hi, tol)


def _closest_params(frame: LeafFrame, X, ts, samples, iters: int = 40):
    """Closest medial parameters for many points at once.

    The nearest of the uniform samples brackets each minimum; inside the
    bracket the stationarity condition ``(m(s) - p) . m'(s) = 0`` is solved
    by Newton steps safeguarded with bisection. Points whose derivative does
    not change sign across the bracket take the bracket end. Anything left
    unconverged falls back to bounded Brent minimisation.
    """
    m = frame.medial
    d2 = ((X[:, None, :] - samples[None, :, :]) ** 2).sum(axis=2)
    k = np.argmin(d2, axis=1)
    a = ts[np.maximum(k - 1, 0)]
    b = ts[np.minimum(k + 1, ts.size - 1)]

    def g(s):
        return np.sum((m(s) - X) * m(s, 1), axis=1)

    ga, gb = g(a), g(b)
    out = np.where(ga >= 0, a, b)
    live = (ga < 0) & (gb > 0)
    s = np.where(live, ts[k], out)
    tol = 1e-13 * frame.length
    done = ~live
    for _ in range(iters):
        if done.all():
            break
        idx = np.nonzero(~done)[0]
        si, Xi = s[idx], X[idx]
        q = m(si) - Xi
        d1 = m(si, 1)
        gi = np.sum(q * d1, axis=1)
        hi_ = np.sum(d1 * d1, axis=1) + np.sum(q * m(si, 2), axis=1)
        ai, bi = a[idx], b[idx]
        ai = np.where(gi < 0, si, ai)
        bi = np.where(gi > 0, si, bi)
        a[idx], b[idx] = ai, bi
        with np.errstate(divide="ignore", invalid="ignore"):
            step = si - gi / hi_
        bad = ~np.isfinite(step) | (step <= ai) | (step >= bi) | (hi_ <= 0)
        new = np.where(bad, 0.5 * (ai + bi), step)
        conv = (np.abs(new - si) <= tol) | (gi == 0) | (bi - ai <= tol)
        s[idx] = new
        done[idx] = conv
    for i in np.nonzero(~done)[0]:
        s[i] = _closest_param(frame, X[i], a[i], b[i])
    return s


def world_to_leaf(frame: LeafFrame, x, return_clamped=False):
    """Leaf coordinates of world point(s) ``x``.

    The closest medial-axis parameter is bracketed by sampling 64 uniform
    parameters and refined by safeguarded Newton iteration on the
    stationarity condition (bounded Brent minimisation as a fallback). With
    ``return_clamped`` a boolean array flags projections that landed on an
    end of the parameter domain.
    """
    X = np.asarray(x, float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    tk = frame.length
    ts = np.linspace(0.0, tk, N_SAMPLES)
    samples = frame.medial(ts)
    tstar = np.empty(X.shape[0])
    for c in range(0, X.shape[0], _CHUNK):
        tstar[c:c + _CHUNK] = _closest_params(frame, X[c:c + _CHUNK], ts, samples)
    tan, V, W = frame_axes(frame, tstar)
    diff = X - frame.medial(tstar)
    y = np.column_stack([tstar, np.sum(diff * W, axis=1), np.sum(diff * V, axis=1)])
    edge = 1e-6 * tk
    clamped = (tstar <= edge) | (tstar >= tk - edge)
    if single:
        y = y[0]
        clamped = bool(clamped[0])
    return (y, clamped) if return_clamped else y


def leaf_to_world(frame: LeafFrame, y):
    """``m(y1) + y2 W(y1) + y3 V(y1)``."""
    Y = np.asarray(y, float)
    single = Y.ndim == 1
    Y = np.atleast_2d(Y)
    tk = frame.length
    t = Y[:, 0]
    slack = 1e-12 * max(tk, 1.0)
    if np.any(t < -slack) or np.any(t > tk + slack):
        raise OutsideDomainError(f"leaf coordinate y1 outside [0, {tk:.6g}]")
    t = np.clip(t, 0.0, tk)
    _, V, W = frame_axes(frame, t)
    X = frame.medial(t) + Y[:, 1:2] * W + Y[:, 2:3] * V
    return X[0] if single else X
