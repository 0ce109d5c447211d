"""Compiled inner loops for RBF and partition-of-unity evaluation.

Kernel codes: 2 -> r^2 log r (planar thin plate), 3 -> r^3.
Centres are stored structure-of-arrays, shape (dim, N), relative to the
owning subdomain's origin.
"""

import math
import os

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    # skip probing TBB, which warns when an old runtime is installed
    try:
        from numba.np.ufunc import omppool  # noqa: F401
        numba.config.THREADING_LAYER = "omp"
    except ImportError:
        pass


@njit(cache=True, fastmath=True)
def _sum_tps2(x0, x1, cx, lam, lo, hi):
    s = 0.0
    for j in range(lo, hi):
        d0 = x0 - cx[0, j]
        d1 = x1 - cx[1, j]
        r2 = d0 * d0 + d1 * d1
        if r2 > 0.0:
            s += lam[j] * r2 * math.log(r2)
    return 0.5 * s


@njit(cache=True, fastmath=True)
def _sum_cubic3(x0, x1, x2, cx, lam, lo, hi):
    s = 0.0
    for j in range(lo, hi):
        d0 = x0 - cx[0, j]
        d1 = x1 - cx[1, j]
        d2 = x2 - cx[2, j]
        r2 = d0 * d0 + d1 * d1 + d2 * d2
        s += lam[j] * r2 * math.sqrt(r2)
    return s


@njit(cache=True)
def _local_value(p, i, kind, cx, lam, offsets, tail):
    """Value of local interpolant ``i`` at ``p`` (already in its frame)."""
    lo = offsets[i]
    hi = offsets[i + 1]
    d = p.shape[0]
    v = tail[i, 0]
    for k in range(d):
        v += tail[i, k + 1] * p[k]
    if kind == 2:
        v += _sum_tps2(p[0], p[1], cx, lam, lo, hi)
    else:
        v += _sum_cubic3(p[0], p[1], p[2], cx, lam, lo, hi)
    return v


@njit(cache=True)
def wendland(t):
    if t >= 1.0:
        return 0.0
    u = 1.0 - t
    u2 = u * u
    return u2 * u2 * (4.0 * t + 1.0)


@njit(cache=True, parallel=True)
def local_eval(q, kind, cx, lam, tail, origin):
    """Evaluate a single local interpolant at every row of ``q``."""
    m = q.shape[0]
    d = q.shape[1]
    out = np.empty(m)
    offsets = np.array([0, lam.shape[0]], dtype=np.int64)
    for k in prange(m):
        p = np.empty(d)
        for a in range(d):
            p[a] = q[k, a] - origin[a]
        out[k] = _local_value(p, 0, kind, cx, lam, offsets, tail)
    return out


@njit(cache=True)
def _cell_of(p, g0, gh, gshape):
    """Flat grid cell index, or -1 when ``p`` is outside the grid."""
    d = p.shape[0]
    flat = 0
    for a in range(d):
        c = int(math.floor((p[a] - g0[a]) / gh))
        if c < 0 or c >= gshape[a]:
            return -1
        flat = flat * gshape[a] + c
    return flat


@njit(cache=True)
def _accumulate(p, kind, cx, lam, offsets, tail, sc, sr, g0, gh, gshape,
                cstart, citems, want_value):
    """Return (weighted value sum, weight sum, active count) at frame point p."""
    num = 0.0
    den = 0.0
    cnt = 0
    cell = _cell_of(p, g0, gh, gshape)
    if cell < 0:
        return 0.0, 0.0, 0
    d = p.shape[0]
    loc = np.empty(d)
    for s in range(cstart[cell], cstart[cell + 1]):
        i = citems[s]
        r2 = 0.0
        for a in range(d):
            loc[a] = p[a] - sc[i, a]
            r2 += loc[a] * loc[a]
        ri = sr[i]
        if r2 >= ri * ri:
            continue
        w = wendland(math.sqrt(r2) / ri)
        if w <= 0.0:
            continue
        den += w
        cnt += 1
        if want_value:
            num += w * _local_value(loc, i, kind, cx, lam, offsets, tail)
    return num, den, cnt


@njit(cache=True, parallel=True)
def pu_eval(q, kind, cx, lam, offsets, tail, sc, sr, g0, gh, gshape,
            cstart, citems, want_value):
    m = q.shape[0]
    num = np.zeros(m)
    den = np.zeros(m)
    for k in prange(m):
        n, w, _ = _accumulate(q[k], kind, cx, lam, offsets, tail, sc, sr,
                              g0, gh, gshape, cstart, citems, want_value)
        num[k] = n
        den[k] = w
    return num, den


@njit(cache=True, parallel=True)
def tiled_eval(q, kind, cx, lam, offsets, tail, sc, sr, g0, gh, gshape,
               cstart, citems, tile_w, qlo, qhi, bmin, bmax, want_value):
    """Sum over lattice copies of a 3-D field.

    Copy ``(q1, q2)`` is displaced by ``(q1 * tile_w[0], q2 * tile_w[1], 0)``;
    only copies within ``[qlo, qhi]`` (inclusive) whose sphere bounding box
    ``[bmin, bmax]`` can contain the displaced point are visited.
    """
    m = q.shape[0]
    num = np.zeros(m)
    den = np.zeros(m)
    for k in prange(m):
        z0 = q[k, 0]
        z1 = q[k, 1]
        a0 = max(qlo[0], int(math.ceil((z0 - bmax[0]) / tile_w[0])))
        b0 = min(qhi[0], int(math.floor((z0 - bmin[0]) / tile_w[0])))
        a1 = max(qlo[1], int(math.ceil((z1 - bmax[1]) / tile_w[1])))
        b1 = min(qhi[1], int(math.floor((z1 - bmin[1]) / tile_w[1])))
        p = np.empty(3)
        p[2] = q[k, 2]
        n_acc = 0.0
        w_acc = 0.0
        for c0 in range(a0, b0 + 1):
            p[0] = z0 - c0 * tile_w[0]
            for c1 in range(a1, b1 + 1):
                p[1] = z1 - c1 * tile_w[1]
                n, w, _ = _accumulate(p, kind, cx, lam, offsets, tail, sc, sr,
                                      g0, gh, gshape, cstart, citems, want_value)
                n_acc += n
                w_acc += w
        num[k] = n_acc
        den[k] = w_acc
    return num, den
