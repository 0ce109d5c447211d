"""Triangle meshes: Delaunay/alpha-shape clipping, marching tetrahedra,
height-map sampling."""

from __future__ import annotations

import logging
import math
import random
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import DegenerateGeometryError, LeafSurfError
from .frame import LeafFrame, leaf_to_world
from .timing import clock

log = logging.getLogger(__name__)

_GHOST = -1
_ORIENT_EPS = 1e-12
_INCIRCLE_EPS = 1e-12
_INSIDE_EPS = 1e-12
_SNAP = 1e-6


@dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    provenance: str = "implicit"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, np.int64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def edge_counts(self):
        """Undirected edges ``(a, b)`` with ``a < b`` and their triangle counts."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0, return_counts=True)


def merge_meshes(meshes, provenance=None) -> TriangleMesh:
    verts, tris, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += m.n_vertices
    if not verts:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64), provenance or "mixed")
    tags = {m.provenance for m in meshes}
    tag = provenance or (tags.pop() if len(tags) == 1 else "mixed")
    return TriangleMesh(np.vstack(verts), np.vstack(tris), tag)


# ---------------------------------------------------------------- Delaunay

@dataclass(frozen=True, eq=False)
class Triangulation:
    """Delaunay triangulation with counterclockwise triangles."""

    points: np.ndarray
    triangles: np.ndarray
    skipped: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


def _snake_order(pts):
    n = pts.shape[0]
    lo = pts.min(axis=0)
    span = np.maximum(pts.max(axis=0) - lo, 1e-300)
    rows = max(1, int(math.sqrt(n / 4.0)))
    r = np.minimum((pts[:, 1] - lo[1]) / span[1] * rows, rows - 1).astype(np.int64)
    x = (pts[:, 0] - lo[0]) / span[0]
    x = np.where(r % 2 == 1, 1.0 - x, x)
    return np.lexsort((x, r))


class _BowyerWatson:
    """Incremental insertion with ghost triangles.

    ``apex[(a, b)] = c`` for every directed edge of every live triangle
    ``(a, b, c)``; ghost triangles carry vertex -1 and stand for the outside
    of each convex-hull edge.
    """

    def __init__(self, pts):
        self.x = pts[:, 0].tolist()
        self.y = pts[:, 1].tolist()
        self.apex = {}
        span = pts.max(axis=0) - pts.min(axis=0)
        self.dup2 = (1e-12 * float(max(span.max(), 1e-300))) ** 2
        self.last = None
        self.rng = random.Random(0)

    def orient(self, a, b, c):
        """Twice the signed area of (a, b, c), snapped to 0 when within round-off."""
        x, y = self.x, self.y
        l = (x[b] - x[a]) * (y[c] - y[a])
        r = (y[b] - y[a]) * (x[c] - x[a])
        d = l - r
        if abs(d) <= _ORIENT_EPS * (abs(l) + abs(r)):
            return 0.0
        return d

    def incircle(self, a, b, c, p):
        """True when ``p`` is strictly inside the circle of CCW triangle (a, b, c)."""
        if c == _GHOST:
            o = self.orient(a, b, p)
            if o > 0:
                return True
            if o < 0:
                return False
            x, y = self.x, self.y
            dot = (x[p] - x[a]) * (x[b] - x[p]) + (y[p] - y[a]) * (y[b] - y[p])
            return dot > 0
        if a == _GHOST:
            return self.incircle(b, c, a, p)
        if b == _GHOST:
            return self.incircle(c, a, b, p)
        x, y = self.x, self.y
        px, py = x[p], y[p]
        adx, ady = x[a] - px, y[a] - py
        bdx, bdy = x[b] - px, y[b] - py
        cdx, cdy = x[c] - px, y[c] - py
        al = adx * adx + ady * ady
        bl = bdx * bdx + bdy * bdy
        cl = cdx * cdx + cdy * cdy
        t1 = bdx * cdy - bdy * cdx
        t2 = cdx * ady - cdy * adx
        t3 = adx * bdy - ady * bdx
        det = al * t1 + bl * t2 + cl * t3
        perm = al * abs(t1) + bl * abs(t2) + cl * abs(t3)
        return det > _INCIRCLE_EPS * perm

    def add(self, a, b, c):
        ap = self.apex
        ap[(a, b)] = c
        ap[(b, c)] = a
        ap[(c, a)] = b
        if a != _GHOST and b != _GHOST and c != _GHOST:
            self.last = (a, b, c)

    def delete(self, a, b, c):
        ap = self.apex
        del ap[(a, b)]
        del ap[(b, c)]
        del ap[(c, a)]

    def start(self, i, j, k):
        if self.orient(i, j, k) < 0:
            j, k = k, j
        self.add(i, j, k)
        self.add(j, i, _GHOST)
        self.add(k, j, _GHOST)
        self.add(i, k, _GHOST)

    def locate(self, p):
        """A live triangle whose (generalised) circle contains ``p``."""
        a, b, c = self.last
        ap = self.apex
        x, y = self.x, self.y
        for _ in range(4 * len(ap) + 10):
            tri = (a, b, c)
            s = self.rng.randrange(3)
            moved = False
            for e in range(3):
                u = tri[(s + e) % 3]
                v = tri[(s + e + 1) % 3]
                if self.orient(u, v, p) < 0:
                    w = ap[(v, u)]
                    if w == _GHOST:
                        return v, u, w
                    a, b, c = v, u, w
                    moved = True
                    break
            if not moved:
                return a, b, c
        raise LeafSurfError("Delaunay point location did not terminate")

    def is_duplicate(self, tri, p):
        x, y = self.x, self.y
        for v in tri:
            if v != _GHOST:
                dx = x[v] - x[p]
                dy = y[v] - y[p]
                if dx * dx + dy * dy <= self.dup2:
                    return True
        return False

    def insert(self, p):
        tri = self.locate(p)
        if self.is_duplicate(tri, p):
            return False
        ap = self.apex
        self.delete(*tri)
        a, b, c = tri
        stack = [(a, b), (b, c), (c, a)]
        new = []
        while stack:
            u, v = stack.pop()
            key = (v, u)
            w = ap.get(key)
            if w is None:
                continue
            if self.incircle(v, u, w, p) or (
                    u != _GHOST and v != _GHOST and w != _GHOST
                    and self.orient(p, u, v) <= 0):
                self.delete(v, u, w)
                stack.append((u, w))
                stack.append((w, v))
            else:
                new.append((p, u, v))
        for t in new:
            self.add(*t)
        return True

    def triangles(self):
        seen = set()
        out = []
        for (a, b), c in self.apex.items():
            if a == _GHOST or b == _GHOST or c == _GHOST:
                continue
            m = min(a, b, c)
            t = (a, b, c) if a == m else ((b, c, a) if b == m else (c, a, b))
            if t not in seen:
                seen.add(t)
                out.append(t)
        out.sort()
        return np.array(out, dtype=np.int64).reshape(-1, 3)


def delaunay2d(points) -> Triangulation:
    """Bowyer-Watson Delaunay triangulation of planar sites.

    Insertion follows a snake order over horizontal strips so the
    point-location walk from the last new triangle stays short. Sites that
    coincide with an existing vertex are skipped and reported.
    """
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must have shape (N, 2)")
    n = pts.shape[0]
    if n < 3:
        raise DegenerateGeometryError("need at least 3 sites")
    order = _snake_order(pts).tolist()
    bw = _BowyerWatson(pts)
    i = order[0]
    j = next((q for q in order if (pts[q] != pts[i]).any()), None)
    if j is None:
        raise DegenerateGeometryError("all sites coincide")
    k = next((q for q in order if bw.orient(i, j, q) != 0), None)
    if k is None:
        raise DegenerateGeometryError("all sites are collinear")
    bw.start(i, j, k)
    skipped = []
    for p in order:
        if p in (i, j, k):
            continue
        if not bw.insert(p):
            skipped.append(p)
    if skipped:
        log.debug("delaunay2d skipped %d duplicate sites", len(skipped))
    return Triangulation(pts, bw.triangles(), np.array(sorted(skipped), dtype=np.int64))


def circumcircles(points, triangles):
    """Centres and radii of triangle circumcircles (inf for degenerate ones)."""
    p = np.asarray(points, float)[np.asarray(triangles)]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    bx, by = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    cx, cy = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1]
    d = 2.0 * (bx * cy - by * cx)
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    with np.errstate(divide="ignore", invalid="ignore"):
        ux = (cy * b2 - by * c2) / d
        uy = (bx * c2 - cx * b2) / d
    r = np.hypot(ux, uy)
    r[~np.isfinite(r)] = np.inf
    return np.column_stack([ux + a[:, 0], uy + a[:, 1]]), r


# ------------------------------------------------------------- alpha shapes

class _TriangleGrid:
    """Uniform bucket grid over triangle bounding boxes."""

    def __init__(self, points, triangles):
        tri = points[triangles]
        self.lo_t = tri.min(axis=1)
        self.hi_t = tri.max(axis=1)
        m = triangles.shape[0]
        if m == 0:
            self.origin = np.zeros(2)
            self.cell = 1.0
            self.shape = np.array([1, 1])
            self.start = np.zeros(2, np.int64)
            self.items = np.zeros(0, np.int64)
            return
        lo = self.lo_t.min(axis=0)
        hi = self.hi_t.max(axis=0)
        size = np.median(np.max(self.hi_t - self.lo_t, axis=1))
        span = np.maximum(hi - lo, 1e-300)
        cell = max(float(size), float(span.max()) / 2048.0, 1e-300)
        shape = np.floor(span / cell).astype(np.int64) + 1
        a = np.floor((self.lo_t - lo) / cell).astype(np.int64)
        b = np.floor((self.hi_t - lo) / cell).astype(np.int64)
        nx = b[:, 0] - a[:, 0] + 1
        ny = b[:, 1] - a[:, 1] + 1
        cnt = nx * ny
        tid = np.repeat(np.arange(m), cnt)
        local = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        cx = a[tid, 0] + local % nx[tid]
        cy = a[tid, 1] + local // nx[tid]
        flat = cx * shape[1] + cy
        order = np.argsort(flat, kind="stable")
        self.items = tid[order]
        self.start = np.searchsorted(flat[order], np.arange(shape[0] * shape[1] + 1))
        self.origin = lo
        self.cell = cell
        self.shape = shape


def in_triangles(p, tri_pts, eps: float = _INSIDE_EPS):
    """Boundary-inclusive point-in-triangle test, pairwise over rows.

    ``p`` is (M, 2) and ``tri_pts`` (M, 3, 2) with CCW vertices. A point
    counts as inside when every edge function is >= -eps times the
    triangle's doubled area.
    """
    a, b, c = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]

    def edge(u, v):
        return (v[:, 0] - u[:, 0]) * (p[:, 1] - u[:, 1]) - (v[:, 1] - u[:, 1]) * (p[:, 0] - u[:, 0])

    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    tol = -eps * np.abs(area2)
    return (edge(a, b) >= tol) & (edge(b, c) >= tol) & (edge(c, a) >= tol)


@dataclass(eq=False)
class AlphaShape2D:
    points: np.ndarray
    triangles: np.ndarray
    alpha: float
    radii: np.ndarray = None

    def __post_init__(self):
        self.points = np.asarray(self.points, float)
        self.triangles = np.asarray(self.triangles, np.int64).reshape(-1, 3)
        self._grid = _TriangleGrid(self.points, self.triangles)

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def contains(self, p):
        return point_in_shape(self, p)


def alpha_shape(points, alpha: float, triangulation: Triangulation | None = None) -> AlphaShape2D:
    """Delaunay triangles whose circumradius is at most ``alpha``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    tri = triangulation if triangulation is not None else delaunay2d(points)
    _, r = circumcircles(tri.points, tri.triangles)
    keep = r <= alpha
    return AlphaShape2D(tri.points, tri.triangles[keep], float(alpha), r[keep])


def default_alpha(points, factor: float = 3.0) -> float:
    """``factor`` times the median nearest-neighbour spacing."""
    from scipy.spatial import cKDTree
    pts = np.asarray(points, float)
    d, _ = cKDTree(pts).query(pts, k=2)
    return factor * float(np.median(d[:, 1]))


def point_in_shape(shape: AlphaShape2D, p, chunk: int = 200_000):
    """True where a point lies in some retained triangle (boundary inclusive)."""
    P = np.asarray(p, float)
    single = P.ndim == 1
    P = np.atleast_2d(P)
    out = np.zeros(P.shape[0], dtype=bool)
    g = shape._grid
    if shape.n_triangles == 0:
        return bool(out[0]) if single else out
    for s in range(0, P.shape[0], chunk):
        q = P[s:s + chunk]
        finite = np.all(np.isfinite(q), axis=1)
        c = np.floor((np.where(finite[:, None], q, g.origin) - g.origin) / g.cell).astype(np.int64)
        ok = np.all((c >= 0) & (c < g.shape), axis=1) & finite
        qi = np.nonzero(ok)[0]
        flat = c[qi, 0] * g.shape[1] + c[qi, 1]
        n = g.start[flat + 1] - g.start[flat]
        pid = np.repeat(qi, n)
        local = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
        tid = g.items[np.repeat(g.start[flat], n) + local]
        box = np.all((q[pid] >= g.lo_t[tid]) & (q[pid] <= g.hi_t[tid]), axis=1)
        pid, tid = pid[box], tid[box]
        hit = in_triangles(q[pid], shape.points[shape.triangles[tid]])
        res = np.zeros(q.shape[0], dtype=bool)
        res[pid[hit]] = True
        out[s:s + chunk] = res
    return bool(out[0]) if single else out


# ------------------------------------------------------ marching tetrahedra

@dataclass(frozen=True)
class LatticeGrid:
    """Points ``origin + h * (i, j, k)`` for ``0 <= (i, j, k) < shape``."""

    origin: np.ndarray
    h: float
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, float).reshape(3))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if len(self.shape) != 3 or min(self.shape) < 2:
            raise ValueError("grid needs at least 2 points along each axis")

    @classmethod
    def covering(cls, lo, hi, h):
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        n = np.maximum(np.ceil((hi - lo) / h - 1e-9).astype(int) + 1, 2)
        return cls(lo, h, tuple(n))

    def plane(self, k):
        nx, ny, _ = self.shape
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        return np.column_stack([
            self.origin[0] + self.h * i.ravel(),
            self.origin[1] + self.h * j.ravel(),
            np.full(nx * ny, self.origin[2] + self.h * k),
        ])


# Corner c of a cube sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
# Every tetrahedron shares the main diagonal 0-7 (Kuhn split).
_TETS = np.array([[0, 1, 3, 7], [0, 1, 5, 7], [0, 2, 3, 7],
                  [0, 2, 6, 7], [0, 4, 5, 7], [0, 4, 6, 7]])


def _case_table():
    table = {}
    for code in range(1, 15):
        pos = [v for v in range(4) if code >> v & 1]
        neg = [v for v in range(4) if not code >> v & 1]
        if len(pos) == 1 or len(neg) == 1:
            lone, rest = (pos[0], neg) if len(pos) == 1 else (neg[0], pos)
            tris = [[(lone, r) for r in rest]]
        else:
            p1, p2 = pos
            n1, n2 = neg
            tris = [[(p1, n1), (p1, n2), (p2, n2)], [(p1, n1), (p2, n2), (p2, n1)]]
        table[code] = np.array(tris, dtype=np.int64)
    return table


_CASES = _case_table()


def _perturbed(vals, iso):
    finite = vals[np.isfinite(vals)]
    rng = float(finite.max() - finite.min()) if finite.size else 0.0
    eps = 1e-12 * (rng if rng > 0 else max(abs(iso), 1.0))
    hit = vals == iso
    if hit.any():
        vals = vals.copy()
        vals[hit] = iso + eps
    return vals


def marching_tetrahedra(fn, grid: LatticeGrid, iso: float = 0.0, mask=None,
                        provenance: str = "implicit", timings: dict | None = None) -> TriangleMesh:
    """Iso-surface of ``fn`` over a lattice, six tetrahedra per cube.

    ``fn`` maps (M, 3) points to M values. ``mask``, if given, maps (M, 3)
    points to booleans; masked-out (False) points are never evaluated, and
    tetrahedra touching them produce no triangles. Values are computed one
    lattice plane at a time and only two planes are held. Triangles are
    oriented with normals pointing towards decreasing field values.
    Seconds spent masking, evaluating and polygonizing are added to
    ``timings`` when given.
    """
    t_mask, t_eval = "α-shape exclusion of exterior points", \
        "Evaluating implicit function at interior points"
    t_poly = "Polygonizing with marching tetrahedra"
    nx, ny, nz = grid.shape
    npl = nx * ny
    npts = npl * nz
    ii, jj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    base = (ii.ravel() * ny + jj.ravel()).astype(np.int64)
    corner_off = np.array([(c & 1) * ny + ((c >> 1) & 1) + ((c >> 2) & 1) * npl
                           for c in range(8)], dtype=np.int64)

    def coords(ids):
        k, rem = np.divmod(ids, npl)
        i, j = np.divmod(rem, ny)
        return grid.origin + grid.h * np.column_stack([i, j, k]).astype(float)

    def plane_values(k):
        pts = grid.plane(k)
        vals = np.full(npl, np.nan)
        with clock(timings, t_mask):
            keep = np.ones(npl, dtype=bool) if mask is None else np.asarray(mask(pts), bool)
        if keep.any():
            try:
                with clock(timings, t_eval):
                    vals[keep] = np.asarray(fn(pts[keep]), float)
            except LeafSurfError as exc:
                raise type(exc)(f"field evaluation failed on lattice plane k={k} "
                                f"(z={pts[0, 2]:.6g}): {exc}") from exc
            if not np.all(np.isfinite(vals[keep])):
                bad = pts[keep][~np.isfinite(vals[keep])][0]
                raise LeafSurfError(f"field is not finite at lattice point {bad}")
            vals[keep] = _perturbed(vals[keep], iso)
        return vals

    keys, pos, refs = [], [], []
    lower = plane_values(0)
    for k in range(nz - 1):
        upper = plane_values(k + 1)
        t0 = time.perf_counter()
        both = np.concatenate([lower, upper])
        cid = base[:, None] + corner_off[None, :]
        cval = both[cid]
        gid = cid + k * npl
        for tet in _TETS:
            v = cval[:, tet]
            ok = np.all(np.isfinite(v), axis=1)
            s = (v > iso).astype(np.int64)
            code = s[:, 0] | s[:, 1] << 1 | s[:, 2] << 2 | s[:, 3] << 3
            code[~ok] = 0
            for c in np.unique(code):
                if c == 0 or c == 15:
                    continue
                sel = np.nonzero(code == c)[0]
                tv = v[sel]
                tg = gid[sel][:, tet]
                spos = (tv > iso)
                for tri in _CASES[int(c)]:
                    a = tg[:, tri[:, 0]]
                    b = tg[:, tri[:, 1]]
                    va = tv[:, tri[:, 0]]
                    vb = tv[:, tri[:, 1]]
                    swap = a > b
                    a2 = np.where(swap, b, a)
                    b2 = np.where(swap, a, b)
                    va2 = np.where(swap, vb, va)
                    vb2 = np.where(swap, va, vb)
                    t = (iso - va2) / (vb2 - va2)
                    key = a2 * npts + b2
                    # snap crossings next to a lattice point onto it
                    lo_snap = t < _SNAP
                    hi_snap = t > 1.0 - _SNAP
                    key = np.where(lo_snap, a2 * npts + a2, key)
                    key = np.where(hi_snap, b2 * npts + b2, key)
                    t = np.where(lo_snap, 0.0, np.where(hi_snap, 1.0, t))
                    pa = coords(a2.ravel()).reshape(-1, 3, 3)
                    pb = coords(b2.ravel()).reshape(-1, 3, 3)
                    p = pa + t[:, :, None] * (pb - pa)
                    keys.append(key.ravel())
                    pos.append(p.reshape(-1, 3))
                    cpts = coords(tg.ravel()).reshape(-1, 4, 3)
                    npos = spos.sum(axis=1, keepdims=True)
                    cpos = (cpts * spos[:, :, None]).sum(axis=1) / npos
                    cneg = (cpts * ~spos[:, :, None]).sum(axis=1) / (4 - npos)
                    refs.append(cneg - cpos)
        lower = upper
        if timings is not None:
            timings[t_poly] = timings.get(t_poly, 0.0) + time.perf_counter() - t0
    if not keys:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64), provenance)
    with clock(timings, t_poly):
        return _assemble(keys, pos, refs, provenance)


def _assemble(keys, pos, refs, provenance):
    keys = np.concatenate(keys)
    pos = np.concatenate(pos)
    ref = np.concatenate(refs)
    uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    verts = pos[first]
    tris = inv.reshape(-1, 3).astype(np.int64)
    tp = verts[tris]
    nrm = np.cross(tp[:, 1] - tp[:, 0], tp[:, 2] - tp[:, 0])
    flip = np.sum(nrm * ref, axis=1) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return _clean(TriangleMesh(verts, tris, provenance))


def _clean(mesh: TriangleMesh) -> TriangleMesh:
    """Drop collapsed and near-zero-area triangles and unused vertices."""
    t = mesh.triangles
    if t.shape[0] == 0:
        return mesh
    v = mesh.vertices
    good = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
    t = t[good]
    if t.shape[0] == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64), mesh.provenance)
    p = v[t]
    area = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    t = t[area > 1e-12 * area.mean()]
    used, inv = np.unique(t, return_inverse=True)
    return TriangleMesh(v[used], inv.reshape(-1, 3), mesh.provenance)


# ------------------------------------------------------- height-map mesh

def sample_heightmap_mesh(heightmap, frame: LeafFrame, h: float,
                          timings: dict | None = None) -> TriangleMesh:
    """Regular (y1, y2) grid on the height map, clipped and mapped to world.

    A grid quad contributes two triangles only when all four corners lie in
    the height map's clipping shape and in the frame's parameter range.
    """
    if not h > 0:
        raise ValueError("grid spacing must be positive")
    lo, hi = (np.asarray(v, float) for v in heightmap.domain)
    if np.any(hi <= lo):
        raise ValueError("height-map domain is empty")
    n = np.floor((hi - lo) / h + 1e-9).astype(int) + 1
    g1 = lo[0] + h * np.arange(n[0])
    g2 = lo[1] + h * np.arange(n[1])
    Y1, Y2 = np.meshgrid(g1, g2, indexing="ij")
    y = np.column_stack([Y1.ravel(), Y2.ravel()])
    with clock(timings, "α-shape exclusion of exterior points"):
        keep = heightmap.contains(y) & (y[:, 0] >= 0) & (y[:, 0] <= frame.length)
    K = keep.reshape(n[0], n[1])
    quad = K[:-1, :-1] & K[1:, :-1] & K[1:, 1:] & K[:-1, 1:]
    qi, qj = np.nonzero(quad)
    idx = np.full(y.shape[0], -1, np.int64)
    idx[keep] = np.arange(int(keep.sum()))
    v00 = idx[qi * n[1] + qj]
    v10 = idx[(qi + 1) * n[1] + qj]
    v11 = idx[(qi + 1) * n[1] + qj + 1]
    v01 = idx[qi * n[1] + qj + 1]
    # (y1, y2, y3) -> world reverses orientation; this order gives normals along +V
    tris = np.concatenate([np.column_stack([v00, v11, v10]),
                           np.column_stack([v00, v01, v11])])
    yk = y[keep]
    with clock(timings, "Sample height map"):
        H = heightmap(yk) if yk.shape[0] else np.zeros(0)
    with clock(timings, "Transform triangles back to world coords"):
        verts = leaf_to_world(frame, np.column_stack([yk, H])) if yk.shape[0] else np.zeros((0, 3))
    mesh = TriangleMesh(verts, tris, "heightmap")
    return _clean(mesh) if tris.shape[0] else mesh


def _vertex_heights(hm, grid: LatticeGrid, Z, tol: float = 1e-4, n_check: int = 2000):
    """H at mesh vertices via a bicubic fit to H on the lattice columns.

    Vertices lie on lattice edges and the height map is smooth on the
    lattice scale, so this is far cheaper than evaluating H per vertex.
    A spread of vertices is checked against direct evaluation; if any is
    off by more than ``tol * h`` every vertex is evaluated directly.
    """
    Z = np.asarray(Z, float)
    h = grid.h
    i0 = np.maximum(np.floor((Z[:, :2].min(axis=0) - grid.origin[:2]) / h).astype(int) - 1, 0)
    i1 = np.minimum(np.ceil((Z[:, :2].max(axis=0) - grid.origin[:2]) / h).astype(int) + 2,
                    np.asarray(grid.shape[:2]))
    n = i1 - i0
    if np.any(n < 4) or n[0] * n[1] * 2 > len(Z):
        return hm(Z[:, :2])
    gx = grid.origin[0] + h * np.arange(i0[0], i1[0])
    gy = grid.origin[1] + h * np.arange(i0[1], i1[1])
    GX, GY = np.meshgrid(gx, gy, indexing="ij")
    try:
        H = hm(np.column_stack([GX.ravel(), GY.ravel()])).reshape(GX.shape)
    except LeafSurfError:
        return hm(Z[:, :2])
    vals = RectBivariateSpline(gx, gy, H, kx=3, ky=3).ev(Z[:, 0], Z[:, 1])
    idx = np.unique(np.linspace(0, len(Z) - 1, min(n_check, len(Z))).astype(int))
    if np.max(np.abs(vals[idx] - hm(Z[idx, :2]))) > tol * h:
        log.info("height interpolation check failed; evaluating H at every vertex")
        return hm(Z[:, :2])
    return vals


def extract_implicit_mesh(G, lo, hi, h: float, iso: float = 0.0,
                          timings: dict | None = None) -> TriangleMesh:
    """Marching tetrahedra on G over the flattened box ``[lo, hi]``.

    The lattice lives in flattened coordinates ``z = T*(x)``, where the
    micro geometry is axis aligned; points outside the height map's
    clipping shape are masked. Vertices are mapped back to world space.
    """
    grid = LatticeGrid.covering(lo, hi, h)
    hm = G.heightmap
    tk = G.frame.length

    def mask(z):
        return hm.contains(z[:, :2]) & (z[:, 0] >= 0) & (z[:, 0] <= tk)

    mesh = marching_tetrahedra(G.eval_z, grid, iso, mask, timings=timings)
    if mesh.n_vertices == 0:
        return mesh
    with clock(timings, "Transform triangles back to world coords"):
        y = mesh.vertices.copy()
        y[:, 2] += _vertex_heights(hm, grid, mesh.vertices)
        verts = leaf_to_world(G.frame, y)
    # the flattened-to-world map has negative Jacobian determinant
    return TriangleMesh(verts, mesh.triangles[:, [0, 2, 1]], "implicit")
