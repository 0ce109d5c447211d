"""Partition of unity: octree subdomains, Wendland/Shepard blending."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import DegenerateGeometryError, OutsideDomainError
from .rbf import Kernel, LocalRBF, fit_local

log = logging.getLogger(__name__)

DEFAULT_CAPACITY = 800
DEFAULT_OVERLAP = 1.25
RADIUS_GROWTH = 1.2
_MAX_DEPTH = 40


def wendland(tau):
    """Wendland C2 weight ``(1 - tau)^4 (4 tau + 1)`` on [0, 1], zero beyond."""
    t = np.asarray(tau, float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("tau must be nonnegative")
    u = np.clip(1.0 - t, 0.0, None)
    w = u ** 4 * (4.0 * t + 1.0)
    return float(w) if w.ndim == 0 else w


@dataclass(frozen=True)
class SubdomainSpec:
    center: np.ndarray
    radius: float
    members: np.ndarray


@dataclass(frozen=True)
class Subdomain:
    center: np.ndarray
    radius: float
    local: LocalRBF


def _octree_leaves(points, capacity):
    """Leaf boxes (centre, half side) of an octree over the bounding cube."""
    d = points.shape[1]
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    half = 0.5 * float((hi - lo).max())
    if half <= 0:
        raise DegenerateGeometryError("all points are identical")
    half *= 1.0 + 1e-9
    root = 0.5 * (lo + hi)
    leaves = []
    stack = [(root, half, np.arange(points.shape[0]), 0)]
    signs = np.array([[(k >> b) & 1 for b in range(d)] for k in range(2 ** d)]) * 2 - 1
    while stack:
        c, h, idx, depth = stack.pop()
        if idx.size <= capacity or depth >= _MAX_DEPTH:
            leaves.append((c, h, idx))
            continue
        upper = points[idx] >= c
        code = (upper.astype(np.int64) << np.arange(d)).sum(axis=1)
        children = []
        for k in range(2 ** d):
            sub = idx[code == k]
            if sub.size:
                children.append((c + signs[k] * 0.5 * h, 0.5 * h, sub, depth + 1))
        # reversed so leaves come out in child order
        stack.extend(reversed(children))
    return leaves


def _full_rank(x):
    d = x.shape[1]
    if x.shape[0] < d + 2:
        return False
    c = x - x.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return s[-1] > 1e-9 * max(s[0], 1e-300)


def build_subdomains(points, capacity: int = DEFAULT_CAPACITY,
                     overlap: float = DEFAULT_OVERLAP):
    """Octree (quadtree in 2-D) subdomains covering ``points``.

    Each nonempty leaf gives a sphere centred on the leaf box with radius
    ``overlap`` times the half diagonal; radii grow by 1.2 until the member
    set has at least d+2 points spanning all d dimensions.
    """
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a nonempty (N, d) array")
    d = pts.shape[1]
    if capacity < 2 * (d + 1):
        raise ValueError(f"capacity must be at least {2 * (d + 1)}")
    if overlap <= 1:
        raise ValueError("overlap must exceed 1")
    tree = cKDTree(pts)
    out = []
    for c, h, _ in _octree_leaves(pts, capacity):
        r = overlap * h * np.sqrt(d)
        members = np.sort(np.asarray(tree.query_ball_point(c, r), dtype=np.int64))
        grown = 0
        while not _full_rank(pts[members]):
            if members.size == pts.shape[0]:
                raise DegenerateGeometryError(
                    "point set cannot support a linear tail in any subdomain"
                )
            r *= RADIUS_GROWTH
            grown += 1
            members = np.sort(np.asarray(tree.query_ball_point(c, r), dtype=np.int64))
        if grown:
            log.debug("grew subdomain at %s %d times", c, grown)
        out.append(SubdomainSpec(np.asarray(c, float), float(r), members))
    return out


class SphereIndex:
    """Uniform grid over sphere bounding boxes (CSR cell -> sphere ids)."""

    def __init__(self, centers, radii, max_cells: int = 2_000_000):
        centers = np.asarray(centers, float)
        radii = np.asarray(radii, float)
        d = centers.shape[1]
        lo = (centers - radii[:, None]).min(axis=0)
        hi = (centers + radii[:, None]).max(axis=0)
        h = float(np.median(radii))
        span = hi - lo
        while np.prod(np.ceil(span / h) + 1) > max_cells:
            h *= 1.5
        shape = (np.floor(span / h).astype(np.int64) + 1)
        self.origin = lo
        self.cell = h
        self.shape = shape
        lists = [[] for _ in range(int(np.prod(shape)))]
        for i, (c, r) in enumerate(zip(centers, radii)):
            a = np.clip(np.floor((c - r - lo) / h).astype(np.int64), 0, shape - 1)
            b = np.clip(np.floor((c + r - lo) / h).astype(np.int64), 0, shape - 1)
            ranges = [np.arange(a[k], b[k] + 1) for k in range(d)]
            mesh = np.meshgrid(*ranges, indexing="ij")
            flat = np.ravel_multi_index([m.ravel() for m in mesh], shape)
            for f in flat:
                lists[f].append(i)
        counts = np.array([len(v) for v in lists], dtype=np.int64)
        self.start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.items = (np.concatenate([np.asarray(v, dtype=np.int64) for v in lists])
                      if counts.sum() else np.zeros(0, dtype=np.int64))
        self.bounds = (lo, hi)


class PUField:
    """Blended field ``sum_i w_i(x) F_i(x)`` with Shepard-normalised weights."""

    def __init__(self, subdomains, dim: int):
        if not subdomains:
            raise ValueError("PUField needs at least one subdomain")
        self.subdomains = list(subdomains)
        self.dim = dim
        self.kernel = self.subdomains[0].local.kernel
        self._pack()

    def _pack(self):
        subs = self.subdomains
        self.centers = np.array([s.center for s in subs], float)
        self.radii = np.array([s.radius for s in subs], float)
        counts = np.array([s.local.n_centers for s in subs], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self._cx = np.ascontiguousarray(
            np.hstack([(s.local.centers - s.center).T for s in subs]))
        self._lam = np.concatenate([s.local.lam for s in subs])
        # packed tails act on x - centre; shift any local built around another origin
        tails = []
        for s in subs:
            a = np.array(s.local.a, float)
            a[0] += a[1:] @ (np.asarray(s.center) - s.local.origin)
            tails.append(a)
        self._tail = np.array(tails)
        self.index = SphereIndex(self.centers, self.radii)

    @property
    def n_subdomains(self) -> int:
        return len(self.subdomains)

    @property
    def bounds(self):
        """Bounding box of the union of subdomain spheres."""
        return self.index.bounds

    def _raw(self, q, want_value=True):
        ix = self.index
        return _kernels.pu_eval(
            q, self.dim, self._cx, self._lam, self.offsets, self._tail,
            self.centers, self.radii, ix.origin, ix.cell, ix.shape,
            ix.start, ix.items, want_value,
        )

    def _as_queries(self, x):
        q = np.asarray(x, float)
        single = q.ndim == 1
        q = np.ascontiguousarray(np.atleast_2d(q))
        if q.shape[1] != self.dim:
            raise ValueError(f"query points must have dimension {self.dim}")
        return q, single

    def weight_sums(self, x):
        """Unnormalised weight sum at each point (0 means uncovered)."""
        q, single = self._as_queries(x)
        _, den = self._raw(q, want_value=False)
        return float(den[0]) if single else den

    def covered(self, x):
        return np.asarray(self.weight_sums(x)) > 0

    def weights(self, x):
        """Active subdomain ids and their normalised weights at one point."""
        p = np.asarray(x, float)
        dist = np.linalg.norm(self.centers - p, axis=1)
        tau = dist / self.radii
        ids = np.nonzero(tau < 1.0)[0]
        if ids.size == 0:
            raise OutsideDomainError(f"point {p} lies outside every subdomain")
        w = wendland(tau[ids])
        return ids, w / w.sum()

    def evaluate(self, x, outside: str = "raise"):
        """Blended value; ``outside='nan'`` marks uncovered points with NaN."""
        q, single = self._as_queries(x)
        num, den = self._raw(q)
        bad = den <= 0
        if bad.any():
            if outside == "raise":
                first = q[np.argmax(bad)]
                raise OutsideDomainError(
                    f"{int(bad.sum())} query point(s) outside the domain, e.g. {first}"
                )
            vals = np.full(q.shape[0], np.nan)
            ok = ~bad
            vals[ok] = num[ok] / den[ok]
        else:
            vals = num / den
        return float(vals[0]) if single else vals

    __call__ = evaluate

    def max_kkt_residual(self) -> float:
        return max(s.local.kkt_residual for s in self.subdomains)


def fit_pu(points, values, rho: float, kernel: Kernel,
           capacity: int = DEFAULT_CAPACITY, overlap: float = DEFAULT_OVERLAP,
           workers: int = 1) -> PUField:
    """Fit one local RBF per octree subdomain and blend them."""
    pts = np.asarray(points, float)
    vals = np.asarray(values, float).ravel()
    if pts.shape[0] != vals.shape[0]:
        raise ValueError("points and values differ in length")
    if pts.shape[1] != kernel.dim:
        raise ValueError("kernel dimension does not match the points")
    specs = build_subdomains(pts, capacity, overlap)

    def fit_one(item):
        k, spec = item
        try:
            local = fit_local(pts[spec.members], vals[spec.members], rho, kernel,
                              origin=spec.center)
        except DegenerateGeometryError as exc:
            raise DegenerateGeometryError(
                f"subdomain {k} (centre {spec.center}, radius {spec.radius:.4g}): {exc}"
            ) from exc
        return Subdomain(spec.center, spec.radius, local)

    if workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            subs = list(pool.map(fit_one, enumerate(specs)))
    else:
        subs = [fit_one(item) for item in enumerate(specs)]
    log.debug("fitted %d subdomains to %d points", len(subs), pts.shape[0])
    return PUField(subs, kernel.dim)


def eval_pu(field: PUField, x):
    return field.evaluate(x)
