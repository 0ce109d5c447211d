"""Synthetic leaf with known geometry, for verification.

Units are millimetres. The macro surface is a ribbon swept along a
circular arc (curvature ``curvature``) whose cross-section rotates
linearly with arc length (total rotation ``twist``). The micro patch is a
slab whose lower face is flat and whose upper face carries sinusoidal
ridges running along the leaf, with vertical capsule-shaped hairs. The
patch repeats periodically over leaf coordinates with tiles centred on
the lattice ``y1, y2 = q * patch_width``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError
from .reconstruction import VoxelVolume


@dataclass(frozen=True)
class SyntheticParams:
    length: float = 80.0
    width: float = 10.0
    curvature: float = 0.01
    twist: float = 0.5
    taper_start: float = 0.7
    tip_width: float = 0.15
    n_cloud: int = 200_000
    noise: float = 0.1
    n_control: int = 17
    patch: float = 2.0
    voxel: float = 0.003
    thickness: float = 0.15
    ridge_amplitude: float = 0.03
    ridge_period: float = 0.15
    hair_count: int = 20
    hair_height: float = 0.1
    hair_radius: float = 0.008
    hair_margin: float = 0.15
    air_margin: float = 0.02
    air_intensity: float = 0.05
    leaf_intensity: float = 0.95
    seed: int = 0

    def validate(self):
        positive = ["length", "width", "patch", "voxel", "thickness", "ridge_period",
                    "hair_radius", "n_control"]
        for k in positive:
            if not getattr(self, k) > 0:
                raise ConfigError(f"synthetic parameter {k} must be positive")
        nonneg = ["curvature", "n_cloud", "noise", "ridge_amplitude", "hair_count",
                  "hair_height", "hair_margin", "air_margin"]
        for k in nonneg:
            if getattr(self, k) < 0:
                raise ConfigError(f"synthetic parameter {k} must be nonnegative")
        if self.curvature * self.length >= math.pi:
            raise ConfigError("curvature too large: the medial arc must turn less than 180 degrees")
        if not 0 < self.taper_start <= 1 or not 0 < self.tip_width <= 1:
            raise ConfigError("taper_start and tip_width are fractions in (0, 1]")
        if self.n_control < 3:
            raise ConfigError("need at least 3 control points")
        if self.hair_count and 2 * self.hair_margin >= self.patch:
            raise ConfigError("hair_margin leaves no room for hairs")
        if not 1 >= self.leaf_intensity > self.air_intensity >= 0:
            raise ConfigError("intensities must satisfy 0 <= air < leaf <= 1")
        return self

    @property
    def f_surface(self) -> float:
        return 0.5 * (self.air_intensity + self.leaf_intensity)


def _wrap(v, w):
    return v - w * np.floor(v / w + 0.5)


class MicroGeometry:
    """Patch geometry in patch coordinates centred on the origin.

    The upper face is ``u3 = thickness/2 + a cos(2 pi u2 / period)``; the
    period is adjusted so a whole number of ridges spans the patch, and the
    even phase keeps the ridges from shifting or tilting the solid's
    principal axes.
    """

    def __init__(self, width, thickness, amplitude, period, hairs, hair_radius, hair_top):
        self.width = float(width)
        self.thickness = float(thickness)
        self.amplitude = float(amplitude)
        self.period = float(period)
        self.k = 2 * math.pi / self.period
        self.hairs = np.asarray(hairs, float).reshape(-1, 2)
        self.hair_radius = float(hair_radius)
        self.hair_top = np.asarray(hair_top, float).reshape(-1)

    def top(self, u2):
        return 0.5 * self.thickness + self.amplitude * np.cos(self.k * np.asarray(u2))

    def _top_distance(self, u2, u3):
        """Euclidean distance from (u2, u3) to the ridged curve in that plane."""
        u2 = np.asarray(u2, float)
        u3 = np.asarray(u3, float)
        if self.amplitude == 0:
            return np.abs(u3 - 0.5 * self.thickness)
        a, k, h = self.amplitude, self.k, 0.5 * self.thickness
        offs = np.linspace(-0.5, 0.5, 33) * self.period
        s = u2[..., None] + offs
        d2 = (s - u2[..., None]) ** 2 + (h + a * np.cos(k * s) - u3[..., None]) ** 2
        best = np.take_along_axis(s, np.argmin(d2, axis=-1)[..., None], -1)[..., 0]
        step = offs[1] - offs[0]
        lo, hi = best - step, best + step
        # golden-section refinement; the distance is unimodal in the bracket
        g = 0.5 * (math.sqrt(5) - 1)
        c = hi - g * (hi - lo)
        d = lo + g * (hi - lo)

        def f(t):
            return (t - u2) ** 2 + (h + a * np.cos(k * t) - u3) ** 2

        fc, fd = f(c), f(d)
        for _ in range(40):
            left = fc < fd
            hi = np.where(left, d, hi)
            lo = np.where(left, lo, c)
            c2 = hi - g * (hi - lo)
            d2_ = lo + g * (hi - lo)
            fc2, fd2 = f(c2), f(d2_)
            c, d = c2, d2_
            fc, fd = fc2, fd2
        t = 0.5 * (lo + hi)
        return np.sqrt(f(t))

    def slab_sdf(self, u2, u3):
        """Signed distance to the slab (negative inside)."""
        u2 = np.asarray(u2, float)
        u3 = np.asarray(u3, float)
        top = self.top(u2)
        db = u3 + 0.5 * self.thickness
        dt = self._top_distance(u2, u3)
        inside = (db > 0) & (u3 < top)
        out = np.where(db <= 0, -db, dt)
        out = np.where(inside, -np.minimum(db, dt), out)
        # below the bottom face but the ridge trough could be closer: never,
        # the slab is thicker than twice the amplitude, so no correction
        return out

    def hair_segments(self):
        base = np.column_stack([self.hairs, np.full(len(self.hairs), -0.25 * self.thickness)])
        tip = np.column_stack([self.hairs, self.hair_top])
        return base, tip

    def hair_sdf(self, u):
        """Signed distance to the union of hairs (inf when there are none)."""
        u = np.atleast_2d(np.asarray(u, float))
        out = np.full(u.shape[0], np.inf)
        base, tip = self.hair_segments()
        for b, t in zip(base, tip):
            ab = t - b
            s = np.clip(((u - b) @ ab) / (ab @ ab), 0.0, 1.0)
            d = np.linalg.norm(u - (b + s[:, None] * ab), axis=1) - self.hair_radius
            out = np.minimum(out, d)
        return out

    def centroid(self, step: float | None = None) -> np.ndarray:
        """Centre of mass of the solid in patch coordinates.

        The ridged slab contributes ``(0, 0, a^2 / 4T)`` exactly; the parts
        of the hairs outside the slab are integrated on a local grid of
        spacing ``step`` (default r/8).
        """
        T, a, w = self.thickness, self.amplitude, self.width
        vol = T * w * w
        mom = np.array([0.0, 0.0, vol * a * a / (4 * T)])
        if len(self.hairs):
            r = self.hair_radius
            h = step or r / 8
            base, tip = self.hair_segments()
            for b, t in zip(base, tip):
                g = np.arange(-r, r + h / 2, h)
                zs = np.arange(0.5 * T - a, t[2] + r + h / 2, h)
                X, Y, Z = np.meshgrid(b[0] + g, b[1] + g, zs, indexing="ij")
                u = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
                ab = t - b
                sc = np.clip(((u - b) @ ab) / (ab @ ab), 0.0, 1.0)
                inside = np.linalg.norm(u - (b + sc[:, None] * ab), axis=1) < r
                inside &= u[:, 2] > self.top(u[:, 1])
                dv = h ** 3
                vol += inside.sum() * dv
                mom += u[inside].sum(axis=0) * dv
        return mom / vol

    def sdf(self, u):
        """Signed distance of patch point(s) to the patch surface; hairs are
        not wrapped, the slab is periodic by construction."""
        u = np.atleast_2d(np.asarray(u, float))
        s = self.slab_sdf(u[:, 1], u[:, 2])
        if len(self.hairs):
            s = np.minimum(s, self.hair_sdf(u))
        return s

    def tiled_sdf(self, y):
        """Signed distance for leaf-plane coordinates, tiles on ``q * width``."""
        y = np.atleast_2d(np.asarray(y, float))
        u = y.copy()
        u[:, 0] = _wrap(y[:, 0], self.width)
        u[:, 1] = _wrap(y[:, 1], self.width)
        s = self.slab_sdf(y[:, 1], y[:, 2])
        if len(self.hairs):
            s = np.minimum(s, self.hair_sdf(u))
        return s


class SyntheticTruth:
    """Analytic medial arc, leaf frame and multiscale surface."""

    def __init__(self, params: SyntheticParams, micro: MicroGeometry):
        self.params = params
        self.micro = micro
        self.kappa = params.curvature
        self.omega = params.twist / params.length
        # the patch is placed with its centre of mass on the mid-surface
        self.patch_offset = micro.centroid()

    def medial(self, t):
        t = np.asarray(t, float)
        k = self.kappa
        if k == 0:
            return np.stack([t, np.zeros_like(t), np.zeros_like(t)], axis=-1)
        return np.stack([np.sin(k * t) / k, np.zeros_like(t), (1 - np.cos(k * t)) / k], axis=-1)

    def axes(self, t):
        """Tangent, height axis V and lateral axis W = T x V."""
        t = np.asarray(t, float)
        k = self.kappa
        c, s = np.cos(k * t), np.sin(k * t)
        z = np.zeros_like(t)
        T = np.stack([c, z, s], axis=-1)
        N0 = np.stack([-s, z, c], axis=-1)
        B0 = np.stack([z, -np.ones_like(t), z], axis=-1)
        psi = (self.omega * t)[..., None]
        V = np.cos(psi) * N0 + np.sin(psi) * B0
        W = np.cos(psi) * B0 - np.sin(psi) * N0
        return T, V, W

    def half_width(self, t):
        p = self.params
        t = np.asarray(t, float)
        frac = np.clip((t / p.length - p.taper_start) / max(1 - p.taper_start, 1e-12), 0, 1)
        return 0.5 * p.width * (1 - (1 - p.tip_width) * frac)

    def leaf_to_world(self, y):
        y = np.atleast_2d(np.asarray(y, float))
        _, V, W = self.axes(y[:, 0])
        return self.medial(y[:, 0]) + y[:, 1:2] * W + y[:, 2:3] * V

    def world_to_leaf(self, x):
        """Closest-point leaf coordinates (unclamped arc parameter)."""
        x = np.atleast_2d(np.asarray(x, float))
        k = self.kappa
        if k == 0:
            t = x[:, 0].copy()
        else:
            r = 1.0 / k
            t = r * np.arctan2(x[:, 0], r - x[:, 2])
        d = x - self.medial(t)
        _, V, W = self.axes(t)
        return np.column_stack([t, np.sum(d * W, axis=1), np.sum(d * V, axis=1)])

    def macro_distance(self, x):
        """Distance bound to the macro (mid) surface of the bounded leaf.

        Combines the height off the mid-surface with any lateral or
        longitudinal overshoot beyond the leaf outline.
        """
        y = self.world_to_leaf(x)
        L = self.params.length
        lat = np.maximum(np.abs(y[:, 1]) - self.half_width(np.clip(y[:, 0], 0, L)), 0)
        lon = np.maximum(np.maximum(-y[:, 0], y[:, 0] - L), 0)
        return np.sqrt(y[:, 2] ** 2 + lat ** 2 + lon ** 2)

    def sdf(self, x):
        """Signed distance to the multiscale surface, evaluated in leaf
        coordinates (metric distortion from curvature and twist is below
        1e-3 relative within the fixture's micro region)."""
        return self.micro.tiled_sdf(self.world_to_leaf(x) + self.patch_offset)


@dataclass(eq=False)
class SyntheticLeaf:
    cloud: np.ndarray
    volume: VoxelVolume
    truth: SyntheticTruth
    control_points: np.ndarray
    params: SyntheticParams


def _place_hairs(rng, p: SyntheticParams, width):
    lo = -0.5 * width + p.hair_margin
    hi = 0.5 * width - p.hair_margin
    pts = []
    tries = 0
    while len(pts) < p.hair_count:
        tries += 1
        if tries > 10000 * max(p.hair_count, 1):
            raise ConfigError("cannot place hairs without overlap; reduce hair_count")
        c = rng.uniform(lo, hi, 2)
        if all(np.hypot(*(c - q)) > 6 * p.hair_radius for q in pts):
            pts.append(c)
    return np.array(pts).reshape(-1, 2)


def micro_geometry(p: SyntheticParams, rng) -> MicroGeometry:
    n = int(round(p.patch / p.voxel))
    width = n * p.voxel
    ridges = max(1, int(round(width / p.ridge_period)))
    period = width / ridges
    hairs = _place_hairs(rng, p, width)
    amp = p.ridge_amplitude
    top = 0.5 * p.thickness + amp * np.cos(2 * np.pi * hairs[:, 1] / period) + p.hair_height
    return MicroGeometry(width, p.thickness, amp, period, hairs, p.hair_radius, top)


def micro_volume(p: SyntheticParams, geom: MicroGeometry) -> VoxelVolume:
    """Blurred indicator of the patch: ``Phi(-sdf / voxel)`` between the
    air and leaf intensities (the level 0.5 follows the true surface)."""
    dz = p.voxel
    n = int(round(geom.width / dz))
    zlo = -0.5 * p.thickness - p.air_margin
    ztop = 0.5 * p.thickness + geom.amplitude + (p.hair_height if len(geom.hairs) else 0.0)
    zhi = ztop + p.air_margin
    nz = int(math.ceil((zhi - zlo) / dz)) + 1
    c = -0.5 * geom.width + dz * (np.arange(n) + 0.5)
    z = zlo + dz * np.arange(nz)
    U2, U3 = np.meshgrid(c, z, indexing="ij")
    slab = geom.slab_sdf(U2, U3)
    reach = p.hair_radius + 10 * p.voxel
    base, tip = geom.hair_segments()
    boxes = []
    for b, t in zip(base, tip):
        i0, i1 = np.searchsorted(c, [b[0] - reach, b[0] + reach])
        j0, j1 = np.searchsorted(c, [b[1] - reach, b[1] + reach])
        I, J = np.meshgrid(c[i0:i1], c[j0:j1], indexing="ij")
        boxes.append((i0, i1, j0, j1, np.column_stack([I.ravel(), J.ravel()]), b, t))
    f = np.empty((n, n, nz), np.float32)
    scale = p.leaf_intensity - p.air_intensity
    for k in range(nz):
        sl = np.broadcast_to(slab[None, :, k], (n, n)).copy()
        for i0, i1, j0, j1, uv, b, t in boxes:
            u = np.column_stack([uv, np.full(uv.shape[0], z[k])])
            ab = t - b
            sc = np.clip(((u - b) @ ab) / (ab @ ab), 0.0, 1.0)
            d = np.linalg.norm(u - (b + sc[:, None] * ab), axis=1) - geom.hair_radius
            blk = sl[i0:i1, j0:j1]
            np.minimum(blk, d.reshape(blk.shape), out=blk)
        f[:, :, k] = p.air_intensity + scale * ndtr(-sl / p.voxel)
    origin = np.array([c[0], c[0], zlo])
    return VoxelVolume(f, np.full(3, dz), origin)


def generate_synthetic_leaf(params: SyntheticParams | None = None, seed=None) -> SyntheticLeaf:
    """Point cloud, CT volume, ground truth and control points; deterministic per seed."""
    p = (params or SyntheticParams()).validate()
    if seed is not None:
        p = replace(p, seed=int(seed))
    rng = np.random.default_rng(p.seed)
    geom = micro_geometry(p, rng)
    truth = SyntheticTruth(p, geom)
    # macro cloud: area-uniform samples of the mid-surface plus isotropic noise
    n = p.n_cloud
    t = np.empty(0)
    s = np.empty(0)
    while t.size < n:
        tt = rng.uniform(0, p.length, 2 * n)
        ss = rng.uniform(-0.5 * p.width, 0.5 * p.width, 2 * n)
        ok = np.abs(ss) <= truth.half_width(tt)
        t = np.concatenate([t, tt[ok]])
        s = np.concatenate([s, ss[ok]])
    t, s = t[:n], s[:n]
    cloud = truth.leaf_to_world(np.column_stack([t, s, np.zeros(n)]))
    cloud = cloud + rng.normal(scale=p.noise, size=cloud.shape) if p.noise > 0 else cloud
    tc = np.linspace(0, p.length, p.n_control)
    ctrl = truth.medial(tc)
    volume = micro_volume(p, geom)
    return SyntheticLeaf(cloud, volume, truth, ctrl, p)


def params_dict(p: SyntheticParams) -> dict:
    return asdict(p)


def mesh_samples(mesh) -> np.ndarray:
    """Vertices and triangle centroids of a mesh."""
    if mesh.n_triangles == 0:
        return mesh.vertices.copy()
    return np.vstack([mesh.vertices, mesh.vertices[mesh.triangles].mean(axis=1)])


def distance_to_truth(mesh, truth: SyntheticTruth, scale: str = "micro", chunk: int = 50_000):
    """Unsigned distances from mesh samples to the analytic surface.

    ``scale='micro'`` measures against the tiled micro geometry on the
    mid-surface, ``'macro'`` against the bounded mid-surface alone. The
    maximum is the one-sided Hausdorff distance of the sampled mesh.
    """
    if scale not in ("micro", "macro"):
        raise ValueError("scale must be 'micro' or 'macro'")
    pts = mesh_samples(mesh)
    fn = truth.sdf if scale == "micro" else truth.macro_distance
    out = np.empty(pts.shape[0])
    for s in range(0, pts.shape[0], chunk):
        out[s:s + chunk] = np.abs(fn(pts[s:s + chunk]))
    return out
