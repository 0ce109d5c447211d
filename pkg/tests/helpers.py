"""Shared fixtures with closed-form ground truth."""

import numpy as np

from leafsurf.frame import build_frame


class Helix:
    """Circular helix ``(a cos(s/c), a sin(s/c), b s/c)`` in arc length ``s``."""

    def __init__(self, a=10.0, b=3.0, length=40.0):
        self.a, self.b, self.length = a, b, length
        self.c = np.hypot(a, b)

    def point(self, s):
        s = np.asarray(s, float)
        u = s / self.c
        return np.stack([self.a * np.cos(u), self.a * np.sin(u), self.b * u], axis=-1)

    def frenet(self, s):
        u = np.asarray(s, float) / self.c
        a, b, c = self.a, self.b, self.c
        T = np.stack([-a * np.sin(u), a * np.cos(u), np.full_like(u, b)], axis=-1) / c
        N = np.stack([-np.cos(u), -np.sin(u), np.zeros_like(u)], axis=-1)
        B = np.cross(T, N)
        return T, N, B

    def ribbon(self, n=None, width=3.0, seed=0, step=0.05):
        """Points of the ruled strip ``m(s) + u N(s)``; its normal on the axis is B.

        A regular (s, u) grid by default, ``n`` random points otherwise.
        """
        if n is None:
            s, u = np.meshgrid(np.arange(0.0, self.length + 1e-9, step),
                               np.arange(-width, width + 1e-9, step), indexing="ij")
            s, u = s.ravel(), u.ravel()
        else:
            rng = np.random.default_rng(seed)
            s = rng.uniform(0, self.length, n)
            u = rng.uniform(-width, width, n)
        _, N, _ = self.frenet(s)
        return self.point(s) + u[:, None] * N

    def control(self, step=1.0):
        return self.point(np.arange(0.0, self.length + 1e-9, step))


def helix_frame(R=2.5, **kw):
    h = Helix(**kw)
    frame = build_frame(h.ribbon(), h.control(), R, normal_hint=h.frenet(0.0)[2])
    return h, frame


def straight_frame(length=4.0, R=1.0, n=4000, seed=0):
    rng = np.random.default_rng(seed)
    cloud = np.column_stack([rng.uniform(-0.5, length + 0.5, n), rng.uniform(-1, 1, n),
                             np.zeros(n)])
    ctrl = np.column_stack([np.linspace(0, length, 5), np.zeros(5), np.zeros(5)])
    return build_frame(cloud, ctrl, R)


def near_axis_points(helix, frame, n, r_max, seed=0, margin=None):
    """Random points within ``r_max`` of the axis whose projections are interior."""
    rng = np.random.default_rng(seed)
    margin = 2 * r_max if margin is None else margin
    s = rng.uniform(margin, helix.length - margin, n)
    r = r_max * np.sqrt(rng.uniform(0, 1, n))
    th = rng.uniform(0, 2 * np.pi, n)
    _, N, B = helix.frenet(s)
    return helix.point(s) + r[:, None] * (np.cos(th)[:, None] * N + np.sin(th)[:, None] * B)


def slab_volume(n=(24, 24, 20), half=3.0, blur=0.7, tilt=0.0, spacing=1.0,
                air=0.0, leaf=1.0):
    """Blurred slab ``|z - c| < half`` rotated by ``tilt`` radians about x."""
    from scipy.special import ndtr

    from leafsurf.reconstruction import VoxelVolume
    idx = np.stack(np.meshgrid(*[np.arange(k) for k in n], indexing="ij"), axis=-1)
    p = idx * spacing - (np.array(n) - 1) * spacing / 2
    height = -np.sin(tilt) * p[..., 1] + np.cos(tilt) * p[..., 2]
    f = air + (leaf - air) * ndtr((half - np.abs(height)) / blur)
    return VoxelVolume(f.astype(np.float32), np.full(3, spacing))


def bimodal_volume(rng, shape=(40, 40, 30)):
    """Random two-class volume; returns (volume, labels)."""
    from leafsurf.reconstruction import VoxelVolume
    lo = rng.uniform(0.05, 0.25)
    hi = rng.uniform(0.5, 0.9)
    sd = rng.uniform(0.01, 0.04, 2)
    frac = rng.uniform(0.2, 0.6)
    labels = rng.uniform(size=shape) < frac
    f = np.where(labels, rng.normal(hi, sd[1], shape), rng.normal(lo, sd[0], shape))
    return VoxelVolume(np.clip(f, 1e-3, 1).astype(np.float32), np.ones(3)), labels


def height_surface(y1, y2):
    return 0.05 * y2**2 + 0.08 * np.sin(1.3 * y1)


def macro_cloud(n=20_000, length=6.0, width=1.5, noise=0.0, seed=0):
    """Mirror-symmetric samples of ``z = height_surface(x, y)`` and a straight axis on x."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.3, length + 0.3, n // 2)
    y = rng.uniform(0, width, n // 2)
    x, y = np.concatenate([x, x]), np.concatenate([y, -y])
    z = height_surface(x, y) + noise * rng.standard_normal(x.size)
    ctrl = np.column_stack([np.linspace(0, length, 7), np.zeros(7), np.zeros(7)])
    return np.column_stack([x, y, z]), ctrl


SMALL_LEAF = dict(length=8.0, width=2.0, curvature=0.05, twist=0.3, n_cloud=20_000,
                  noise=0.01, n_control=9, patch=0.3, voxel=0.006, hair_count=2,
                  hair_height=0.05, hair_radius=0.015, hair_margin=0.06)


def small_multiscale(**over):
    """A reduced synthetic leaf (8 x 2 mm, 0.3 mm patch) fitted through every stage."""
    from leafsurf import pipeline
    from leafsurf.config import PipelineConfig
    from leafsurf.synthetic import SyntheticParams, generate_synthetic_leaf
    from leafsurf.timing import StageTimer
    leaf = generate_synthetic_leaf(SyntheticParams(**{**SMALL_LEAF, **over}))
    cfg = PipelineConfig(rho_macro=1.0, macro_capacity=1000, micro_capacity=300, alpha=0.2,
                         h=0.012)
    timer = StageTimer()
    micro = pipeline.stage_micro(cfg, timer, leaf.volume)
    frame = pipeline.stage_frame(cfg, timer, leaf.cloud, leaf.control_points)
    hm = pipeline.stage_macro(cfg, frame, timer, leaf.cloud)
    return leaf, pipeline.stage_tile(frame, hm, micro), cfg
