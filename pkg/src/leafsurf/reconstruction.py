"""Micro-scale implicit fit from CT intensities and macro-scale height map."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

from .errors import DegenerateGeometryError, ThresholdError
from .frame import LeafFrame, world_to_leaf
from .pu import DEFAULT_CAPACITY, DEFAULT_OVERLAP, PUField, fit_pu
from .rbf import CUBIC_3D, THIN_PLATE_2D

log = logging.getLogger(__name__)

DEFAULT_BAND = 0.1
DEFAULT_STRIDE = 8
DEFAULT_RHO_MACRO = 1e-6
DEFAULT_RHO_MICRO = 1e-7
HIST_BINS = 256


@dataclass(frozen=True)
class LabeledPoints:
    points: np.ndarray
    values: np.ndarray

    def __len__(self):
        return self.points.shape[0]


@dataclass(eq=False)
class VoxelVolume:
    """Scalar volume indexed ``[i, j, k]`` along x, y, z.

    Voxel ``(i, j, k)`` has its centre at ``origin + spacing * (i, j, k)``.
    """

    intensities: np.ndarray
    spacing: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities)
        if self.intensities.ndim != 3:
            raise ValueError("intensities must be a 3-D array")
        self.spacing = np.asarray(self.spacing, float).reshape(3)
        self.origin = np.asarray(self.origin, float).reshape(3)
        if np.any(self.spacing <= 0):
            raise ValueError("voxel spacing must be positive")

    @property
    def dims(self):
        return tuple(int(n) for n in self.intensities.shape)

    def centers(self, idx):
        """World coordinates of voxel centres for an (M, 3) index array."""
        return self.origin + np.asarray(idx, float) * self.spacing

    def normalized(self) -> "VoxelVolume":
        v = self.intensities.astype(np.float64)
        lo, hi = float(v.min()), float(v.max())
        scale = hi - lo if hi > lo else 1.0
        return VoxelVolume(((v - lo) / scale).astype(np.float32), self.spacing, self.origin)


def estimate_threshold(volume: VoxelVolume, bins: int = HIST_BINS) -> float:
    """Intensity at the histogram valley between the two dominant peaks.

    Zero-valued voxels are excluded. The 256-bin histogram spans the range
    of nonzero intensities and is lightly smoothed (Gaussian, 2 bins)
    before peak detection so sampling noise does not create spurious maxima.
    """
    v = np.asarray(volume.intensities).ravel()
    v = v[v != 0]
    if v.size == 0:
        raise ThresholdError("volume has no nonzero voxels; set f_surface manually")
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise ThresholdError("constant-intensity volume; set f_surface manually")
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    smooth = gaussian_filter1d(counts.astype(float), 2.0, mode="constant")
    padded = np.concatenate([[0.0], smooth, [0.0]])
    peaks, props = find_peaks(padded, prominence=0.02 * smooth.max())
    peaks = peaks - 1
    if peaks.size < 2:
        raise ThresholdError(
            "intensity histogram is not bimodal; set f_surface manually"
        )
    top = np.sort(peaks[np.argsort(smooth[peaks])[-2:]])
    a, b = int(top[0]), int(top[1])
    if b - a < 2:
        raise ThresholdError("histogram peaks are not separated; set f_surface manually")
    valley = a + 1 + int(np.argmin(smooth[a + 1:b]))
    return float(0.5 * (edges[valley] + edges[valley + 1]))


def select_voxels(volume: VoxelVolume, f_surface: float, band: float = DEFAULT_BAND,
                  stride=DEFAULT_STRIDE) -> LabeledPoints:
    """Voxels near the threshold plus a sparse off-band lattice.

    Every voxel with ``|f - f_surface| <= band`` is kept; of the rest, those
    whose indices are all multiples of ``stride`` are kept as anchors
    (``stride=None`` or infinity disables anchors). Values are offset to
    ``f - f_surface``.
    """
    if not band > 0:
        raise ValueError("band must be positive")
    f = np.asarray(volume.intensities)
    near = np.abs(f.astype(np.float64) - f_surface) <= band
    keep = near
    if stride is not None and not (isinstance(stride, float) and math.isinf(stride)):
        s = int(stride)
        if s < 1:
            raise ValueError("stride must be a positive integer")
        lattice = np.zeros(f.shape, dtype=bool)
        lattice[::s, ::s, ::s] = True
        keep = near | lattice
    idx = np.argwhere(keep)
    if idx.shape[0] == 0:
        raise DegenerateGeometryError("voxel selection is empty")
    vals = f[idx[:, 0], idx[:, 1], idx[:, 2]].astype(np.float64) - f_surface
    return LabeledPoints(volume.centers(idx), vals)


def _rotation_to_z(n):
    """Smallest rotation taking unit vector ``n`` (with n_z >= 0) onto +z."""
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(n, z)
    s = np.linalg.norm(v)
    c = float(n @ z)
    if s < 1e-15:
        return np.eye(3)
    k = v / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def _alignment(centroid, cov):
    w, v = np.linalg.eigh(cov)
    scale = max(w[2], 1e-300)
    if w[1] - w[0] <= 1e-12 * scale or w[1] <= 1e-12 * scale:
        raise DegenerateGeometryError("above-threshold sites have degenerate covariance")
    n = v[:, 0]
    if n[2] < 0:
        n = -n
    R = _rotation_to_z(n / np.linalg.norm(n))
    return R, -R @ centroid


def align_micro(samples: LabeledPoints):
    """Rotate and centre samples so the leaf sheet lies in the (z1, z2) plane.

    PCA of the above-threshold sites gives the sheet normal (smallest
    principal axis, oriented towards +z); the rotation is the minimal one
    carrying that normal onto z3, which keeps in-plane axes as close to the
    input axes as possible. The centroid of the above-threshold sites moves
    to the origin. Returns ``(R, t, aligned)`` with ``aligned = R x + t``.
    """
    above = samples.points[samples.values > 0]
    if above.shape[0] < 3:
        raise DegenerateGeometryError("too few above-threshold sites to align")
    centroid = above.mean(axis=0)
    c = above - centroid
    R, t = _alignment(centroid, c.T @ c / above.shape[0])
    return R, t, transform_points(samples, R, t)


def transform_points(samples: LabeledPoints, R, t) -> LabeledPoints:
    return LabeledPoints(samples.points @ np.asarray(R).T + t, samples.values.copy())


def _solid_slices(volume: VoxelVolume, f_surface: float):
    """Reference point and a generator of per-slice above-threshold voxel
    centres relative to it (the volume centre, for round-off)."""
    f = volume.intensities
    nx, ny, nz = f.shape
    ref = volume.centers(np.array([[nx - 1, ny - 1, nz - 1]]) / 2.0)[0]
    gx, gy = np.meshgrid(volume.origin[0] + volume.spacing[0] * np.arange(nx) - ref[0],
                         volume.origin[1] + volume.spacing[1] * np.arange(ny) - ref[1],
                         indexing="ij")

    def gen():
        for k in range(nz):
            m = f[:, :, k] > f_surface
            c = int(m.sum())
            if c:
                yield np.column_stack([gx[m], gy[m], np.full(
                    c, volume.origin[2] + volume.spacing[2] * k - ref[2])])

    return ref, gen()


def volume_moments(volume: VoxelVolume, f_surface: float):
    """Centroid and covariance of all voxel centres with ``f > f_surface``.

    Accumulated slice by slice so the full index set is never materialised.
    """
    ref, slices = _solid_slices(volume, f_surface)
    n = 0
    s1 = np.zeros(3)
    s2 = np.zeros((3, 3))
    for p in slices:
        n += p.shape[0]
        s1 += p.sum(axis=0)
        s2 += p.T @ p
    if n < 3:
        raise DegenerateGeometryError("too few above-threshold voxels to align")
    mean = s1 / n
    cov = s2 / n - np.outer(mean, mean)
    return mean + ref, cov


def solid_bounds(volume: VoxelVolume, f_surface: float, R, t):
    """Bounding box of the above-threshold voxel centres after ``x -> R x + t``."""
    ref, slices = _solid_slices(volume, f_surface)
    R = np.asarray(R, float)
    off = R @ ref + t
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for p in slices:
        q = p @ R.T
        lo = np.minimum(lo, q.min(axis=0))
        hi = np.maximum(hi, q.max(axis=0))
    if not np.all(np.isfinite(lo)):
        raise DegenerateGeometryError("no voxel exceeds the surface threshold")
    return lo + off, hi + off


@dataclass(frozen=True, eq=False)
class MicroPatch:
    """Implicit micro-scale field in aligned patch coordinates.

    ``extent`` is ``(lo, hi)``, each a 3-vector; its z1/z2 widths are the
    tile widths used when tiling the patch.
    """

    field: PUField
    extent: tuple
    f_surface: float
    rotation: np.ndarray
    translation: np.ndarray

    @property
    def tile_extent(self) -> np.ndarray:
        lo, hi = self.extent
        return np.asarray(hi[:2] - lo[:2], float)

    def __call__(self, z):
        return self.field.evaluate(z)


def fit_micro_implicit(volume: VoxelVolume, f_surface: float,
                       rho: float = DEFAULT_RHO_MICRO,
                       capacity: int = DEFAULT_CAPACITY,
                       overlap: float = DEFAULT_OVERLAP,
                       band: float = DEFAULT_BAND, stride=DEFAULT_STRIDE,
                       workers: int = 1) -> MicroPatch:
    """Voxel selection, alignment, then a 3-D partition-of-unity fit.

    The alignment is computed from every above-threshold voxel (the solid
    material), not only the selected ones, so the mid-plane of the sheet
    lands on z3 = 0 regardless of how much surface area each face has.
    The field is positive where intensity exceeds ``f_surface``.
    """
    samples = select_voxels(volume, f_surface, band, stride)
    R, t = _alignment(*volume_moments(volume, f_surface))
    aligned = transform_points(samples, R, t)
    log.info("micro fit: %d sites", len(aligned))
    field_ = fit_pu(aligned.points, aligned.values, rho, CUBIC_3D, capacity, overlap,
                    workers=workers)
    lo, hi = solid_bounds(volume, f_surface, R, t)
    pad = float(np.mean(volume.spacing[:2]))
    lo[:2] -= 0.5 * pad
    hi[:2] += 0.5 * pad
    return MicroPatch(field_, (lo, hi), float(f_surface), R, t)


@dataclass(frozen=True, eq=False)
class HeightMap:
    """Explicit height ``y3 = H(y1, y2)`` over flattened leaf coordinates."""

    field: PUField
    domain: tuple
    sites: np.ndarray
    shape: object = None

    def __call__(self, y):
        return self.field.evaluate(y)

    def with_shape(self, shape) -> "HeightMap":
        return HeightMap(self.field, self.domain, self.sites, shape)

    def contains(self, y):
        """True where (y1, y2) is inside the clipping shape (or the rectangle)."""
        Y = np.atleast_2d(np.asarray(y, float))
        lo, hi = self.domain
        ok = np.all((Y >= lo) & (Y <= hi), axis=1)
        if self.shape is not None:
            from .meshing import point_in_shape
            ok &= point_in_shape(self.shape, Y)
        return ok


def fit_macro_heightmap(cloud, frame: LeafFrame, rho: float = DEFAULT_RHO_MACRO,
                        capacity: int = DEFAULT_CAPACITY,
                        overlap: float = DEFAULT_OVERLAP, workers: int = 1,
                        leaf_coords=None) -> HeightMap:
    """Smoothed 2-D PU fit of leaf height y3 over (y1, y2).

    Points whose closest medial-axis parameter is clamped to an end of the
    frame are dropped. ``leaf_coords`` may pass precomputed
    ``(y, clamped)`` to skip the transform.
    """
    cloud = np.asarray(cloud, float)
    if leaf_coords is None:
        y, clamped = world_to_leaf(frame, cloud, return_clamped=True)
    else:
        y, clamped = leaf_coords
    y = np.atleast_2d(y)
    clamped = np.atleast_1d(clamped)
    if clamped.any():
        log.warning("dropping %d of %d cloud points projecting past the medial axis ends",
                    int(clamped.sum()), y.shape[0])
    y = y[~clamped]
    sites = y[:, :2]
    field_ = fit_pu(sites, y[:, 2], rho, THIN_PLATE_2D, capacity, overlap, workers=workers)
    domain = (sites.min(axis=0), sites.max(axis=0))
    return HeightMap(field_, domain, sites)
