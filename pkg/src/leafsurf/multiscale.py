"""Micro patch tiled over the flattened leaf: the combined field G."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import OutsideDomainError
from .frame import LeafFrame, leaf_to_world, world_to_leaf
from .pu import wendland
from .reconstruction import HeightMap, MicroPatch

_SNAP = 1e-9


@dataclass(frozen=True, eq=False)
class TilingLayout:
    """Copies ``q = (q1, q2)`` for ``qlo <= q <= qhi``, displaced by ``q * tile_extent``."""

    tile_extent: np.ndarray
    qlo: np.ndarray
    qhi: np.ndarray
    domain: tuple

    @property
    def shape(self):
        return tuple(int(v) for v in self.qhi - self.qlo + 1)

    @property
    def n_copies(self) -> int:
        a, b = self.shape
        return a * b

    @property
    def indices(self) -> np.ndarray:
        g = np.mgrid[self.qlo[0]:self.qhi[0] + 1, self.qlo[1]:self.qhi[1] + 1]
        return g.reshape(2, -1).T

    @property
    def displacements(self) -> np.ndarray:
        """(N_q, 3) displacement vectors with zero third component."""
        q = self.indices
        out = np.zeros((q.shape[0], 3))
        out[:, :2] = q * self.tile_extent
        return out


def build_tiling(micro: MicroPatch, domain) -> TilingLayout:
    """Smallest copy grid covering ``domain = (lo, hi)`` plus one ring of margin."""
    w = np.asarray(micro.tile_extent, float)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("tile extent must be positive")
    lo = np.asarray(domain[0], float)
    hi = np.asarray(domain[1], float)
    if np.any(hi <= lo):
        raise ValueError("tiling domain is empty")
    elo = np.asarray(micro.extent[0][:2], float)
    ehi = np.asarray(micro.extent[1][:2], float)
    qlo = np.floor((lo - elo) / w + _SNAP).astype(np.int64) - 1
    qhi = np.ceil((hi - ehi) / w - _SNAP).astype(np.int64) + 1
    return TilingLayout(w, qlo, qhi, (lo.copy(), hi.copy()))


class MultiScaleField:
    """``G(x) = sum_{i,q} w_i^q F_i(T*(x) - s_q) / sum_{i,q} w_i^q``."""

    def __init__(self, frame: LeafFrame, heightmap: HeightMap, micro: MicroPatch,
                 layout: TilingLayout):
        self.frame = frame
        self.heightmap = heightmap
        self.micro = micro
        self.layout = layout
        f = micro.field
        self._bmin = np.asarray(f.bounds[0], float)
        self._bmax = np.asarray(f.bounds[1], float)

    def _raw(self, z, want_value=True):
        f = self.micro.field
        ix = f.index
        lay = self.layout
        return _kernels.tiled_eval(
            z, 3, f._cx, f._lam, f.offsets, f._tail, f.centers, f.radii,
            ix.origin, ix.cell, ix.shape, ix.start, ix.items,
            lay.tile_extent, lay.qlo, lay.qhi, self._bmin, self._bmax, want_value,
        )

    @staticmethod
    def _rows(z):
        q = np.asarray(z, float)
        single = q.ndim == 1
        q = np.ascontiguousarray(np.atleast_2d(q))
        if q.shape[1] != 3:
            raise ValueError("points must be 3-D")
        return q, single

    def eval_z(self, z, outside: str = "raise"):
        """Tiled micro field at flattened coordinates ``z = T*(x)``."""
        q, single = self._rows(z)
        num, den = self._raw(q)
        bad = den <= 0
        vals = np.full(q.shape[0], np.nan)
        vals[~bad] = num[~bad] / den[~bad]
        if bad.any() and outside == "raise":
            raise OutsideDomainError(
                f"{int(bad.sum())} point(s) outside micro coverage, e.g. {q[np.argmax(bad)]}"
            )
        return float(vals[0]) if single else vals

    def weight_sums_z(self, z):
        q, single = self._rows(z)
        _, den = self._raw(q, want_value=False)
        return float(den[0]) if single else den

    def weights_z(self, z):
        """Active ``(subdomain, copy)`` pairs and their normalised weights at one point."""
        p = np.asarray(z, float).reshape(3)
        f = self.micro.field
        disp = self.layout.displacements
        ids, copies, ws = [], [], []
        for k, s in enumerate(disp):
            tau = np.linalg.norm(p - s - f.centers, axis=1) / f.radii
            act = np.nonzero(tau < 1.0)[0]
            if act.size:
                ids.append(act)
                copies.append(np.full(act.size, k))
                ws.append(wendland(tau[act]))
        if not ids:
            raise OutsideDomainError(f"point {p} outside micro coverage")
        w = np.concatenate(ws)
        return np.concatenate(ids), np.concatenate(copies), w / w.sum()

    def t_star(self, x):
        return t_star(self.frame, self.heightmap, x)

    def z_to_world(self, z):
        """Inverse of T*: ``y = (z1, z2, z3 + H(z1, z2))`` mapped to world."""
        Z = np.atleast_2d(np.asarray(z, float))
        y = Z.copy()
        y[:, 2] += self.heightmap(Z[:, :2])
        x = leaf_to_world(self.frame, y)
        return x[0] if np.ndim(z) == 1 else x

    def __call__(self, x):
        return eval_multiscale(self, x)


def t_star(frame: LeafFrame, heightmap: HeightMap, x):
    """``[y1, y2, y3 - H(y1, y2)]`` for world point(s) ``x``."""
    y = np.atleast_2d(world_to_leaf(frame, x))
    inside = heightmap.contains(y[:, :2])
    if not inside.all():
        raise OutsideDomainError(
            f"{int((~inside).sum())} point(s) project outside the height-map domain"
        )
    z = y.copy()
    z[:, 2] -= heightmap(y[:, :2])
    return z[0] if np.ndim(x) == 1 else z


def eval_multiscale(G: MultiScaleField, x):
    """Combined field at world point(s) ``x``."""
    z = G.t_star(x)
    return G.eval_z(z)


def tile_seams(layout: TilingLayout, extent) -> tuple:
    """Seam coordinates (z1 list, z2 list) between neighbouring copies."""
    lo = np.asarray(extent[0][:2], float)
    w = layout.tile_extent
    s1 = [lo[0] + q * w[0] for q in range(int(layout.qlo[0]) + 1, int(layout.qhi[0]) + 1)]
    s2 = [lo[1] + q * w[1] for q in range(int(layout.qlo[1]) + 1, int(layout.qhi[1]) + 1)]
    return np.array(s1), np.array(s2)
