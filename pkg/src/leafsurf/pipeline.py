"""Reconstruction stages wired to files: the engine behind the CLI."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from . import io
from .config import PipelineConfig
from .errors import ConfigError
from .frame import LeafFrame, build_frame, world_to_leaf
from .meshing import TriangleMesh, alpha_shape, default_alpha, delaunay2d, \
    extract_implicit_mesh, sample_heightmap_mesh
from .multiscale import MultiScaleField, build_tiling
from .reconstruction import HeightMap, MicroPatch, estimate_threshold, fit_macro_heightmap, \
    fit_micro_implicit
from .timing import StageTimer

log = logging.getLogger(__name__)

FRAME_FILE = "frame.npz"
HEIGHTMAP_FILE = "heightmap.npz"
MICRO_FILE = "micro.npz"
ARCHIVE_FILE = "archive.npz"
IMPLICIT_MESH = "implicit"
HEIGHTMAP_MESH = "heightmap"


def _need(cfg: PipelineConfig, *keys):
    missing = [k for k in keys if getattr(cfg, k) is None]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join(missing))


def output_path(cfg: PipelineConfig, name: str) -> str:
    _need(cfg, "output")
    return os.path.join(cfg.output, name)


def _fmt(n: int) -> str:
    if n >= 1_000_000:
        return f"{n / 1e6:.1f}M"
    if n >= 1000:
        return f"{n / 1e3:.1f}k"
    return str(n)


def default_radius(control_points) -> float:
    """Median spacing of consecutive control points."""
    c = np.asarray(control_points, float)
    return float(np.median(np.linalg.norm(np.diff(c, axis=0), axis=1)))


def stage_frame(cfg: PipelineConfig, timer: StageTimer, cloud=None, control=None) -> LeafFrame:
    if cloud is None:
        _need(cfg, "cloud")
        cloud = io.load_point_cloud(cfg.cloud)
    if control is None:
        _need(cfg, "control")
        control = io.load_point_cloud(cfg.control)
    R = cfg.R if cfg.R is not None else default_radius(control)
    with timer.stage("Fit leaf coordinate system"):
        frame = build_frame(cloud, control, R)
    timer.note("Fit leaf coordinate system", f"{len(control)} control points")
    log.info("frame: %d control points, R=%.4g, length %.4g", len(control), R, frame.length)
    return frame


def stage_macro(cfg: PipelineConfig, frame: LeafFrame, timer: StageTimer, cloud=None) -> HeightMap:
    if cloud is None:
        _need(cfg, "cloud")
        cloud = io.load_point_cloud(cfg.cloud)
    with timer.stage("Use world to leaf transform"):
        y, clamped = world_to_leaf(frame, cloud, return_clamped=True)
    timer.note("Use world to leaf transform", f"{_fmt(len(cloud))} points")
    with timer.stage("Fit macro-scale interpolant"):
        hm = fit_macro_heightmap(cloud, frame, cfg.rho_macro, cfg.capacity_macro, cfg.overlap,
                                 workers=cfg.threads, leaf_coords=(y, clamped))
    timer.note("Fit macro-scale interpolant",
               f"{_fmt(len(hm.sites))} points, {hm.field.n_subdomains} subdomains")
    with timer.stage("α-shape exclusion of exterior points"):
        alpha = cfg.alpha if cfg.alpha is not None else default_alpha(hm.sites)
        shape = alpha_shape(hm.sites, alpha, delaunay2d(hm.sites))
    log.info("macro: %d subdomains, alpha %.4g keeps %d triangles",
             hm.field.n_subdomains, alpha, len(shape.triangles))
    return hm.with_shape(shape)


def stage_micro(cfg: PipelineConfig, timer: StageTimer, volume=None) -> MicroPatch:
    if volume is None:
        _need(cfg, "volume")
        volume = io.load_volume(cfg.volume)
    fs = cfg.f_surface if cfg.f_surface is not None else estimate_threshold(volume)
    log.info("micro: volume %s, f_surface %.4g", "x".join(map(str, volume.dims)), fs)
    with timer.stage("Fit micro-scale interpolant"):
        micro = fit_micro_implicit(volume, fs, cfg.rho_micro, cfg.capacity_micro, cfg.overlap,
                                   cfg.band, cfg.stride, workers=cfg.threads)
    n = int(micro.field.offsets[-1])
    timer.note("Fit micro-scale interpolant",
               f"{_fmt(n)} memberships, {micro.field.n_subdomains} subdomains")
    return micro


def stage_tile(frame, hm: HeightMap, micro: MicroPatch) -> MultiScaleField:
    layout = build_tiling(micro, hm.domain)
    log.info("tiling: %d x %d copies of a %.4g x %.4g patch", *layout.shape, *micro.tile_extent)
    return MultiScaleField(frame, hm, micro, layout)


def mesh_box(cfg: PipelineConfig, G: MultiScaleField):
    """Flattened-coordinate box for the implicit mesh."""
    w = G.micro.tile_extent * cfg.mesh_tiles
    c1 = cfg.mesh_center_y1 if cfg.mesh_center_y1 is not None else 0.5 * G.frame.length
    c = np.array([c1, cfg.mesh_center_y2])
    lo3, hi3 = G.micro.extent[0][2], G.micro.extent[1][2]
    lo = np.array([c[0] - 0.5 * w[0], c[1] - 0.5 * w[1], lo3 - 2 * cfg.h])
    hi = np.array([c[0] + 0.5 * w[0], c[1] + 0.5 * w[1], hi3 + 2 * cfg.h])
    return lo, hi


def stage_meshes(cfg: PipelineConfig, G: MultiScaleField, timer: StageTimer):
    lo, hi = mesh_box(cfg, G)
    t = {}
    implicit = extract_implicit_mesh(G, lo, hi, cfg.h, timings=t)
    n_pts = int(np.prod(np.floor((hi - lo) / cfg.h + 1e-9) + 1))
    h_macro = cfg.h_macro if cfg.h_macro is not None else G.heightmap.shape.alpha \
        if G.heightmap.shape is not None else default_alpha(G.heightmap.sites)
    surface = sample_heightmap_mesh(G.heightmap, G.frame, h_macro, timings=t)
    timer.merge(t)
    timer.note("Evaluating implicit function at interior points", f"{_fmt(n_pts)} lattice points")
    timer.note("Polygonizing with marching tetrahedra",
               f"{_fmt(6 * n_pts)} tetrahedra, {_fmt(implicit.n_triangles)} triangles")
    timer.note("Sample height map", f"{_fmt(surface.n_vertices)} points")
    log.info("meshes: implicit %d triangles (h=%.4g), height map %d triangles (h=%.4g)",
             implicit.n_triangles, cfg.h, surface.n_triangles, h_macro)
    return implicit, surface


def provenance(cfg: PipelineConfig) -> dict:
    inputs = {}
    for k in ("cloud", "volume", "control"):
        p = getattr(cfg, k)
        if p is not None and os.path.exists(p):
            inputs[k] = {"path": os.path.abspath(p), "sha256": io.file_digest(p)}
    return {"inputs": inputs, "config": cfg.as_dict()}


@dataclass
class Reconstruction:
    field: MultiScaleField
    implicit: TriangleMesh
    surface: TriangleMesh
    timer: StageTimer
    files: list


class OutputTracker:
    """Remembers files a command writes so a failure can remove them."""

    def __init__(self, directory: str | None):
        self.directory = directory
        self.created_dir = False
        self.files: list[str] = []
        if directory is not None and not os.path.isdir(directory):
            os.makedirs(directory)
            self.created_dir = True

    def path(self, name: str) -> str:
        p = os.path.join(self.directory, name) if self.directory else name
        self.files.append(p)
        return p

    def cleanup(self):
        for p in self.files:
            try:
                if os.path.isdir(p):
                    for f in os.listdir(p):
                        os.remove(os.path.join(p, f))
                    os.rmdir(p)
                elif os.path.exists(p):
                    os.remove(p)
            except OSError:
                log.warning("could not remove partial output %s", p)
        if self.created_dir:
            try:
                os.rmdir(self.directory)
            except OSError:
                pass


def write_meshes(cfg, implicit, surface, out: OutputTracker):
    ext = "." + cfg.mesh_format
    io.save_mesh(implicit, out.path(IMPLICIT_MESH + ext), cfg.mesh_format)
    io.save_mesh(surface, out.path(HEIGHTMAP_MESH + ext), cfg.mesh_format)


def write_timings(timer: StageTimer, out: OutputTracker, stem: str = "timings"):
    with open(out.path(stem + ".txt"), "w", encoding="utf-8") as fh:
        fh.write(timer.report())
    with open(out.path(stem + ".json"), "w", encoding="utf-8") as fh:
        fh.write(timer.to_json())


def reconstruct(cfg: PipelineConfig, out: OutputTracker | None = None) -> Reconstruction:
    """Every stage from input files to coefficient archive, meshes and timings."""
    _need(cfg, "cloud", "volume", "control", "output")
    out = out or OutputTracker(cfg.output)
    timer = StageTimer()
    cloud = io.load_point_cloud(cfg.cloud)
    control = io.load_point_cloud(cfg.control)
    micro = stage_micro(cfg, timer)
    frame = stage_frame(cfg, timer, cloud, control)
    hm = stage_macro(cfg, frame, timer, cloud)
    G = stage_tile(frame, hm, micro)
    io.save_archive(G, out.path(ARCHIVE_FILE), provenance(cfg))
    implicit, surface = stage_meshes(cfg, G, timer)
    write_meshes(cfg, implicit, surface, out)
    with open(out.path("config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    write_timings(timer, out)
    return Reconstruction(G, implicit, surface, timer, list(out.files))
