"""``leafsurf`` command line: fixture generation, staged fits, meshing, benchmarks."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import io, pipeline
from .config import PipelineConfig, load_config
from .errors import LeafSurfError
from .timing import StageTimer

log = logging.getLogger("leafsurf")

ENV_THREADS = "LEAFSURF_THREADS"
ENV_LOG_LEVEL = "LEAFSURF_LOG_LEVEL"

# settings the synth fixture was tuned with; see README
FIXTURE_SETTINGS = {
    "rho_macro": 100.0,
    "macro_capacity": 3000,
    "micro_capacity": 400,
    "rho_micro": 1e-7,
    "h": 0.006,
    "alpha": 0.25,
    "band": 0.2,
}


def _add_config_options(p: argparse.ArgumentParser):
    p.add_argument("-c", "--config", help="key = value configuration file")
    g = p.add_argument_group("configuration overrides")
    for key in PipelineConfig.keys():
        g.add_argument("--" + key.replace("_", "-"), dest="cfg_" + key, metavar="VALUE")


def _config(args) -> PipelineConfig:
    over = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if os.environ.get(ENV_THREADS) and "threads" not in over:
        over["threads"] = os.environ[ENV_THREADS]
    return load_config(args.config, over)


def _setup_threads(cfg: PipelineConfig):
    try:
        import numba
        numba.set_num_threads(max(1, min(cfg.threads, numba.config.NUMBA_NUM_THREADS)))
    except (ImportError, ValueError):
        pass


def _cmd_synth(args, out):
    from .synthetic import SyntheticParams, generate_synthetic_leaf, params_dict
    over = {}
    for item in args.param or []:
        if "=" not in item:
            raise LeafSurfError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip().replace("-", "_")] = v.strip()
    base = SyntheticParams()
    kw = {}
    for k, v in over.items():
        if not hasattr(base, k):
            raise LeafSurfError(f"unknown fixture parameter {k!r}")
        kw[k] = type(getattr(base, k))(float(v)) if not isinstance(getattr(base, k), str) else v
    if args.seed is not None:
        kw["seed"] = args.seed
    params = SyntheticParams(**{**params_dict(base), **kw})
    t0 = time.perf_counter()
    leaf = generate_synthetic_leaf(params)
    log.info("generated fixture in %.1fs: %d cloud points, volume %s", time.perf_counter() - t0,
             len(leaf.cloud), "x".join(map(str, leaf.volume.dims)))
    io.save_point_cloud(leaf.cloud, out.path("cloud.xyz"), "synthetic leaf surface samples")
    io.save_point_cloud(leaf.control_points, out.path("control.xyz"), "medial-axis control points")
    io.save_volume_raw(leaf.volume, out.path("volume.raw"))
    out.files.append(out.path("volume.raw") + ".txt")
    with open(out.path("fixture.json"), "w", encoding="utf-8") as fh:
        json.dump(params_dict(params), fh, indent=2)
    cfg = PipelineConfig(cloud="cloud.xyz", volume="volume.raw", control="control.xyz",
                         output="out", **FIXTURE_SETTINGS)
    with open(out.path("leaf.cfg"), "w", encoding="utf-8") as fh:
        fh.write("# synthetic fixture; paths are relative to this file\n")
        fh.write(cfg.to_text())
    print(f"wrote fixture to {out.directory}")


def _load(path, required):
    return io.load_parts(path, required=required)


def _cmd_build_frame(args, out):
    cfg = _config(args)
    timer = StageTimer()
    frame = pipeline.stage_frame(cfg, timer)
    io.save_parts(out.path(pipeline.FRAME_FILE), pipeline.provenance(cfg), frame=frame)
    return timer


def _cmd_fit_macro(args, out):
    cfg = _config(args)
    timer = StageTimer()
    frame = _load(pipeline.output_path(cfg, pipeline.FRAME_FILE), ("frame",))["frame"]
    hm = pipeline.stage_macro(cfg, frame, timer)
    io.save_parts(out.path(pipeline.HEIGHTMAP_FILE), pipeline.provenance(cfg), heightmap=hm)
    return timer


def _cmd_fit_micro(args, out):
    cfg = _config(args)
    timer = StageTimer()
    micro = pipeline.stage_micro(cfg, timer)
    io.save_parts(out.path(pipeline.MICRO_FILE), pipeline.provenance(cfg), micro=micro)
    return timer


def _cmd_tile(args, out):
    cfg = _config(args)
    frame = _load(pipeline.output_path(cfg, pipeline.FRAME_FILE), ("frame",))["frame"]
    hm = _load(pipeline.output_path(cfg, pipeline.HEIGHTMAP_FILE), ("heightmap",))["heightmap"]
    micro = _load(pipeline.output_path(cfg, pipeline.MICRO_FILE), ("micro",))["micro"]
    G = pipeline.stage_tile(frame, hm, micro)
    io.save_archive(G, out.path(pipeline.ARCHIVE_FILE), pipeline.provenance(cfg))


def _cmd_extract_mesh(args, out):
    cfg = _config(args)
    timer = StageTimer()
    G = io.load_archive(args.archive or pipeline.output_path(cfg, pipeline.ARCHIVE_FILE))
    implicit, surface = pipeline.stage_meshes(cfg, G, timer)
    pipeline.write_meshes(cfg, implicit, surface, out)
    return timer


def _cmd_reconstruct(args, out):
    cfg = _config(args)
    res = pipeline.reconstruct(cfg, out)
    return res.timer


def _cmd_bench(args, out):
    from .pu import fit_pu
    from .rbf import THIN_PLATE_2D
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if len(sizes) < 1 or any(n < 10 for n in sizes):
        raise LeafSurfError("--sizes needs comma-separated sample counts of at least 10")
    rng = np.random.default_rng(args.seed)
    rows = []
    for n in sizes:
        x = rng.uniform(0.0, 1.0, (n, 2)) * np.sqrt(n / 1000.0)
        f = np.sin(3 * x[:, 0]) * np.cos(2 * x[:, 1]) + 0.01 * rng.standard_normal(n)
        t0 = time.perf_counter()
        field = fit_pu(x, f, 1e-3, THIN_PLATE_2D, args.capacity, args.overlap)
        rows.append((n, field.n_subdomains, time.perf_counter() - t0))
    print(f"{'N':>10} {'subdomains':>11} {'fit (s)':>9} {'ratio':>7} {'N ratio':>8}")
    for i, (n, m, t) in enumerate(rows):
        r = "" if i == 0 else f"{t / rows[0][2]:7.2f}"
        nr = "" if i == 0 else f"{n / rows[0][0]:8.2f}"
        print(f"{n:>10d} {m:>11d} {t:>9.2f} {r:>7} {nr:>8}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leafsurf", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("synth", help="write the synthetic leaf fixture")
    s.add_argument("out", help="output directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="fixture parameter override (repeatable)")
    s.set_defaults(func=_cmd_synth, out_dir=lambda a: a.out)

    for name, func, text in [
        ("build-frame", _cmd_build_frame, "fit the leaf coordinate system"),
        ("fit-macro", _cmd_fit_macro, "fit the macro-scale height map"),
        ("fit-micro", _cmd_fit_micro, "fit the micro-scale implicit patch"),
        ("tile", _cmd_tile, "combine frame, height map and patch into one archive"),
        ("extract-mesh", _cmd_extract_mesh, "mesh a coefficient archive"),
        ("reconstruct", _cmd_reconstruct, "every stage end to end"),
    ]:
        c = sub.add_parser(name, help=text)
        _add_config_options(c)
        if name == "extract-mesh":
            c.add_argument("--archive", help="archive to mesh (default OUTPUT/archive.npz)")
        c.set_defaults(func=func, out_dir=lambda a: _config(a).output)

    b = sub.add_parser("bench", help="fit-time scaling of the partition of unity")
    b.add_argument("--sizes", default="25000,100000")
    b.add_argument("--capacity", type=int, default=800)
    b.add_argument("--overlap", type=float, default=1.25)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=_cmd_bench, out_dir=lambda a: None)
    return p


def _logging(args):
    level = os.environ.get(ENV_LOG_LEVEL, "").upper()
    if not level:
        level = "WARNING" if args.quiet else ("DEBUG" if args.verbose > 1 else "INFO")
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _logging(args)
    out = None
    try:
        if args.command not in ("synth", "bench"):
            _setup_threads(_config(args))
        directory = args.out_dir(args)
        if args.command not in ("synth", "bench") and directory is None:
            raise LeafSurfError("set an output directory with --output or in the config file")
        out = pipeline.OutputTracker(directory)
        timer = args.func(args, out)
        if isinstance(timer, StageTimer) and timer.seconds:
            if args.command != "reconstruct":
                pipeline.write_timings(timer, out, f"timings-{args.command}")
            sys.stdout.write(timer.report())
        return 0
    except (LeafSurfError, OSError, ValueError) as exc:
        if out is not None:
            out.cleanup()
        log.error("%s failed: %s", args.command, exc)
        print(f"leafsurf {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        if out is not None:
            out.cleanup()
        return 130


if __name__ == "__main__":
    sys.exit(main())
