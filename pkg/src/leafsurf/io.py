"""Point clouds, CT volumes, meshes and coefficient archives on disk."""

from __future__ import annotations

import glob
import hashlib
import json
import os

import numpy as np

from .errors import FormatError
from .frame import LeafFrame
from .meshing import AlphaShape2D, TriangleMesh
from .multiscale import MultiScaleField, TilingLayout
from .numerics import CubicSpline3
from .pu import PUField, Subdomain
from .rbf import LocalRBF, kernel_for
from .reconstruction import HeightMap, MicroPatch, VoxelVolume

ARCHIVE_VERSION = 1
SIDECAR_NAME = "volume.txt"

# ------------------------------------------------------------ point clouds


def _read_ascii_points(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 3:
                raise FormatError(f"expected 3 coordinates, got {len(parts)}", path, lineno)
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise FormatError(f"cannot parse coordinates {body!r}", path, lineno) from None
    return np.array(rows, dtype=float).reshape(-1, 3)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _ply_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise FormatError("missing 'ply' magic", path, 1)
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise FormatError("unterminated PLY header", path, lineno)
        parts = raw.decode("ascii", "replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if not elements:
                raise FormatError("property before element", path, lineno)
            elements[-1][2].append(parts[1:])
        elif parts[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise FormatError(f"unsupported PLY format {fmt!r}", path)
    return fmt, elements, lineno


def _ascii_ply(tokens, elements):
    out = {}
    pos = 0
    for name, count, props in elements:
        data = {p[-1]: [] for p in props}
        for _ in range(count):
            for p in props:
                if p[0] == "list":
                    n = int(tokens[pos])
                    pos += 1
                    data[p[-1]].append([float(t) for t in tokens[pos:pos + n]])
                    pos += n
                else:
                    data[p[-1]].append(float(tokens[pos]))
                    pos += 1
        out[name] = {k: (np.array(v) if v and not isinstance(v[0], list) else v)
                     for k, v in data.items()}
    return out


def _read_ply_elements(path):
    """All PLY elements as {name: dict of property arrays (lists for list props)}."""
    out = {}
    with open(path, "rb") as fh:
        fmt, elements, lineno = _ply_header(fh, path)
        endian = ">" if fmt == "binary_big_endian" else "<"
        text = fh.read()
    if fmt == "ascii":
        try:
            return _ascii_ply(text.split(), elements)
        except (ValueError, IndexError):
            raise FormatError("malformed or truncated ASCII PLY body", path) from None
    pos = 0
    for name, count, props in elements:
        if all(p[0] != "list" for p in props):
            dt = np.dtype([(p[1], endian + _PLY_TYPES[p[0]]) for p in props])
            arr = np.frombuffer(text, dtype=dt, count=count, offset=pos)
            pos += count * dt.itemsize
            out[name] = {p[1]: arr[p[1]].astype(float) for p in props}
            continue
        if len(props) == 1 and count:
            # fast path: every list has the same length as the first one
            p = props[0]
            ct = np.dtype(endian + _PLY_TYPES[p[1]])
            it = np.dtype(endian + _PLY_TYPES[p[2]])
            n = int(np.frombuffer(text, ct, 1, pos)[0])
            dt = np.dtype([("n", ct), ("i", it, (n,))])
            if len(text) - pos >= count * dt.itemsize:
                arr = np.frombuffer(text, dt, count, pos)
                if np.all(arr["n"] == n):
                    out[name] = {p[-1]: arr["i"].astype(np.int64)}
                    pos += count * dt.itemsize
                    continue
        data = {p[-1]: [] for p in props}
        for _ in range(count):
            for p in props:
                if p[0] == "list":
                    ct = np.dtype(endian + _PLY_TYPES[p[1]])
                    it = np.dtype(endian + _PLY_TYPES[p[2]])
                    n = int(np.frombuffer(text, ct, 1, pos)[0])
                    pos += ct.itemsize
                    data[p[-1]].append(np.frombuffer(text, it, n, pos).tolist())
                    pos += n * it.itemsize
                else:
                    t = np.dtype(endian + _PLY_TYPES[p[0]])
                    data[p[-1]].append(float(np.frombuffer(text, t, 1, pos)[0]))
                    pos += t.itemsize
        out[name] = data
    return out


def load_point_cloud(path) -> np.ndarray:
    """(N, 3) points from ``x y z`` text lines (``#`` comments) or a PLY file."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        magic = fh.read(3)
    if magic == b"ply":
        el = _read_ply_elements(path)
        if "vertex" not in el:
            raise FormatError("PLY file has no vertex element", path)
        v = el["vertex"]
        try:
            return np.column_stack([np.asarray(v[k], float) for k in ("x", "y", "z")])
        except KeyError:
            raise FormatError("PLY vertices need x, y, z properties", path) from None
    return _read_ascii_points(path)


def save_point_cloud(points, path, header: str | None = None):
    """Write ``x y z`` lines with 17 significant digits (exact round trip)."""
    pts = np.asarray(points, float).reshape(-1, 3)
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for p in pts:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


# ----------------------------------------------------------------- volumes


def read_sidecar(path) -> dict:
    """``key = value...`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" in body:
                key, val = body.split("=", 1)
            else:
                parts = body.split(None, 1)
                if len(parts) != 2:
                    raise FormatError(f"expected 'key = value', got {body!r}", path, lineno)
                key, val = parts
            try:
                out[key.strip()] = [float(v) for v in val.split()]
            except ValueError:
                raise FormatError(f"non-numeric value for {key.strip()!r}", path, lineno) from None
    return out


def _need(side, keys, path):
    missing = [k for k in keys if k not in side]
    if missing:
        raise FormatError(f"sidecar is missing key(s) {', '.join(missing)}", path)
    return [side[k][0] for k in keys]


def _geometry(side, path):
    sp = _need(side, ["spacing_x", "spacing_y", "spacing_z"], path)
    org = _need(side, ["origin_x", "origin_y", "origin_z"], path)
    return np.array(sp), np.array(org)


def read_pgm(path):
    """Binary graymap (P5) as (array[rows, cols], maxval)."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated graymap header", path)
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError("not a binary graymap (P5)", path)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("bad graymap header", path) from None
    if not 0 < maxval < 65536 or w <= 0 or h <= 0:
        raise FormatError("bad graymap dimensions or maxval", path)
    pos += 1
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h
    if len(data) - pos < n * dt.itemsize:
        raise FormatError("graymap pixel data is truncated", path)
    img = np.frombuffer(data, dt, n, pos).reshape(h, w)
    return img, maxval


def write_pgm(path, img, maxval: int = 65535):
    img = np.asarray(img)
    h, w = img.shape
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=dt).tobytes())


def _sidecar_for_raw(path):
    for cand in (path + ".txt", os.path.splitext(path)[0] + ".txt"):
        if os.path.exists(cand):
            return cand
    raise FormatError("raw volume needs a sidecar '<file>.txt'", path)


def load_volume(path) -> VoxelVolume:
    """Directory of P5 slices (sorted = increasing z) or raw float32 + sidecar.

    Slice images are ``ny`` rows by ``nx`` columns. Graymaps are scaled by
    their maxval; raw data by the sidecar's ``min``/``max`` when present,
    otherwise by the data range.
    """
    path = os.fspath(path)
    if os.path.isdir(path):
        side_path = os.path.join(path, SIDECAR_NAME)
        if not os.path.exists(side_path):
            raise FormatError(f"slice directory needs a sidecar {SIDECAR_NAME}", path)
        side = read_sidecar(side_path)
        spacing, origin = _geometry(side, side_path)
        files = sorted(glob.glob(os.path.join(path, "*.pgm")))
        if not files:
            raise FormatError("no .pgm slices found", path)
        slices = []
        shape = None
        for f in files:
            img, maxval = read_pgm(f)
            if shape is None:
                shape = img.shape
            elif img.shape != shape:
                raise FormatError(
                    f"slice is {img.shape[1]}x{img.shape[0]}, expected {shape[1]}x{shape[0]}", f)
            slices.append((img.astype(np.float32) / np.float32(maxval)).T)
        return VoxelVolume(np.stack(slices, axis=2), spacing, origin)
    side_path = _sidecar_for_raw(path)
    side = read_sidecar(side_path)
    spacing, origin = _geometry(side, side_path)
    if "dims" not in side or len(side["dims"]) != 3:
        raise FormatError("sidecar is missing key dims (three integers)", side_path)
    nx, ny, nz = (int(v) for v in side["dims"])
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != nx * ny * nz:
        raise FormatError(f"raw file holds {raw.size} values, dims imply {nx * ny * nz}", path)
    vol = raw.reshape(nz, ny, nx).transpose(2, 1, 0)
    lo = side["min"][0] if "min" in side else float(vol.min())
    hi = side["max"][0] if "max" in side else float(vol.max())
    scale = hi - lo if hi > lo else 1.0
    vals = ((vol.astype(np.float64) - lo) / scale).astype(np.float32)
    return VoxelVolume(np.ascontiguousarray(vals), spacing, origin)


def _write_geometry(fh, volume):
    for a, v in zip("xyz", volume.spacing):
        fh.write(f"spacing_{a} = {v:.17g}\n")
    for a, v in zip("xyz", volume.origin):
        fh.write(f"origin_{a} = {v:.17g}\n")


def save_volume_raw(volume: VoxelVolume, path):
    """Raw little-endian float32 (x fastest) plus ``<path>.txt`` sidecar."""
    f = np.asarray(volume.intensities, np.float32)
    f.transpose(2, 1, 0).astype("<f4").tofile(path)
    lo, hi = float(f.min()), float(f.max())
    if lo >= 0 and hi <= 1:
        lo, hi = 0.0, 1.0
    with open(path + ".txt", "w", encoding="utf-8") as fh:
        nx, ny, nz = f.shape
        fh.write(f"dims = {nx} {ny} {nz}\n")
        _write_geometry(fh, volume)
        fh.write(f"min = {lo:.17g}\nmax = {hi:.17g}\n")


def save_volume_pgm(volume: VoxelVolume, directory, maxval: int = 65535):
    """One 16-bit graymap per z-slice plus the sidecar."""
    os.makedirs(directory, exist_ok=True)
    f = np.asarray(volume.intensities, np.float64)
    lo, hi = float(f.min()), float(f.max())
    if lo < 0 or hi > 1:
        f = (f - lo) / (hi - lo if hi > lo else 1.0)
    q = np.rint(np.clip(f, 0, 1) * maxval)
    width = max(4, len(str(f.shape[2] - 1)))
    for k in range(f.shape[2]):
        write_pgm(os.path.join(directory, f"slice_{k:0{width}d}.pgm"), q[:, :, k].T, maxval)
    with open(os.path.join(directory, SIDECAR_NAME), "w", encoding="utf-8") as fh:
        _write_geometry(fh, volume)


# ------------------------------------------------------------------ meshes


def _mesh_format(path, fmt):
    if fmt is None:
        ext = os.path.splitext(os.fspath(path))[1].lower()
        fmt = {".obj": "obj", ".ply": "ply"}.get(ext)
        if fmt is None:
            raise ValueError(f"cannot infer mesh format from {path!r}; use .obj or .ply")
    if fmt in ("ply", "ply-binary"):
        return "ply"
    if fmt != "obj":
        raise ValueError(f"unknown mesh format {fmt!r}")
    return fmt


def save_mesh(mesh: TriangleMesh, path, fmt: str | None = None):
    """Wavefront OBJ text or little-endian binary PLY."""
    fmt = _mesh_format(path, fmt)
    v = mesh.vertices
    t = mesh.triangles
    if fmt == "obj":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {mesh.provenance} mesh: {len(v)} vertices, {len(t)} triangles\n")
            fh.writelines(f"v {a:.9g} {b:.9g} {c:.9g}\n" for a, b, c in v)
            fh.writelines(f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in t)
        return
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"comment provenance {mesh.provenance}\n"
        f"element vertex {len(v)}\nproperty float x\nproperty float y\nproperty float z\n"
        f"element face {len(t)}\nproperty list uchar int vertex_indices\nend_header\n"
    )
    faces = np.zeros(len(t), dtype=[("n", "u1"), ("i", "<i4", (3,))])
    faces["n"] = 3
    faces["i"] = t
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.asarray(v, "<f4").tobytes())
        fh.write(faces.tobytes())


def load_mesh(path) -> TriangleMesh:
    """Read an OBJ (v/f records) or PLY triangle mesh."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        magic = fh.read(3)
    if magic == b"ply":
        el = _read_ply_elements(path)
        v = el.get("vertex", {})
        verts = (np.column_stack([v["x"], v["y"], v["z"]]) if v and len(v["x"])
                 else np.zeros((0, 3)))
        f = el.get("face", {})
        lists = next(iter(f.values())) if f else []
        tris = np.array(lists, dtype=np.int64).reshape(-1, 3)
        return TriangleMesh(verts, tris)
    verts, tris = [], []
    prov = "implicit"
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#" and len(parts) > 1 and lineno == 1:
                prov = parts[1]
            elif parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise FormatError("only triangular faces are supported", path, lineno)
                tris.append([i - 1 for i in idx])
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(tris, np.int64).reshape(-1, 3),
                        prov)


# ---------------------------------------------------------------- archives


def _pack_pu(prefix, field: PUField, out: dict):
    subs = field.subdomains
    out[prefix + "sub_center"] = field.centers
    out[prefix + "sub_radius"] = field.radii
    out[prefix + "offsets"] = field.offsets
    out[prefix + "centers"] = np.vstack([s.local.centers for s in subs])
    out[prefix + "lam"] = np.concatenate([s.local.lam for s in subs])
    out[prefix + "tail"] = np.array([s.local.a for s in subs], float)
    out[prefix + "origin"] = np.array([s.local.origin for s in subs], float)
    out[prefix + "rho"] = np.array([s.local.rho for s in subs], float)
    out[prefix + "kkt"] = np.array([s.local.kkt_residual for s in subs], float)


def _unpack_pu(prefix, z, dim) -> PUField:
    kernel = kernel_for(dim)
    off = z[prefix + "offsets"]
    subs = []
    for i in range(len(off) - 1):
        sl = slice(int(off[i]), int(off[i + 1]))
        local = LocalRBF(kernel, z[prefix + "centers"][sl], z[prefix + "lam"][sl],
                         z[prefix + "tail"][i], float(z[prefix + "rho"][i]),
                         z[prefix + "origin"][i], float(z[prefix + "kkt"][i]))
        subs.append(Subdomain(z[prefix + "sub_center"][i], float(z[prefix + "sub_radius"][i]),
                              local))
    return PUField(subs, dim)


def _spline_arrays(prefix, s: CubicSpline3, out):
    out[prefix + "knots"] = s.knots
    out[prefix + "coef"] = s.coefficients


def file_digest(path, chunk=1 << 20) -> str:
    h = hashlib.sha256()
    if os.path.isdir(path):
        for f in sorted(os.listdir(path)):
            h.update(f.encode())
            h.update(file_digest(os.path.join(path, f)).encode())
        return h.hexdigest()
    with open(path, "rb") as fh:
        while True:
            b = fh.read(chunk)
            if not b:
                break
            h.update(b)
    return h.hexdigest()


def _pack_frame(fr: LeafFrame, out):
    _spline_arrays("frame_medial_", fr.medial, out)
    _spline_arrays("frame_normal_", fr.normal, out)
    out["frame_params"] = fr.params
    out["frame_radius"] = np.array([fr.radius])


def _unpack_frame(z) -> LeafFrame:
    return LeafFrame(
        CubicSpline3.from_coefficients(z["frame_medial_knots"], z["frame_medial_coef"]),
        CubicSpline3.from_coefficients(z["frame_normal_knots"], z["frame_normal_coef"]),
        z["frame_params"], float(z["frame_radius"][0]),
    )


def _pack_heightmap(hm: HeightMap, out):
    _pack_pu("hm_", hm.field, out)
    out["hm_domain"] = np.array([hm.domain[0], hm.domain[1]], float)
    out["hm_sites"] = hm.sites
    if hm.shape is not None:
        out["hm_shape_points"] = hm.shape.points
        out["hm_shape_triangles"] = hm.shape.triangles
        out["hm_shape_alpha"] = np.array([hm.shape.alpha])


def _unpack_heightmap(z) -> HeightMap:
    shape = None
    if "hm_shape_points" in z:
        shape = AlphaShape2D(z["hm_shape_points"], z["hm_shape_triangles"],
                             float(z["hm_shape_alpha"][0]))
    hd = z["hm_domain"]
    return HeightMap(_unpack_pu("hm_", z, 2), (hd[0], hd[1]), z["hm_sites"], shape)


def _pack_micro(mp: MicroPatch, out):
    _pack_pu("micro_", mp.field, out)
    out["micro_extent"] = np.array([mp.extent[0], mp.extent[1]], float)
    out["micro_f_surface"] = np.array([mp.f_surface])
    out["micro_rotation"] = mp.rotation
    out["micro_translation"] = mp.translation


def _unpack_micro(z) -> MicroPatch:
    ext = z["micro_extent"]
    return MicroPatch(_unpack_pu("micro_", z, 3), (ext[0], ext[1]),
                      float(z["micro_f_surface"][0]), z["micro_rotation"],
                      z["micro_translation"])


def _pack_layout(lay: TilingLayout, out):
    out["layout_tile_extent"] = lay.tile_extent
    out["layout_qlo"] = lay.qlo
    out["layout_qhi"] = lay.qhi
    out["layout_domain"] = np.array([lay.domain[0], lay.domain[1]], float)
    out["layout_displacements"] = lay.displacements


def _unpack_layout(z) -> TilingLayout:
    ld = z["layout_domain"]
    return TilingLayout(z["layout_tile_extent"], z["layout_qlo"], z["layout_qhi"],
                        (ld[0], ld[1]))


_PARTS = {
    "frame": (_pack_frame, _unpack_frame),
    "heightmap": (_pack_heightmap, _unpack_heightmap),
    "micro": (_pack_micro, _unpack_micro),
    "layout": (_pack_layout, _unpack_layout),
}


def save_parts(path, metadata: dict | None = None, **parts):
    """Write any subset of ``frame``, ``heightmap``, ``micro``, ``layout`` to one ``.npz``.

    Floats are stored little-endian float64, integers int64; the JSON
    header carries the format version, the parts present and metadata.
    """
    out = {}
    for name, obj in parts.items():
        if name not in _PARTS:
            raise ValueError(f"unknown archive part {name!r}")
        _PARTS[name][0](obj, out)
    for k, v in out.items():
        a = np.asarray(v)
        out[k] = a.astype("<i8") if a.dtype.kind in "iu" else a.astype("<f8")
    header = {"format": "leafsurf-coefficients", "version": ARCHIVE_VERSION,
              "parts": sorted(parts), "metadata": metadata or {}}
    out["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **out)


def read_archive_header(path) -> dict:
    try:
        with np.load(path) as z:
            header = json.loads(bytes(z["header"]).decode())
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"not a coefficient archive ({exc})", path) from None
    if header.get("format") != "leafsurf-coefficients":
        raise FormatError("not a coefficient archive", path)
    if header.get("version") != ARCHIVE_VERSION:
        raise FormatError(f"unsupported archive version {header.get('version')}", path)
    return header


def load_parts(path, required=()) -> dict:
    """Parts stored in an archive, as a dict keyed by part name."""
    header = read_archive_header(path)
    with np.load(path) as zf:
        z = {k: zf[k] for k in zf.files}
    have = header.get("parts", [])
    missing = [r for r in required if r not in have]
    if missing:
        raise FormatError(f"archive lacks {', '.join(missing)}", path)
    return {name: _PARTS[name][1](z) for name in have}


def save_archive(G: MultiScaleField, path, metadata: dict | None = None):
    """Single ``.npz`` holding every coefficient needed to evaluate G."""
    save_parts(path, metadata, frame=G.frame, heightmap=G.heightmap, micro=G.micro,
               layout=G.layout)


def load_archive(path) -> MultiScaleField:
    p = load_parts(path, required=tuple(_PARTS))
    return MultiScaleField(p["frame"], p["heightmap"], p["micro"], p["layout"])
