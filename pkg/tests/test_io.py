import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from leafsurf import io
from leafsurf.config import PipelineConfig, load_config, parse_config_text
from leafsurf.errors import ConfigError, FormatError
from leafsurf.frame import leaf_to_world
from leafsurf.meshing import TriangleMesh
from leafsurf.reconstruction import VoxelVolume


# ------------------------------------------------------------ point clouds


def test_cloud_text_with_comments(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("# header\n1 2 3\n\n4.5 -1e-3 6   # trailing\n")
    pts = io.load_point_cloud(p)
    np.testing.assert_array_equal(pts, [[1, 2, 3], [4.5, -1e-3, 6]])


@pytest.mark.parametrize("body,line", [("1 2 3\n1 2\n", 2), ("1 2 3\n\n1 2 x\n", 3)])
def test_cloud_errors_carry_line_numbers(tmp_path, body, line):
    p = tmp_path / "bad.xyz"
    p.write_text(body)
    with pytest.raises(FormatError) as exc:
        io.load_point_cloud(p)
    assert exc.value.line == line
    assert f":{line}:" in str(exc.value)


def test_empty_cloud_is_empty(tmp_path):
    p = tmp_path / "e.xyz"
    p.write_text("# nothing\n")
    assert io.load_point_cloud(p).shape == (0, 3)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(*[st.floats(allow_nan=False, allow_infinity=False, width=64)] * 3),
                min_size=1, max_size=20))
def test_cloud_round_trip_is_exact(tmp_path_factory, rows):
    p = tmp_path_factory.mktemp("rt") / "c.xyz"
    pts = np.array(rows, float)
    io.save_point_cloud(pts, p, "two\nlines")
    np.testing.assert_array_equal(io.load_point_cloud(p), pts)


def _write_ply(path, pts, fmt="binary_little_endian", extra_faces=False):
    head = f"ply\nformat {fmt} 1.0\ncomment test\nelement vertex {len(pts)}\n"
    head += "property double x\nproperty double y\nproperty double z\nproperty uchar red\n"
    if extra_faces:
        head += "element face 1\nproperty list uchar int vertex_indices\n"
    head += "end_header\n"
    with open(path, "wb") as fh:
        fh.write(head.encode())
        if fmt == "ascii":
            for p in pts:
                fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g} 7\n".encode())
            if extra_faces:
                fh.write(b"3 0 1 2\n")
        else:
            e = "<" if fmt == "binary_little_endian" else ">"
            rec = np.zeros(len(pts), dtype=[("x", e + "f8"), ("y", e + "f8"), ("z", e + "f8"),
                                            ("r", "u1")])
            rec["x"], rec["y"], rec["z"] = pts.T
            fh.write(rec.tobytes())


@pytest.mark.parametrize("fmt", ["ascii", "binary_little_endian", "binary_big_endian"])
def test_cloud_from_ply(tmp_path, fmt):
    pts = np.random.default_rng(0).normal(size=(50, 3))
    p = tmp_path / "c.ply"
    _write_ply(p, pts, fmt, extra_faces=fmt == "ascii")
    np.testing.assert_array_equal(io.load_point_cloud(p), pts)


def test_ply_without_xyz(tmp_path):
    p = tmp_path / "c.ply"
    p.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float s\nend_header\n1\n")
    with pytest.raises(FormatError, match="x, y, z"):
        io.load_point_cloud(p)


def test_ply_truncated_ascii_body(tmp_path):
    p = tmp_path / "c.ply"
    p.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\n"
                  b"property float y\nproperty float z\nend_header\n1 2 3\n4 5\n")
    with pytest.raises(FormatError, match="truncated"):
        io.load_point_cloud(p)


def test_ply_unterminated_header(tmp_path):
    p = tmp_path / "c.ply"
    p.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\n")
    with pytest.raises(FormatError, match="unterminated"):
        io.load_point_cloud(p)


# ----------------------------------------------------------------- volumes


def _volume(shape=(5, 4, 3), seed=1):
    f = np.random.default_rng(seed).uniform(0.05, 0.95, shape).astype(np.float32)
    return VoxelVolume(f, np.array([0.5, 0.25, 2.0]), np.array([1.0, -2.0, 0.125]))


def test_raw_volume_round_trip(tmp_path):
    vol = _volume()
    p = str(tmp_path / "v.raw")
    io.save_volume_raw(vol, p)
    back = io.load_volume(p)
    np.testing.assert_array_equal(back.intensities, vol.intensities)
    np.testing.assert_array_equal(back.spacing, vol.spacing)
    np.testing.assert_array_equal(back.origin, vol.origin)


def test_raw_volume_is_x_fastest(tmp_path):
    vol = _volume((3, 2, 2))
    p = str(tmp_path / "v.raw")
    io.save_volume_raw(vol, p)
    raw = np.fromfile(p, "<f4")
    assert raw[1] == vol.intensities[1, 0, 0]
    assert raw[3] == vol.intensities[0, 1, 0]
    assert raw[6] == vol.intensities[0, 0, 1]


def test_raw_volume_rescaled_by_sidecar(tmp_path):
    p = tmp_path / "v.raw"
    np.array([0, 500, 1000, 250], "<f4").tofile(p)
    (tmp_path / "v.raw.txt").write_text(
        "dims = 2 2 1\nspacing_x = 1\nspacing_y 1\nspacing_z = 1\n"
        "origin_x = 0\norigin_y = 0\norigin_z = 0\nmin = 0\nmax = 1000\n")
    v = io.load_volume(str(p))
    np.testing.assert_allclose(v.intensities[:, :, 0], [[0, 1], [0.5, 0.25]])


def test_raw_volume_size_mismatch(tmp_path):
    vol = _volume()
    p = str(tmp_path / "v.raw")
    io.save_volume_raw(vol, p)
    with open(p + ".txt", "a") as fh:
        fh.write("dims = 5 4 4\n")
    with pytest.raises(FormatError, match="dims imply 80"):
        io.load_volume(p)


def test_raw_volume_without_sidecar(tmp_path):
    p = tmp_path / "v.raw"
    np.zeros(8, "<f4").tofile(p)
    with pytest.raises(FormatError, match="sidecar"):
        io.load_volume(str(p))


@pytest.mark.parametrize("drop", ["spacing_y", "origin_z", "dims"])
def test_sidecar_missing_keys(tmp_path, drop):
    vol = _volume()
    p = str(tmp_path / "v.raw")
    io.save_volume_raw(vol, p)
    lines = open(p + ".txt").read().splitlines()
    with open(p + ".txt", "w") as fh:
        fh.write("\n".join(ln for ln in lines if not ln.startswith(drop)) + "\n")
    with pytest.raises(FormatError, match=drop):
        io.load_volume(p)


def test_sidecar_non_numeric(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("# geometry\nspacing_x = 1\nspacing_y = abc\n")
    with pytest.raises(FormatError) as exc:
        io.read_sidecar(p)
    assert exc.value.line == 3


def test_pgm_round_trip(tmp_path):
    img = np.arange(12, dtype=np.uint16).reshape(3, 4) * 5000
    p = tmp_path / "a.pgm"
    io.write_pgm(p, img)
    back, maxval = io.read_pgm(p)
    assert maxval == 65535
    np.testing.assert_array_equal(back, img)


def test_pgm_header_comments_and_8bit(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x10\xff")
    img, maxval = io.read_pgm(p)
    assert maxval == 255
    np.testing.assert_array_equal(img, [[16, 255]])


@pytest.mark.parametrize("data,msg", [
    (b"P2\n1 1\n255\n0", "P5"),
    (b"P5\n2 2\n255\n\x00", "truncated"),
    (b"P5\n0 2\n255\n", "dimensions"),
])
def test_pgm_errors(tmp_path, data, msg):
    p = tmp_path / "bad.pgm"
    p.write_bytes(data)
    with pytest.raises(FormatError, match=msg):
        io.read_pgm(p)


def test_pgm_slice_directory_round_trip(tmp_path):
    vol = _volume((6, 5, 4))
    d = tmp_path / "slices"
    io.save_volume_pgm(vol, d)
    assert len(list(d.glob("*.pgm"))) == 4
    back = io.load_volume(d)
    assert back.dims == (6, 5, 4)
    np.testing.assert_allclose(back.intensities, vol.intensities, atol=1 / 65535)
    np.testing.assert_array_equal(back.origin, vol.origin)


def test_pgm_slices_of_mixed_size(tmp_path):
    vol = _volume((6, 5, 3))
    d = tmp_path / "slices"
    io.save_volume_pgm(vol, d)
    io.write_pgm(d / "slice_0001.pgm", np.zeros((4, 4), np.uint16))
    with pytest.raises(FormatError, match="expected 6x5"):
        io.load_volume(d)


def test_pgm_directory_needs_sidecar(tmp_path):
    io.write_pgm(tmp_path / "s0.pgm", np.zeros((2, 2), np.uint16))
    with pytest.raises(FormatError, match="sidecar"):
        io.load_volume(tmp_path)


# ------------------------------------------------------------------ meshes


def _sphere_mesh(n=200):
    rng = np.random.default_rng(3)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return TriangleMesh(v, ConvexHull(v).simplices)


@pytest.mark.parametrize("ext", [".obj", ".ply"])
@pytest.mark.parametrize("mesh", [
    TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]]),
    TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))),
    _sphere_mesh(),
], ids=["triangle", "empty", "sphere"])
def test_mesh_round_trip(tmp_path, ext, mesh):
    p = tmp_path / ("m" + ext)
    io.save_mesh(mesh, p)
    back = io.load_mesh(p)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)
    np.testing.assert_allclose(back.vertices, mesh.vertices, atol=1e-7)


def test_obj_provenance_recorded(tmp_path):
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], "heightmap")
    io.save_mesh(m, tmp_path / "m.obj")
    assert io.load_mesh(tmp_path / "m.obj").provenance == "heightmap"


def test_obj_rejects_quads(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(FormatError) as exc:
        io.load_mesh(p)
    assert exc.value.line == 5


def test_mesh_format_inference():
    m = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(ValueError, match="infer"):
        io.save_mesh(m, "mesh.stl")
    with pytest.raises(ValueError, match="unknown"):
        io.save_mesh(m, "mesh.obj", fmt="stl")


# ---------------------------------------------------------------- archives


def test_archive_round_trip_is_bit_identical(tmp_path, small_leaf):
    _, G, _ = small_leaf
    p = tmp_path / "a.npz"
    io.save_archive(G, p, {"note": "x"})
    G2 = io.load_archive(p)
    rng = np.random.default_rng(4)
    t = rng.uniform(1.0, 7.0, 500)
    y = np.column_stack([t, rng.uniform(-0.5, 0.5, 500), rng.uniform(-0.1, 0.1, 500)])
    x = leaf_to_world(G.frame, y)
    np.testing.assert_array_equal(G2(x), G(x))
    assert io.read_archive_header(p)["metadata"] == {"note": "x"}
    # saving the restored field reproduces the same coefficient set
    io.save_archive(G2, tmp_path / "b.npz", {"note": "x"})
    with np.load(p) as a, np.load(tmp_path / "b.npz") as b:
        assert sorted(a.files) == sorted(b.files)
        for k in a.files:
            np.testing.assert_array_equal(a[k], b[k])


def test_archive_parts_subset(tmp_path, small_leaf):
    _, G, _ = small_leaf
    p = tmp_path / "f.npz"
    io.save_parts(p, frame=G.frame)
    parts = io.load_parts(p)
    assert list(parts) == ["frame"]
    s = np.linspace(0, G.frame.length, 7)
    np.testing.assert_array_equal(parts["frame"].medial(s), G.frame.medial(s))
    with pytest.raises(FormatError, match="lacks"):
        io.load_parts(p, required=("frame", "micro"))
    with pytest.raises(FormatError, match="lacks"):
        io.load_archive(p)
    with pytest.raises(ValueError, match="unknown archive part"):
        io.save_parts(tmp_path / "x.npz", bogus=1)


def test_archive_header_errors(tmp_path):
    p = tmp_path / "junk.npz"
    p.write_bytes(b"not a zip")
    with pytest.raises(FormatError, match="not a coefficient archive"):
        io.read_archive_header(p)
    q = tmp_path / "other.npz"
    np.savez(q, header=np.frombuffer(b'{"format": "x"}', np.uint8))
    with pytest.raises(FormatError, match="not a coefficient archive"):
        io.read_archive_header(q)
    r = tmp_path / "future.npz"
    np.savez(r, header=np.frombuffer(b'{"format": "leafsurf-coefficients", "version": 99}',
                                     np.uint8))
    with pytest.raises(FormatError, match="version 99"):
        io.read_archive_header(r)


def test_file_digest(tmp_path):
    a = tmp_path / "a"
    a.write_bytes(b"abc")
    assert io.file_digest(a) == \
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    d1 = io.file_digest(tmp_path)
    (tmp_path / "b").write_bytes(b"")
    assert io.file_digest(tmp_path) != d1


# ------------------------------------------------------------------ config


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "leaf.cfg"
    p.write_text("# comment\ncloud = pts.xyz\nrho-macro = 0.5\ncapacity = 400\nalpha = none\n")
    cfg = load_config(p, {"capacity": "900", "h": 0.01})
    assert cfg.cloud == os.path.join(str(tmp_path), "pts.xyz")
    assert cfg.rho_macro == 0.5
    assert cfg.capacity == 900
    assert cfg.h == 0.01
    assert cfg.alpha is None


def test_config_text_round_trip():
    cfg = PipelineConfig(cloud="/a/b", rho_macro=0.1 + 0.2, capacity=123, alpha=0.25)
    assert PipelineConfig(**parse_config_text(cfg.to_text())) == cfg


@pytest.mark.parametrize("text,msg", [
    ("bogus = 1\n", "unknown configuration key"),
    ("capacity 12\n", "expected 'key = value'"),
    ("capacity = 1.5\n", "cannot parse"),
    ("rho_micro = nan\n", "cannot parse"),
    ("overlap = 1\n", "overlap must exceed 1"),
    ("capacity = -3\n", "must be positive"),
    ("mesh_format = stl\n", "mesh_format"),
    ("f_surface = 1.5\n", "f_surface"),
])
def test_config_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        PipelineConfig(**parse_config_text(text))


def test_config_unknown_override():
    with pytest.raises(ConfigError, match="unknown"):
        load_config(None, {"nope": "1"})
