import numpy as np
import pytest

from conftest import grid_mesh
from oracles import random_scene, raster_oracle
from fer4d.errors import DegenerateMesh, MissingColors
from fer4d.mesh import Mesh
from fer4d.projection import (
    GeomImage,
    ViewAngle,
    Window,
    enhance_depth,
    clahe_mappings,
    rasterize,
    read_netpbm,
    render_depth,
    render_texture,
    render_views,
    rotate_yaw,
    write_pbm,
    write_pgm,
    write_ppm,
)

FP = ViewAngle.from_yaw(0.0)
K = 32
# world x = u, world y = K - v: pixel space and world space line up
PIXEL_WINDOW = Window(0.0, float(K), float(K))


def tri_mesh(corners_uv, z, colors=None):
    uv = np.asarray(corners_uv, dtype=np.float64)
    z = np.broadcast_to(np.asarray(z, dtype=np.float64), (len(uv),))
    verts = np.column_stack([uv[:, 0], K - uv[:, 1], z])
    faces = np.arange(len(uv)).reshape(-1, 3)
    return Mesh(verts, faces, colors)


def test_view_angle_tags():
    assert ViewAngle.from_yaw(-30).profile_tag == "RP"
    assert ViewAngle.from_yaw(0).profile_tag == "FP"
    assert ViewAngle.from_yaw(30).profile_tag == "LP"
    with pytest.raises(ValueError):
        ViewAngle(90.0, "LP")
    with pytest.raises(ValueError):
        ViewAngle(10.0, "FP")


@pytest.mark.parametrize("seed", range(10))
def test_rasterize_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 3
    uv, z = random_scene(rng, K, n)
    faces = np.arange(3 * n).reshape(n, 3)
    ras = rasterize(uv.reshape(-1, 2), z.reshape(-1), faces, K)
    tri, depth = raster_oracle(uv, z, K)
    np.testing.assert_array_equal(ras.triangle, tri)
    np.testing.assert_allclose(ras.depth, depth, rtol=1e-12, atol=0)


def test_shared_edge_covered_once():
    # a square split along its diagonal: every pixel center inside the square
    # belongs to exactly one triangle and the split leaves no hole
    uv = np.array([[4, 4], [20, 4], [20, 20], [4, 20]], dtype=float)
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    ras = rasterize(uv, np.zeros(4), faces, K)
    assert ras.covered.sum() == 16 * 16
    tri, _ = raster_oracle(uv[faces], np.zeros((2, 3)), K)
    np.testing.assert_array_equal(ras.triangle, tri)


def test_flat_triangle_depth_and_coverage():
    corners = [[3.2, 5.1], [27.7, 9.4], [11.0, 29.3]]
    img = render_depth(tri_mesh(corners, 4.0), FP, K, window=PIXEL_WINDOW)
    tri, _ = raster_oracle([corners], [[4.0, 4.0, 4.0]], K)
    np.testing.assert_array_equal(~img.mask, tri >= 0)
    assert np.all(img.pixels[~img.mask] == 1.0)
    assert np.all(img.pixels[img.mask] == 0.0)


def test_occlusion_near_wins():
    a = [[2.0, 2.0], [30.0, 2.0], [2.0, 30.0]]
    b = [[8.0, 8.0], [30.0, 8.0], [8.0, 30.0]]
    colors = np.array([[1, 0, 0]] * 3 + [[0, 0, 1]] * 3, dtype=float)
    mesh = Mesh(
        np.column_stack([np.array(a + b)[:, 0], K - np.array(a + b)[:, 1], [2.0] * 3 + [1.0] * 3]),
        [[0, 1, 2], [3, 4, 5]],
        colors,
    )
    depth = render_depth(mesh, FP, K, window=PIXEL_WINDOW)
    tex = render_texture(mesh, FP, K, window=PIXEL_WINDOW)
    ta, _ = raster_oracle([a], [[2.0] * 3], K)
    tb, _ = raster_oracle([b], [[1.0] * 3], K)
    both = (ta >= 0) & (tb >= 0)
    assert both.any()
    # near triangle (z=1) normalizes to 1, far to 0
    assert np.all(depth.pixels[both] == 1.0)
    assert np.all(tex.pixels[both] == [0, 0, 1])
    assert np.all(tex.pixels[(ta >= 0) & ~both] == [1, 0, 0])
    np.testing.assert_array_equal(tex.mask, depth.mask)


def test_texture_constant_and_barycenter():
    corners = np.array([[0.0, 0.0], [30.0, 0.0], [0.0, 30.0]])
    red = render_texture(tri_mesh(corners, 1.0, np.tile([1.0, 0, 0], (3, 1))), FP, K, window=PIXEL_WINDOW)
    assert np.all(red.pixels[~red.mask] == [1.0, 0, 0])
    # barycenter at (10, 10) is the pixel center of (9.5, 9.5) -> shift so it lands on (10.5, 10.5)
    shifted = corners + 0.5
    rgb = render_texture(tri_mesh(shifted, 1.0, np.eye(3)), FP, K, window=PIXEL_WINDOW)
    np.testing.assert_allclose(rgb.pixels[10, 10], [1 / 3, 1 / 3, 1 / 3], atol=1e-6)


def test_texture_needs_colors():
    with pytest.raises(MissingColors):
        render_texture(grid_mesh(4), FP, K)


def test_degenerate_mesh():
    collinear = Mesh(np.array([[0, 0, 0], [1, 1, 0], [2, 2, 0.0]]), [[0, 1, 2]])
    with pytest.raises(DegenerateMesh):
        render_depth(collinear, FP, K)
    with pytest.raises(ValueError):
        render_depth(grid_mesh(4), FP, 4)


def pyramid(n=21):
    xs = np.linspace(-1, 1, n)
    X, Y = np.meshgrid(xs, xs)
    Z = np.abs(X) + 0.5 * Y  # piecewise linear, so each grid cell is planar
    m = grid_mesh(n)
    return Mesh(np.column_stack([X.ravel(), Y.ravel(), Z.ravel()]), m.faces, np.column_stack([(X.ravel() + 1) / 2] * 3))


def test_mirror_symmetric_mesh_renders_symmetric():
    out = render_depth(pyramid(), FP, K)
    img, mask = out.pixels, out.mask
    # silhouettes agree up to pixels on the boundary; shared pixels agree in value
    assert (mask != mask[:, ::-1]).sum() <= 2 * K
    both = ~mask & ~mask[:, ::-1]
    np.testing.assert_allclose(img[both], img[:, ::-1][both], atol=1e-9)


def test_depth_normalization_spans_unit_interval():
    img = render_depth(pyramid(), ViewAngle.from_yaw(20.0), K)
    fg = img.pixels[~img.mask]
    assert fg.min() == 0.0 and fg.max() == 1.0
    assert np.all(img.pixels[img.mask] == 0.0)


@pytest.mark.parametrize("yaw", [-30.0, 15.0, 30.0])
def test_view_consistency(yaw):
    mesh = pyramid()
    direct = render_depth(mesh, ViewAngle.from_yaw(yaw), K)
    pre = Mesh(rotate_yaw(mesh.vertices, yaw), mesh.faces, mesh.colors)
    via = render_depth(pre, FP, K)
    np.testing.assert_array_equal(direct.pixels, via.pixels)
    np.testing.assert_array_equal(direct.mask, via.mask)


def test_render_views_order_and_masks():
    views = [ViewAngle.from_yaw(-30.0), FP, ViewAngle.from_yaw(30.0)]
    out = render_views(pyramid(), views, K)
    assert len(out) == 3
    for (d, e, t), v in zip(out, views):
        assert (d.kind, e.kind, t.kind) == ("depth", "enhanced_depth", "texture")
        np.testing.assert_array_equal(d.mask, t.mask)
        np.testing.assert_array_equal(d.mask, e.mask)
        np.testing.assert_array_equal(d.pixels, render_depth(pyramid(), v, K).pixels)


def test_render_views_aggregates_errors():
    with pytest.raises(MissingColors) as info:
        render_views(grid_mesh(4), [FP, ViewAngle.from_yaw(30.0)], K)
    assert "FP" in str(info.value) and "LP" in str(info.value)


# ---- enhancement


def depth_image(pixels, mask=None):
    mask = np.zeros(pixels.shape, bool) if mask is None else mask
    return GeomImage("depth", pixels, mask)


def test_clahe_two_levels():
    px = np.full((16, 16), 0.25)
    px[:, 8:] = 0.75
    out = enhance_depth(depth_image(px), clip_limit=1.0, tiles=1)
    assert abs(out.pixels[0, 0] - 0.5) <= 1 / 256
    assert abs(out.pixels[0, 15] - 1.0) <= 1 / 256


def test_clahe_constant_foreground_stays_constant():
    px = np.full((16, 16), 0.4)
    mask = np.zeros((16, 16), bool)
    mask[:3] = True
    px[mask] = 0
    out = enhance_depth(depth_image(px, mask), 0.01, 4)
    fg = out.pixels[~mask]
    assert np.all(fg == fg[0])
    assert np.all(out.pixels[mask] == 0)


@pytest.mark.parametrize("seed", range(5))
def test_clahe_range_and_mask(seed):
    rng = np.random.default_rng(seed)
    px = rng.random((40, 40))
    mask = rng.random((40, 40)) < 0.2
    px[mask] = 0
    out = enhance_depth(depth_image(px, mask), 0.01, 8)
    assert out.pixels.min() >= 0 and out.pixels.max() <= 1
    np.testing.assert_array_equal(out.mask, mask)
    assert np.all(out.pixels[mask] == 0)


def test_clahe_monotone_single_tile():
    rng = np.random.default_rng(4)
    px = rng.random((24, 24))
    out = enhance_depth(depth_image(px), 0.02, 1).pixels
    order = np.argsort(px, axis=None)
    assert np.all(np.diff(out.ravel()[order]) >= 0)


def test_clahe_tile_maps_are_monotone_cdfs():
    rng = np.random.default_rng(5)
    px = rng.random((32, 32))
    maps, *_ = clahe_mappings(px, np.ones((32, 32), bool), 0.01, 4, 256)
    assert np.all(np.diff(maps, axis=-1) >= 0)
    np.testing.assert_allclose(maps[..., -1], 1.0)


def test_clahe_rejects_bad_arguments():
    img = depth_image(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        enhance_depth(img, 0.0, 2)
    with pytest.raises(ValueError):
        enhance_depth(img, 0.1, 0)
    with pytest.raises(ValueError):
        enhance_depth(GeomImage("texture", np.zeros((8, 8, 3)), np.zeros((8, 8), bool)))


# ---- image files


def test_netpbm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    gray = rng.random((7, 9))
    rgb = rng.random((5, 6, 3))
    bits = rng.random((4, 11)) < 0.5
    write_pgm(tmp_path / "a.pgm", gray)
    write_ppm(tmp_path / "a.ppm", rgb)
    write_pbm(tmp_path / "a.pbm", bits)
    np.testing.assert_allclose(read_netpbm(tmp_path / "a.pgm"), gray, atol=0.5 / 65535 + 1e-12)
    np.testing.assert_allclose(read_netpbm(tmp_path / "a.ppm"), rgb, atol=0.5 / 255 + 1e-12)
    np.testing.assert_array_equal(read_netpbm(tmp_path / "a.pbm"), bits)
    head = (tmp_path / "a.pgm").read_bytes()[:15]
    assert head.startswith(b"P5\n9 7\n65535\n")
