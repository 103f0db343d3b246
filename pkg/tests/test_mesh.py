import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import box_landmarks, grid_mesh
from fer4d.errors import EmptyCrop, SchemaMismatch
from fer4d.mesh import (
    EXPRESSIONS,
    Dataset,
    Frame,
    LandmarkSchema,
    Mesh,
    MeshSequence,
    PreprocessConfig,
    convex_hull_2d,
    crop_face,
    expression_label,
    knn_mean_distances,
    preprocess_sequence,
    remove_outliers,
)


def point_in_convex_polygon(p, poly):
    # brute force: inside (or on) every CCW edge
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) < -1e-12:
            return False
    return True


def brute_knn_mean(V, k):
    out = []
    for i in range(len(V)):
        d = sorted(np.linalg.norm(V - V[i], axis=1))[1:k + 1]
        out.append(np.mean(d))
    return np.array(out)


SCHEMA = LandmarkSchema(total_count=8, border_indices=(0, 1, 2, 3), eyebrow_indices=(4,), nose_tip_index=5)


def ring_mesh(n=40):
    # evenly spaced ring: identical k-NN neighbourhoods, so outlier removal keeps it whole
    ang = np.linspace(0, 2 * np.pi, n, endpoint=False)
    V = np.stack([0.5 + 0.4 * np.cos(ang), 0.5 + 0.4 * np.sin(ang), np.zeros(n)], axis=1)
    i = np.arange(n)
    return Mesh(V, np.stack([i, (i + 1) % n, (i + 2) % n], axis=1))


def vertex_rows(mesh):
    return {tuple(v) for v in mesh.vertices.tolist()}


# ---- types


def test_mesh_validation():
    with pytest.raises(ValueError):
        Mesh(np.zeros((2, 3)), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        Mesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(ValueError):
        Mesh(np.array([[0, 0, np.nan], [1, 0, 0], [0, 1, 0]]), [[0, 1, 2]])
    with pytest.raises(ValueError):
        Mesh(np.eye(3), [[0, 1, 2]], colors=np.ones((2, 3)))


def test_schema_validation():
    with pytest.raises(SchemaMismatch):
        LandmarkSchema(total_count=5, border_indices=(0, 5), eyebrow_indices=(1,), nose_tip_index=2)
    with pytest.raises(SchemaMismatch):
        LandmarkSchema(total_count=5, border_indices=(0,), eyebrow_indices=(), nose_tip_index=2)
    with pytest.raises(SchemaMismatch):
        LandmarkSchema(total_count=5, border_indices=(0,), eyebrow_indices=(2,), nose_tip_index=2)


def test_dataset_rejects_duplicate_samples(small_schema):
    m = grid_mesh(3)
    lmk = box_landmarks(0, 1, 0, 1, 0.5, 0.2)
    seq = MeshSequence("S1", "anger", [Frame(m, lmk)])
    with pytest.raises(ValueError):
        Dataset([seq, seq], small_schema)


def test_expression_labels_are_one_based():
    assert [expression_label(e) for e in EXPRESSIONS] == [1, 2, 3, 4, 5, 6]


# ---- cropping


def test_crop_left_half_matches_point_in_polygon(small_schema):
    mesh = grid_mesh(10)
    lmk = box_landmarks(0.0, 0.5, 0.0, 1.0, brow_y=2.0, nose_y=1.5)
    margin = 0.02
    out = crop_face(mesh, lmk, small_schema, forehead_fraction=0.6, margin_fraction=margin)
    hull = convex_hull_2d(lmk[:4, :2])
    # grid spacing is 1/9, so a 2% margin (about 0.022) admits no extra column
    expected = {tuple(v) for v in mesh.vertices.tolist() if point_in_convex_polygon(v[:2], hull)}
    assert vertex_rows(out) == expected
    assert all(v[0] <= 0.5 for v in expected) and len(expected) == 50


def test_crop_identity_when_everything_inside(small_schema):
    mesh = grid_mesh(6, colors=True)
    lmk = box_landmarks(-1, 2, -1, 2, brow_y=5.0, nose_y=4.0)
    out = crop_face(mesh, lmk, small_schema)
    assert out.equals(mesh)


def test_crop_removes_exactly_the_hair(small_schema):
    rng = np.random.default_rng(3)
    head = grid_mesh(12)
    brow, nose, f = 1.0, 0.7, 0.6
    ceiling = brow + f * (brow - nose)
    hair = np.column_stack([rng.uniform(0, 1, 50), rng.uniform(ceiling + 1e-3, ceiling + 0.3, 50), np.zeros(50)])
    verts = np.concatenate([head.vertices, hair])
    mesh = Mesh(verts, head.faces)
    lmk = box_landmarks(-0.5, 1.5, -0.5, 2.0, brow_y=brow, nose_y=nose)
    out = crop_face(mesh, lmk, small_schema, forehead_fraction=f)
    violating = sum(1 for v in verts if v[1] > ceiling)
    assert violating == 50
    assert out.n_vertices == len(verts) - 50
    assert vertex_rows(out) == vertex_rows(head)


def test_crop_empty_raises(small_schema):
    mesh = grid_mesh(4)
    lmk = box_landmarks(5, 6, 5, 6, brow_y=10, nose_y=9)
    with pytest.raises(EmptyCrop):
        crop_face(mesh, lmk, small_schema)


def test_crop_schema_mismatch(small_schema):
    with pytest.raises(SchemaMismatch):
        crop_face(grid_mesh(4), np.zeros((7, 3)), small_schema)


@settings(max_examples=40, deadline=None)
@given(
    x0=st.floats(-0.2, 0.6), w=st.floats(0.1, 1.0), y0=st.floats(-0.2, 0.6), h=st.floats(0.1, 1.0),
    brow=st.floats(0.0, 1.0), drop=st.floats(0.05, 0.5), f=st.floats(0.05, 2.0),
)
def test_crop_properties(x0, w, y0, h, brow, drop, f):
    small_schema = SCHEMA
    mesh = grid_mesh(9)
    lmk = box_landmarks(x0, x0 + w, y0, y0 + h, brow_y=brow, nose_y=brow - drop)
    try:
        out = crop_face(mesh, lmk, small_schema, forehead_fraction=f)
    except EmptyCrop:
        return
    # subset, valid faces, idempotent
    assert vertex_rows(out) <= vertex_rows(mesh)
    assert out.n_vertices <= mesh.n_vertices
    assert out.faces.size == 0 or (out.faces.min() >= 0 and out.faces.max() < out.n_vertices)
    again = crop_face(out, lmk, small_schema, forehead_fraction=f)
    assert again.equals(out)


def test_submesh_remaps_faces():
    mesh = grid_mesh(3)
    keep = np.ones(9, dtype=bool)
    keep[4] = False
    sub = mesh.submesh(keep)
    assert sub.n_vertices == 8
    # every face touching the centre vertex is gone; the rest point at the same coordinates
    old = {tuple(sorted(map(tuple, mesh.vertices[f].tolist()))) for f in mesh.faces if 4 not in f}
    new = {tuple(sorted(map(tuple, sub.vertices[f].tolist()))) for f in sub.faces}
    assert old == new


# ---- outliers


def test_knn_distances_match_brute_force():
    rng = np.random.default_rng(0)
    V = rng.normal(size=(60, 3))
    np.testing.assert_allclose(knn_mean_distances(V, 8), brute_knn_mean(V, 8), rtol=1e-12)


def _dense_grid(n=15, spacing=1.0):
    xs = np.arange(n) * spacing
    X, Y = np.meshgrid(xs, xs)
    return np.stack([X.ravel(), Y.ravel(), np.zeros(n * n)], axis=1)


@pytest.mark.parametrize("n_far", [1, 2])
def test_displaced_vertices_removed(n_far):
    grid = _dense_grid()
    far = np.array([[7.0, 7.0, 100.0], [-100.0, 7.0, 0.0]])[:n_far]
    V = np.concatenate([grid, far])
    out = remove_outliers(Mesh(V, np.zeros((0, 3))), k=8, stddev_mult=2.0)
    d = brute_knn_mean(V, 8)
    expected_keep = d <= d.mean() + 2.0 * d.std()
    assert not expected_keep[-n_far:].any()
    assert vertex_rows(out) == {tuple(v) for v in V[expected_keep].tolist()}
    assert vertex_rows(out).isdisjoint({tuple(v) for v in far.tolist()})


def test_interior_of_dense_grid_survives_displacement():
    grid = _dense_grid()
    V = np.concatenate([grid, [[7.0, 7.0, 100.0]]])
    out = remove_outliers(Mesh(V, np.zeros((0, 3))), 8, 2.0)
    interior = {tuple(v) for v in grid.tolist() if 2 <= v[0] <= 12 and 2 <= v[1] <= 12}
    assert interior <= vertex_rows(out)


def test_zero_variance_point_set_keeps_everything():
    # evenly spaced ring: every point has the same neighbourhood
    mesh = ring_mesh(40)
    out = remove_outliers(mesh, 8, 2.0)
    assert out.equals(mesh)


def test_outlier_parameter_checks():
    m = grid_mesh(4)
    with pytest.raises(ValueError):
        remove_outliers(m, 0, 2.0)
    with pytest.raises(ValueError):
        remove_outliers(m, 8, 0.0)


# ---- sequences


def test_preprocess_identity_sequence(small_schema):
    mesh = ring_mesh()
    lmk = box_landmarks(-1, 2, -1, 2, 5.0, 4.0)
    seq = MeshSequence("S1", "fear", [Frame(mesh, lmk) for _ in range(3)])
    out = preprocess_sequence(seq, small_schema, PreprocessConfig())
    assert len(out) == 3 and out.subject_id == "S1" and out.expression == "fear"
    for a, b in zip(seq.frames, out.frames):
        assert a.mesh.equals(b.mesh)


def test_preprocess_error_names_frame(small_schema):
    mesh = grid_mesh(6)
    good = box_landmarks(-1, 2, -1, 2, 5.0, 4.0)
    bad = box_landmarks(10, 11, 10, 11, 20.0, 19.0)
    seq = MeshSequence("S1", "fear", [Frame(mesh, good), Frame(mesh, good), Frame(mesh, bad)])
    with pytest.raises(EmptyCrop) as info:
        preprocess_sequence(seq, small_schema)
    assert info.value.frame_index == 2
    assert "frame 2" in str(info.value)


def test_preprocess_removes_hair_every_frame(small_schema):
    rng = np.random.default_rng(1)
    frames = []
    for t in range(4):
        head = grid_mesh(10)
        hair = np.column_stack([rng.uniform(0, 1, 10), rng.uniform(1.6, 1.8, 10), np.zeros(10)])
        m = Mesh(np.concatenate([head.vertices, hair]), head.faces)
        frames.append(Frame(m, box_landmarks(-0.5, 1.5, -0.5, 2.0, 0.9, 0.6)))
    out = preprocess_sequence(MeshSequence("S2", "sadness", frames), small_schema)
    for a, b in zip(frames, out.frames):
        assert b.mesh.n_vertices < a.mesh.n_vertices
        assert b.mesh.vertices[:, 1].max() <= 0.9 + 0.6 * 0.3
