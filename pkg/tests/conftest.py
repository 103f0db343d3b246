import numpy as np
import pytest

from fer4d.mesh import LandmarkSchema, Mesh


def grid_mesh(n=10, z=0.0, colors=False):
    """n x n planar grid on the unit square, two triangles per cell."""
    xs = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(xs, xs)
    verts = np.stack([X.ravel(), Y.ravel(), np.full(n * n, z)], axis=1)
    idx = np.arange(n * n).reshape(n, n)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([b, d, c], 1)])
    cols = np.column_stack([X.ravel(), Y.ravel(), np.full(n * n, 0.5)]) if colors else None
    return Mesh(verts, faces, cols)


def box_landmarks(x0, x1, y0, y1, brow_y, nose_y, total=8):
    """Landmarks with a rectangular border (0-3), one brow (4) and a nose tip (5)."""
    pts = np.zeros((total, 3))
    pts[:4, :2] = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    pts[4] = [0.5 * (x0 + x1), brow_y, 0.0]
    pts[5] = [0.5 * (x0 + x1), nose_y, 0.0]
    return pts


@pytest.fixture
def small_schema():
    return LandmarkSchema(total_count=8, border_indices=(0, 1, 2, 3), eyebrow_indices=(4,), nose_tip_index=5)


VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok, detail=""):
        VERDICTS[number] = (bool(ok), detail)
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        ok, detail = VERDICTS[number]
        terminalreporter.write_line(f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}")
