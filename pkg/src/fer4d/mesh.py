"""Domain types for 4D face scans and the per-frame cleaning stage.

A 4D sample is an ordered list of frames, each frame a triangle mesh plus the
landmark set annotated on it. Cleaning removes statistical outliers and crops
everything outside the facial border and above the forehead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from fer4d.errors import EmptyCrop, SchemaMismatch

EXPRESSIONS = ("anger", "disgust", "fear", "happiness", "sadness", "surprise")


def expression_label(expression: str) -> int:
    """1-based class label of an expression name."""
    try:
        return EXPRESSIONS.index(expression) + 1
    except ValueError:
        raise ValueError(f"unknown expression {expression!r}") from None


@dataclass(eq=False)
class Mesh:
    """Triangle mesh with optional per-vertex RGB colors.

    ``vertices`` is (M, 3) float, ``faces`` is (F, 3) int of 0-based indices,
    ``colors`` is (M, 3) in [0, 1] or None.
    """

    vertices: np.ndarray
    faces: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (M, 3), got {self.vertices.shape}")
        m = len(self.vertices)
        if m < 3:
            raise ValueError(f"mesh needs at least 3 vertices, got {m}")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("vertex coordinates must be finite")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= m):
            raise ValueError("face index out of range")
        if self.colors is not None:
            self.colors = np.ascontiguousarray(self.colors, dtype=np.float64)
            if self.colors.shape != (m, 3):
                raise ValueError(f"colors must be ({m}, 3), got {self.colors.shape}")
            if not np.all((self.colors >= 0.0) & (self.colors <= 1.0)):
                raise ValueError("colors must lie in [0, 1]")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def submesh(self, keep: np.ndarray) -> Mesh:
        """Keep the vertices flagged in ``keep``; drop faces that lose a corner."""
        keep = np.asarray(keep, dtype=bool)
        remap = np.full(len(keep), -1, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        faces = remap[self.faces] if self.faces.size else self.faces
        faces = faces[np.all(faces >= 0, axis=1)] if faces.size else faces.reshape(0, 3)
        colors = None if self.colors is None else self.colors[keep]
        return Mesh(self.vertices[keep], faces, colors)

    def equals(self, other: Mesh) -> bool:
        if not (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.faces, other.faces)
        ):
            return False
        if self.colors is None or other.colors is None:
            return self.colors is None and other.colors is None
        return np.array_equal(self.colors, other.colors)


@dataclass(frozen=True)
class LandmarkSchema:
    """Named landmark groups used by cropping; indices are 0-based."""

    total_count: int = 83
    border_indices: tuple[int, ...] = ()
    eyebrow_indices: tuple[int, ...] = ()
    nose_tip_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "border_indices", tuple(int(i) for i in self.border_indices))
        object.__setattr__(self, "eyebrow_indices", tuple(int(i) for i in self.eyebrow_indices))
        if self.total_count < 1:
            raise SchemaMismatch("total_count must be positive")
        if not self.border_indices or not self.eyebrow_indices:
            raise SchemaMismatch("border and eyebrow index sets must be non-empty")
        for name, idx in (
            ("border", self.border_indices),
            ("eyebrow", self.eyebrow_indices),
            ("nose_tip", (self.nose_tip_index,)),
        ):
            bad = [i for i in idx if not 0 <= i < self.total_count]
            if bad:
                raise SchemaMismatch(
                    f"{name} indices {bad} out of range [0, {self.total_count})"
                )
        if self.nose_tip_index in self.eyebrow_indices:
            raise SchemaMismatch("nose tip index must not be an eyebrow index")

    def check(self, landmarks: np.ndarray, what: str = "landmark set") -> None:
        if landmarks.ndim != 2 or landmarks.shape[1] != 3:
            raise SchemaMismatch(f"{what}: expected (L, 3) points, got {landmarks.shape}")
        if len(landmarks) != self.total_count:
            raise SchemaMismatch(
                f"{what}: has {len(landmarks)} points, schema expects {self.total_count}"
            )
        if not np.all(np.isfinite(landmarks)):
            raise SchemaMismatch(f"{what}: non-finite landmark coordinates")


@dataclass(eq=False)
class Frame:
    mesh: Mesh
    landmarks: np.ndarray

    def __post_init__(self):
        self.landmarks = np.ascontiguousarray(self.landmarks, dtype=np.float64)


@dataclass(eq=False)
class MeshSequence:
    subject_id: str
    expression: str
    frames: list[Frame] = field(default_factory=list)

    def __post_init__(self):
        if self.expression not in EXPRESSIONS:
            raise ValueError(f"unknown expression {self.expression!r}")
        if len(self.frames) < 1:
            raise ValueError(f"sequence {self.name} has no frames")
        counts = {len(f.landmarks) for f in self.frames}
        if len(counts) != 1:
            raise SchemaMismatch(f"sequence {self.name}: frames disagree on landmark count")

    @property
    def name(self) -> str:
        return f"{self.subject_id}_{self.expression}"

    @property
    def label(self) -> int:
        return expression_label(self.expression)

    def __len__(self):
        return len(self.frames)


@dataclass(eq=False)
class Dataset:
    samples: list[MeshSequence]
    schema: LandmarkSchema

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("dataset needs at least one sample")
        seen = set()
        for s in self.samples:
            key = (s.subject_id, s.expression)
            if key in seen:
                raise ValueError(f"duplicate sample {s.name}")
            seen.add(key)
            for t, fr in enumerate(s.frames):
                self.schema.check(fr.landmarks, f"{s.name} frame {t}")

    @property
    def subjects(self) -> list[str]:
        return sorted({s.subject_id for s in self.samples})

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class PreprocessConfig:
    forehead_fraction: float = 0.6
    margin_fraction: float = 0.02
    outlier_k: int = 8
    outlier_mult: float = 2.0

    def __post_init__(self):
        if not self.forehead_fraction > 0:
            raise ValueError("forehead_fraction must be positive")
        if self.margin_fraction < 0:
            raise ValueError("margin_fraction must be non-negative")
        if self.outlier_k < 1:
            raise ValueError("outlier_k must be >= 1")
        if not self.outlier_mult > 0:
            raise ValueError("outlier_mult must be positive")


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull vertices of 2D points (monotone chain)."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def distance_to_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to a convex CCW polygon (0 inside)."""
    a = polygon
    b = np.roll(polygon, -1, axis=0)
    p = points[:, None, :]
    ab = b - a
    ap = p - a
    if len(polygon) >= 3:
        cross = ab[None, :, 0] * ap[..., 1] - ab[None, :, 1] * ap[..., 0]
        inside = np.all(cross >= 0, axis=1)
    else:
        inside = np.zeros(len(points), dtype=bool)
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom > 0, denom, 1.0)
    s = np.clip(np.einsum("nij,ij->ni", ap, ab) / denom, 0.0, 1.0)
    closest = a[None] + s[..., None] * ab[None]
    dist = np.linalg.norm(p - closest, axis=2).min(axis=1)
    return np.where(inside, 0.0, dist)


def crop_mask(
    vertices: np.ndarray,
    landmarks: np.ndarray,
    schema: LandmarkSchema,
    forehead_fraction: float = 0.6,
    margin_fraction: float = 0.02,
) -> np.ndarray:
    """Boolean mask of the vertices that survive :func:`crop_face`."""
    if not forehead_fraction > 0:
        raise ValueError("forehead_fraction must be positive")
    schema.check(landmarks)
    border = landmarks[list(schema.border_indices), :2]
    # hull test runs in a centroid-centred frame; containment is translation invariant
    origin = border.mean(axis=0)
    hull = convex_hull_2d(border - origin)
    lo, hi = border.min(axis=0), border.max(axis=0)
    margin = margin_fraction * float(np.hypot(*(hi - lo)))
    inside = distance_to_polygon(vertices[:, :2] - origin, hull) <= margin

    brow_y = landmarks[list(schema.eyebrow_indices), 1].mean()
    nose_y = landmarks[schema.nose_tip_index, 1]
    ceiling = brow_y + forehead_fraction * (brow_y - nose_y)
    return inside & (vertices[:, 1] <= ceiling)


def crop_face(
    mesh: Mesh,
    landmarks: np.ndarray,
    schema: LandmarkSchema,
    forehead_fraction: float = 0.6,
    margin_fraction: float = 0.02,
) -> Mesh:
    """Drop vertices outside the facial border hull or above the forehead line.

    The border hull is taken in the x-y plane and inflated by
    ``margin_fraction`` times the diagonal of the border landmarks' bounding
    box. The forehead line sits ``forehead_fraction`` of the eyebrow-to-nose
    height above the mean eyebrow.
    """
    keep = crop_mask(mesh.vertices, landmarks, schema, forehead_fraction, margin_fraction)
    n = int(keep.sum())
    if n < 3:
        raise EmptyCrop(f"{n} vertices survive cropping; a mesh needs at least 3")
    return mesh.submesh(keep)


def knn_mean_distances(vertices: np.ndarray, k: int) -> np.ndarray:
    k = min(k, len(vertices) - 1)
    if k < 1:
        return np.zeros(len(vertices))
    dist, _ = cKDTree(vertices).query(vertices, k=k + 1)
    # column 0 is the query point itself
    return dist[:, 1:].mean(axis=1)


def remove_outliers(mesh: Mesh, k: int = 8, stddev_mult: float = 2.0) -> Mesh:
    """Statistical outlier removal on mean k-nearest-neighbour distance."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not stddev_mult > 0:
        raise ValueError("stddev_mult must be positive")
    d = knn_mean_distances(mesh.vertices, k)
    mean, std = d.mean(), d.std()
    if std <= 1e-12 * max(mean, 1e-300):
        return mesh.submesh(np.ones(len(d), dtype=bool))
    keep = d <= mean + stddev_mult * std
    if keep.sum() < 3:
        raise EmptyCrop(f"outlier removal left {int(keep.sum())} vertices; a mesh needs at least 3")
    return mesh.submesh(keep)


def preprocess_frame(frame: Frame, schema: LandmarkSchema, cfg: PreprocessConfig) -> Frame:
    mesh = remove_outliers(frame.mesh, cfg.outlier_k, cfg.outlier_mult)
    mesh = crop_face(mesh, frame.landmarks, schema, cfg.forehead_fraction, cfg.margin_fraction)
    return Frame(mesh, frame.landmarks.copy())


def preprocess_sequence(
    seq: MeshSequence, schema: LandmarkSchema, cfg: PreprocessConfig | None = None
) -> MeshSequence:
    """Clean every frame; errors are re-raised naming the failing frame index."""
    cfg = cfg or PreprocessConfig()
    frames = []
    for t, frame in enumerate(seq.frames):
        try:
            frames.append(preprocess_frame(frame, schema, cfg))
        except (EmptyCrop, SchemaMismatch) as exc:
            err = type(exc)(f"{seq.name} frame {t}: {exc}")
            err.frame_index = t
            raise err from exc
    return MeshSequence(seq.subject_id, seq.expression, frames)
