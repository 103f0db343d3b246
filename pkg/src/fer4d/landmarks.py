"""Landmark images and per-frame descriptors for the temporal classifier."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from fer4d.errors import DegenerateBounds
from fer4d.mesh import MeshSequence
from fer4d.projection import ViewAngle, rotate_yaw


@dataclass(frozen=True)
class SequenceBounds:
    """Rotation center and square framing shared by all frames of a sequence."""

    center: tuple[float, float, float]
    cx: float
    cy: float
    extent: float

    @classmethod
    def from_landmarks(cls, landmark_frames, view: ViewAngle) -> SequenceBounds:
        pts = np.concatenate([np.asarray(f, dtype=np.float64) for f in landmark_frames])
        center = pts.mean(axis=0)
        rot = rotate_yaw(pts, view.yaw_degrees, center)
        lo, hi = rot[:, :2].min(axis=0), rot[:, :2].max(axis=0)
        extent = float((hi - lo).max())
        if not extent > 0:
            raise DegenerateBounds("landmark bounding box has zero extent")
        mid = (lo + hi) / 2.0
        return cls(tuple(center), float(mid[0]), float(mid[1]), extent)


@dataclass(eq=False)
class LandmarkImage:
    pixels: np.ndarray
    view: ViewAngle


@dataclass(eq=False)
class FeatureSequence:
    rows: np.ndarray
    view: ViewAngle

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=np.float64))

    def __len__(self):
        return len(self.rows)


def landmark_pixels(points, view: ViewAngle, B: int, radius: int, bounds: SequenceBounds):
    """Integer (row, col) grid position of every landmark."""
    rot = rotate_yaw(np.asarray(points, dtype=np.float64), view.yaw_degrees, np.array(bounds.center))
    # leave room for the stamped disk at the extremes
    scale = (B - 1 - 2 * radius) / bounds.extent
    half = (B - 1) / 2.0
    col = np.floor((rot[:, 0] - bounds.cx) * scale + half + 0.5).astype(np.int64)
    row = np.floor((bounds.cy - rot[:, 1]) * scale + half + 0.5).astype(np.int64)
    return row, col


def rasterize_landmarks(
    points,
    view: ViewAngle,
    B: int = 64,
    radius: int = 1,
    bounds: SequenceBounds | None = None,
) -> LandmarkImage:
    """Binary B x B image with a filled disk stamped at every projected landmark.

    Pass the sequence-wide ``bounds`` so that all frames share one mapping;
    without it the mapping is fitted to ``points`` alone.
    """
    if B < 8:
        raise ValueError("B must be >= 8")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    points = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(points)):
        raise ValueError("landmarks must be finite")
    if bounds is None:
        bounds = SequenceBounds.from_landmarks([points], view)
    row, col = landmark_pixels(points, view, B, radius, bounds)
    img = np.zeros((B, B), dtype=bool)
    offs = [
        (dr, dc)
        for dr in range(-radius, radius + 1)
        for dc in range(-radius, radius + 1)
        if dr * dr + dc * dc <= radius * radius
    ]
    for dr, dc in offs:
        r, c = row + dr, col + dc
        ok = (r >= 0) & (r < B) & (c >= 0) & (c < B)
        img[r[ok], c[ok]] = True
    return LandmarkImage(img, view)


def describe_frame(img: LandmarkImage | np.ndarray, grid: int = 8) -> np.ndarray:
    """Cell occupancy fractions, then centroid (x, y) and spread (x, y).

    Coordinates are normalized by B - 1. An empty image gives zeros.
    """
    pix = img.pixels if isinstance(img, LandmarkImage) else np.asarray(img, dtype=bool)
    B = pix.shape[0]
    if grid < 1 or B % grid:
        raise ValueError(f"grid {grid} must be >= 1 and divide B={B}")
    cell = B // grid
    occ = pix.reshape(grid, cell, grid, cell).mean(axis=(1, 3)).ravel()
    rows, cols = np.nonzero(pix)
    if len(rows) == 0:
        return np.zeros(grid * grid + 4)
    norm = max(B - 1, 1)
    stats = np.array([cols.mean(), rows.mean(), cols.std(), rows.std()]) / norm
    return np.concatenate([occ, stats])


def sequence_features(
    seq: MeshSequence, view: ViewAngle, B: int = 64, radius: int = 1, grid: int = 8, encoder=None
) -> FeatureSequence:
    """One descriptor row per frame under a sequence-wide framing.

    ``encoder`` optionally replaces :func:`describe_frame`; it receives the
    stacked landmark images as a (T, 1, B, B) float array and returns (T, d),
    e.g. ``ConvNet(1, B).encode``.
    """
    frames = [f.landmarks for f in seq.frames]
    bounds = SequenceBounds.from_landmarks(frames, view)
    images = [rasterize_landmarks(p, view, B, radius, bounds) for p in frames]
    if encoder is not None:
        stack = np.array([im.pixels for im in images], dtype=np.float64)[:, None]
        return FeatureSequence(np.asarray(encoder(stack), dtype=np.float64).reshape(len(frames), -1), view)
    return FeatureSequence(np.array([describe_frame(im, grid) for im in images]), view)


def write_features_csv(path, features: FeatureSequence) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        d = features.rows.shape[1]
        w.writerow([f"f{i}" for i in range(d)])
        for row in features.rows:
            w.writerow([repr(float(v)) for v in row])


def read_features_csv(path, view: ViewAngle) -> FeatureSequence:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return FeatureSequence(np.array([[float(v) for v in r] for r in rows[1:]]), view)
