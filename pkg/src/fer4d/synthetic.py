"""Synthetic 4D face sequences with six expression-specific motions.

Every subject gets an ellipsoidal head sampled on a (u, v) parameter grid,
with a nose bump, a hair cap above the forehead and a few stray scan points.
Eighty-three landmarks sit at fixed parametric positions. Each expression
moves the surface with its own displacement field, ramped in over the
sequence; classes share regions (brows, mouth corners, jaw) so they are
separable but not trivially so.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fer4d.mesh import EXPRESSIONS, Dataset, Frame, LandmarkSchema, Mesh, MeshSequence

GRID_U = np.linspace(-1.1, 1.1, 29)
GRID_V = np.linspace(-1.3, 1.5, 35)
SCALE = 100.0  # scan units per parametric unit
N_STRAY = 3


@dataclass(frozen=True)
class SyntheticSpec:
    subjects: int = 10
    frames: int = 20
    noise: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.subjects < 1 or self.frames < 1:
            raise ValueError("subject and frame counts must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


def _ring(cu, cv, ru, rv, n, start=0.0, stop=2 * np.pi, closed=True):
    ang = np.linspace(start, stop, n, endpoint=not closed)
    return np.stack([cu + ru * np.cos(ang), cv + rv * np.sin(ang)], axis=1)


def landmark_layout() -> tuple[np.ndarray, LandmarkSchema]:
    """Parametric (u, v) landmark positions and their schema.

    0-19 eyebrows, 20-35 eyes, 36-47 nose (tip 41), 48-67 mouth, 68-82 border.
    """
    pts = []
    for side in (-1, 1):
        u = side * np.linspace(0.15, 0.65, 5)
        arch = 0.40 + 0.05 * np.sin(np.linspace(0, np.pi, 5))
        pts += list(zip(u, arch + 0.03)) + list(zip(u, arch - 0.03))
    for side in (-1, 1):
        pts += list(_ring(side * 0.38, 0.18, 0.14, 0.06, 8))
    nose = [(0.0, 0.15), (0.0, 0.06), (0.0, -0.02), (0.0, -0.08), (-0.06, -0.10),
            (0.0, -0.13), (0.06, -0.10), (-0.12, -0.20), (-0.06, -0.22), (0.0, -0.23),
            (0.06, -0.22), (0.12, -0.20)]
    pts += nose
    pts += list(_ring(0.0, -0.50, 0.30, 0.10, 12))
    pts += list(_ring(0.0, -0.50, 0.20, 0.04, 8))
    pts += list(_ring(0.0, 0.05, 0.92, 1.15, 15))
    uv = np.array(pts, dtype=np.float64)
    assert len(uv) == 83
    schema = LandmarkSchema(
        total_count=83,
        border_indices=tuple(range(68, 83)),
        eyebrow_indices=tuple(range(0, 20)),
        nose_tip_index=41,
    )
    return uv, schema


def _bump(u, v, cu, cv, su, sv):
    return np.exp(-(((u - cu) / su) ** 2) - ((v - cv) / sv) ** 2)


def _pair(u, v, cu, cv, su, sv, asym):
    """Left/right bump pair; ``asym`` scales the left (u > 0) side."""
    return _bump(u, v, -cu, cv, su, sv) + asym * _bump(u, v, cu, cv, su, sv)


def expression_field(expression: str, u, v, asym=1.0):
    """Apex displacement (du, dv, dz) in parametric units at base positions (u, v)."""
    du = np.zeros_like(u)
    dv = np.zeros_like(u)
    dz = np.zeros_like(u)
    side = np.sign(u)
    corners = _pair(u, v, 0.30, -0.50, 0.14, 0.12, asym)
    brows = _pair(u, v, 0.40, 0.40, 0.30, 0.12, asym)
    inner_brows = _pair(u, v, 0.18, 0.40, 0.14, 0.12, asym)
    jaw = 1.0 / (1.0 + np.exp((v + 0.55) / 0.06)) * _bump(u, v, 0.0, -0.9, 0.7, 0.6)
    eyes = _pair(u, v, 0.38, 0.24, 0.16, 0.05, asym)
    if expression == "happiness":
        cheeks = _pair(u, v, 0.45, -0.22, 0.18, 0.16, asym)
        dv += 0.10 * corners + 0.04 * cheeks
        du += 0.06 * side * corners
        dz -= 0.05 * cheeks
    elif expression == "sadness":
        dv += -0.08 * corners + 0.06 * inner_brows
        du += 0.02 * side * inner_brows
        dv += 0.03 * _bump(u, v, 0.0, -0.62, 0.2, 0.08)
    elif expression == "surprise":
        dv += -0.16 * jaw + 0.08 * brows + 0.04 * eyes
        dz -= 0.03 * brows
    elif expression == "anger":
        dv += -0.07 * brows + 0.05 * _bump(u, v, 0.0, -0.58, 0.25, 0.08)
        du += -0.06 * side * inner_brows
        dv += -0.04 * _bump(u, v, 0.0, -0.43, 0.25, 0.06)
        dz += 0.05 * inner_brows
    elif expression == "disgust":
        dv += 0.10 * _bump(u, v, 0.0, -0.40, 0.22, 0.08) + 0.06 * _bump(u, v, 0.0, -0.05, 0.15, 0.2)
        dv += -0.02 * brows
        dz -= 0.06 * _bump(u, v, 0.0, -0.1, 0.25, 0.2)
    elif expression == "fear":
        dv += 0.06 * inner_brows - 0.06 * jaw + 0.03 * eyes
        du += 0.07 * side * corners - 0.03 * side * inner_brows
    else:
        raise ValueError(f"unknown expression {expression!r}")
    return du, dv, dz


def _colors(u, v):
    r = 0.55 + 0.25 * np.sin(5.0 * u + 1.0) * np.cos(3.0 * v)
    g = 0.45 + 0.25 * np.cos(6.0 * v - 0.5)
    b = 0.40 + 0.20 * np.sin(4.0 * (u + v))
    rgb = np.stack([r, g, b], axis=1)
    lips = _bump(u, v, 0.0, -0.5, 0.3, 0.1)[:, None]
    brows = (_bump(u, v, -0.4, 0.4, 0.28, 0.05) + _bump(u, v, 0.4, 0.4, 0.28, 0.05))[:, None]
    rgb = rgb * (1 - lips) + lips * np.array([0.8, 0.2, 0.25])
    rgb = rgb * (1 - 0.7 * brows)
    hair = (v > 0.9)[:, None]
    rgb = np.where(hair, np.array([0.15, 0.1, 0.05]), rgb)
    return np.clip(rgb, 0.0, 1.0)


def _grid_faces(nu, nv):
    idx = np.arange(nu * nv).reshape(nv, nu)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    return np.concatenate([np.stack([a, b, c], 1), np.stack([b, d, c], 1)])


@dataclass
class _Subject:
    width: float
    height: float
    depth: float
    nose: float
    offsets: np.ndarray
    asym: float


def _surface(subj: _Subject, u, v):
    """Head surface at parameters (u, v); the face points toward -z."""
    x = subj.width * u
    y = subj.height * v
    r2 = (u / 1.25) ** 2 + (v / 1.6) ** 2
    z = -subj.depth * np.sqrt(np.clip(1.0 - r2, 0.05, None))
    z -= subj.nose * _bump(u, v, 0.0, -0.08, 0.12, 0.22)
    z -= 0.06 * _bump(u, v, 0.0, -0.5, 0.3, 0.1)
    return np.stack([x, y, z], axis=1)


def _hair(u, v, rng):
    mask = v > 0.9
    return np.where(mask, -0.05 - 0.04 * rng.random(u.shape), 0.0)


def _ramp(T, onset, apex):
    t = np.linspace(0.0, 1.0, T) if T > 1 else np.zeros(1)
    x = np.clip((t - onset) / (apex - onset), 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic dataset of ``subjects * 6`` sequences of ``frames`` frames."""
    uv_lmk, schema = landmark_layout()
    U, V = np.meshgrid(GRID_U, GRID_V)
    u0, v0 = U.ravel(), V.ravel()
    faces = _grid_faces(len(GRID_U), len(GRID_V))
    colors = _colors(u0, v0)
    colors = np.concatenate([colors, np.full((N_STRAY, 3), 0.5)])
    samples = []
    for s in range(spec.subjects):
        srng = np.random.default_rng([spec.seed, s])
        subj = _Subject(
            width=0.75 * srng.uniform(0.92, 1.08),
            height=1.0 * srng.uniform(0.94, 1.06),
            depth=0.8 * srng.uniform(0.9, 1.1),
            nose=0.25 * srng.uniform(0.8, 1.2),
            offsets=srng.normal(0.0, 0.015, (len(uv_lmk), 2)),
            asym=srng.uniform(0.6, 1.4),
        )
        hair = _hair(u0, v0, srng)
        stray = srng.normal(0.0, 1.0, (N_STRAY, 3))
        stray = stray / np.linalg.norm(stray, axis=1, keepdims=True) * 4.0
        lu = uv_lmk[:, 0] + subj.offsets[:, 0]
        lv = uv_lmk[:, 1] + subj.offsets[:, 1]
        subject_id = f"S{s + 1:03d}"
        for e, expression in enumerate(EXPRESSIONS):
            rng = np.random.default_rng([spec.seed, s, e])
            amp = rng.uniform(0.75, 1.25)
            curve = _ramp(spec.frames, rng.uniform(0.05, 0.3), rng.uniform(0.6, 0.9))
            other = EXPRESSIONS[rng.integers(len(EXPRESSIONS))]
            mix = rng.uniform(0.0, 0.25)
            fu, fv, fz = expression_field(expression, u0, v0, subj.asym)
            ou, ov, oz = expression_field(other, u0, v0, subj.asym)
            lfu, lfv, lfz = expression_field(expression, lu, lv, subj.asym)
            lou, lov, loz = expression_field(other, lu, lv, subj.asym)
            frames = []
            for t in range(spec.frames):
                k = amp * curve[t]
                m = mix * curve[t]
                uu = u0 + k * fu + m * ou
                vv = v0 + k * fv + m * ov
                verts = _surface(subj, uu, vv)
                verts[:, 2] += k * fz + m * oz + hair
                lmk = _surface(subj, lu + k * lfu + m * lou, lv + k * lfv + m * lov)
                lmk[:, 2] += k * lfz + m * loz
                if spec.noise > 0:
                    verts += rng.normal(0.0, spec.noise, verts.shape)
                    lmk += rng.normal(0.0, spec.noise, lmk.shape)
                verts = np.concatenate([verts, stray]) * SCALE
                frames.append(Frame(Mesh(verts, faces, colors), lmk * SCALE))
            samples.append(MeshSequence(subject_id, expression, frames))
    return Dataset(samples, schema)
