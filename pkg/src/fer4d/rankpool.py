"""Rank pooling: summarize a frame sequence as one dynamic image.

Two closed-form approximations are provided (weights on raw frames, and
harmonic weights on running means) along with the exact pairwise ranking
objective solved by subgradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from fer4d.errors import LengthMismatch

VARIANTS = ("linear_arp", "harmonic_arp", "exact_ranksvm")


@dataclass(frozen=True)
class PoolingConfig:
    variant: str = "linear_arp"
    lam: float = 1.0
    max_iters: int = 200
    step_size: float | None = None  # None: 1 / (lam * iteration)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown pooling variant {self.variant!r}")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")


@lru_cache(maxsize=256)
def _harmonic_coefficients(T: int) -> tuple[float, ...]:
    # exact rational evaluation keeps the coefficient sum at the rounding floor
    tail = Fraction(0)
    coef = []
    for t in range(T, 0, -1):
        tail += Fraction(1, t)  # H_T - H_{t-1}
        coef.append(float(2 * (T - t + 1) - (T + 1) * tail))
    return tuple(reversed(coef))


def arp_coefficients(T: int, variant: str = "linear_arp") -> np.ndarray:
    if T < 1:
        raise ValueError("T must be >= 1")
    t = np.arange(1, T + 1, dtype=np.float64)
    if variant == "linear_arp":
        return 2.0 * t - T - 1.0
    if variant == "harmonic_arp":
        return np.array(_harmonic_coefficients(T))
    raise ValueError(f"no closed-form coefficients for {variant!r}")


def running_means(frames: np.ndarray) -> np.ndarray:
    return np.cumsum(frames, axis=0) / np.arange(1, len(frames) + 1)[:, None]


def _stack(frames) -> np.ndarray:
    if len(frames) < 1:
        raise LengthMismatch("need at least one frame")
    shapes = {np.shape(f) for f in frames}
    if len(shapes) != 1:
        raise LengthMismatch(f"frames have differing shapes: {sorted(shapes)}")
    arr = np.asarray(frames, dtype=np.float64)
    return arr.reshape(len(frames), -1)


def ranksvm_objective(u: np.ndarray, V: np.ndarray, lam: float) -> float:
    T = len(V)
    reg = 0.5 * lam * float(u @ u)
    if T < 2:
        return reg
    s = V @ u
    i, j = np.triu_indices(T, k=1)
    hinge = np.maximum(0.0, 1.0 - (s[j] - s[i])).sum()
    return reg + 2.0 / (T * (T - 1)) * hinge


def ranksvm_pool(V: np.ndarray, cfg: PoolingConfig) -> np.ndarray:
    """Subgradient descent on the pairwise hinge ranking objective from u = 0.

    Returns the iterate with the lowest objective seen.
    """
    T, d = V.shape
    u = np.zeros(d)
    if T < 2:
        return u
    i, j = np.triu_indices(T, k=1)
    diffs = V[j] - V[i]
    scale = 2.0 / (T * (T - 1))
    best, best_obj = u.copy(), ranksvm_objective(u, V, cfg.lam)
    for it in range(1, cfg.max_iters + 1):
        active = diffs @ u < 1.0
        grad = cfg.lam * u - scale * diffs[active].sum(axis=0)
        step = cfg.step_size if cfg.step_size is not None else 1.0 / (cfg.lam * it)
        u = u - step * grad
        obj = ranksvm_objective(u, V, cfg.lam)
        if obj < best_obj:
            best, best_obj = u.copy(), obj
    return best


def dynamic_image(frames, cfg: PoolingConfig | None = None) -> np.ndarray:
    """Pool a list of equally shaped frames into one array of the same shape.

    Channels pool independently, since every pixel value is an independent
    coordinate of the flattened frame vector.
    """
    cfg = cfg or PoolingConfig()
    shape = np.shape(frames[0]) if len(frames) else ()
    F = _stack(frames)
    T = len(F)
    if cfg.variant == "linear_arp":
        # alpha_t = -alpha_{T+1-t}: summing mirrored differences makes
        # time reversal negate the result bit for bit
        hi = np.arange(T // 2 + T % 2, T)
        lo = T - 1 - hi
        out = arp_coefficients(T, "linear_arp")[hi] @ (F[hi] - F[lo])
    else:
        # both objectives ignore a constant offset; removing frame 0 first
        # keeps a static video exactly at zero
        V = running_means(F - F[0])
        if cfg.variant == "harmonic_arp":
            out = arp_coefficients(T, "harmonic_arp") @ V
        else:
            out = ranksvm_pool(V, cfg)
    return out.reshape(shape)


def normalize_display(D: np.ndarray) -> np.ndarray:
    """Min-max map into [0, 1]; a constant input maps to 0.5 everywhere."""
    D = np.asarray(D, dtype=np.float64)
    lo, hi = D.min(), D.max()
    if hi == lo:
        return np.full(D.shape, 0.5)
    return (D - lo) / (hi - lo)
