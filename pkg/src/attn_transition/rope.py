"""Rotary position embedding with interleaved pairing, plus the long-term
decay upper bound on rotated dot products."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError


@dataclass(frozen=True)
class RopeConfig:
    head_dim: int
    theta_base: float = 10000.0
    max_pos: int = 256

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 2:
            raise DimensionError(f"head_dim must be a positive even integer, got {self.head_dim}")
        if not self.theta_base > 1:
            raise ValueError(f"theta_base must exceed 1, got {self.theta_base}")
        if self.max_pos < 1:
            raise ValueError(f"max_pos must be positive, got {self.max_pos}")

    def thetas(self) -> np.ndarray:
        """Per-pair angular frequencies ``base ** (-2j/d)`` for j = 0..d/2-1."""
        j = np.arange(self.head_dim // 2, dtype=np.float64)
        return self.theta_base ** (-2.0 * j / self.head_dim)


def rotate(x: np.ndarray, positions, cfg: RopeConfig) -> np.ndarray:
    """Rotate the last axis of ``x`` (length d) by ``position * theta_j`` per pair.

    ``positions`` broadcasts against ``x.shape[:-1]``.  Pairs are interleaved:
    (x0, x1), (x2, x3), ...
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cfg.head_dim:
        raise DimensionError(f"last dim {x.shape[-1]} != head_dim {cfg.head_dim}")
    ang = np.asarray(positions, dtype=np.float64)[..., None] * cfg.thetas()
    cos, sin = np.cos(ang), np.sin(ang)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty(np.broadcast_shapes(x.shape, ang.shape[:-1] + (cfg.head_dim,)))
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = odd * cos + even * sin
    return out


def apply_rotary(x, m: int, cfg: RopeConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {x.shape}")
    if x.shape[0] % 2:
        raise DimensionError(f"odd-length vector ({x.shape[0]}) cannot be rotated pairwise")
    if m < 0:
        raise ValueError(f"position must be >= 0, got {m}")
    return rotate(x, m, cfg)


def rotary_dot(q, k, m: int, n: int, cfg: RopeConfig) -> float:
    """Dot product of ``q`` rotated to position m with ``k`` rotated to position n."""
    return float(apply_rotary(q, m, cfg) @ apply_rotary(k, n, cfg))


def decay_upper_bound(rel_dist: int, cfg: RopeConfig) -> float:
    """Mean magnitude of the partial sums of ``exp(i * rel_dist * theta_j)``.

    This is the relative bound on a rotated dot product at the given distance;
    it equals ``(d/2 + 1) / 2`` at distance 0 and is maximal there.
    """
    if rel_dist < 0:
        raise ValueError(f"rel_dist must be >= 0, got {rel_dist}")
    partial = np.cumsum(np.exp(1j * rel_dist * cfg.thetas()))
    return float(np.abs(partial).mean())


def decay_curve(max_dist: int, cfg: RopeConfig) -> np.ndarray:
    """``decay_upper_bound`` for rel_dist = 0..max_dist inclusive."""
    return np.array([decay_upper_bound(r, cfg) for r in range(max_dist + 1)])
