"""Causal multi-head self-attention with rotary Q/K and a post-softmax hook.

Attention weight tensors are float64 arrays shaped
``[batch, heads, query, key]``.  The hook sees the normalized weights after
softmax and may return any same-shaped array; whatever it returns is what
multiplies the values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .numerics import DimensionError, matmul, softmax_lastdim
from .rope import RopeConfig, rotate

AttnHook = Callable[[np.ndarray], np.ndarray]


class ContractError(RuntimeError):
    """A hook or callback broke its shape contract."""


@dataclass
class HeadProjections:
    wq: np.ndarray  # [n_heads, d_model, d_head]
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray  # [n_heads * d_head, d_model]

    def __post_init__(self):
        n, d_model, d_head = self.wq.shape
        for name in ("wk", "wv"):
            if getattr(self, name).shape != self.wq.shape:
                raise DimensionError(f"{name} shape {getattr(self, name).shape} != wq shape {self.wq.shape}")
        if d_model != n * d_head:
            raise DimensionError(f"d_model {d_model} != n_heads {n} * d_head {d_head}")
        if self.wo.shape != (n * d_head, d_model):
            raise DimensionError(f"wo shape {self.wo.shape} != {(n * d_head, d_model)}")

    @property
    def n_heads(self) -> int:
        return self.wq.shape[0]

    @property
    def d_head(self) -> int:
        return self.wq.shape[2]


class AttendResult(NamedTuple):
    out: np.ndarray      # [b, l, d_model], after the output projection
    heads: np.ndarray    # [b, l, n*d_head], concatenated heads before wo
    weights: np.ndarray  # [b, n, l, l], as handed to the value product


def causal_mask(l: int) -> np.ndarray:
    """Boolean ``[l, l]`` array, True where key index exceeds query index."""
    return np.triu(np.ones((l, l), dtype=bool), k=1)


def _per_head(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # [b, l, dm] x [n, dm, dh] -> [b, n, l, dh]
    b = x.shape[0]
    n = w.shape[0]
    xb = np.broadcast_to(x[:, None], (b, n) + x.shape[1:])
    wb = np.broadcast_to(w[None], (b,) + w.shape)
    return matmul(xb, wb)


def attention_scores(x: np.ndarray, proj: HeadProjections, rope: RopeConfig) -> np.ndarray:
    """Scaled rotary dot products ``[b, n, l, l]`` with future keys at ``-inf``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != proj.wq.shape[1]:
        raise DimensionError(f"input shape {x.shape} does not match d_model {proj.wq.shape[1]}")
    if rope.head_dim != proj.d_head:
        raise DimensionError(f"rope head_dim {rope.head_dim} != d_head {proj.d_head}")
    l = x.shape[1]
    if l > rope.max_pos:
        raise DimensionError(f"sequence length {l} exceeds max_pos {rope.max_pos}")
    pos = np.arange(l)
    q = rotate(_per_head(x, proj.wq), pos, rope)
    k = rotate(_per_head(x, proj.wk), pos, rope)
    scores = matmul(q, np.swapaxes(k, -1, -2)) / np.sqrt(proj.d_head)
    scores[..., causal_mask(l)] = -np.inf
    return scores


def attend(scores: np.ndarray, v: np.ndarray, wo: np.ndarray, hook: Optional[AttnHook] = None) -> AttendResult:
    """Softmax the scores, run the hook, mix values and project out.

    ``v`` is the per-head value projection ``[b, n, l, d_head]``.
    """
    weights = softmax_lastdim(scores)
    if hook is not None:
        shape = weights.shape
        weights = np.asarray(hook(weights), dtype=np.float64)
        if weights.shape != shape:
            raise ContractError(f"hook returned shape {weights.shape}, expected {shape}")
    ctx = matmul(weights, v)  # [b, n, l, dh]
    b, n, l, dh = ctx.shape
    heads = np.ascontiguousarray(np.transpose(ctx, (0, 2, 1, 3))).reshape(b, l, n * dh)
    out = heads @ wo
    return AttendResult(out, heads, weights)


def multi_head_attention(
    x: np.ndarray, proj: HeadProjections, rope: RopeConfig, hook: Optional[AttnHook] = None
) -> AttendResult:
    scores = attention_scores(x, proj, rope)
    v = _per_head(np.asarray(x, dtype=np.float64), proj.wv)
    return attend(scores, v, proj.wo, hook)


def check_attn_tensor(att: np.ndarray, row_tol: Optional[float] = 1e-6) -> None:
    """Assert the causal / nonnegative / row-stochastic invariants.

    Pass ``row_tol=None`` to skip the row-sum check (e.g. after a transition
    has deliberately changed row mass).
    """
    if att.ndim != 4 or att.shape[2] != att.shape[3]:
        raise DimensionError(f"attention tensor must be [b, n, l, l], got {att.shape}")
    if np.any(att[..., causal_mask(att.shape[2])] != 0):
        raise AssertionError("attention tensor has weight on future keys")
    if np.any(att < 0):
        raise AssertionError("attention tensor has negative entries")
    if row_tol is not None:
        dev = np.abs(att.sum(axis=-1) - 1.0).max()
        if dev > row_tol:
            raise AssertionError(f"attention rows deviate from 1 by {dev:.3g}")
