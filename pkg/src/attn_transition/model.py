"""Toy pre-norm decoder-only transformer with per-layer capture.

The architecture follows the LLaMA family at desk scale: RMS normalization,
rotary attention, gated (SiLU) feed-forward, untied LM head.  Everything is
float64 and deterministic from ``ModelConfig.rng_seed``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .attention import AttnHook, HeadProjections, multi_head_attention
from .numerics import DimensionError
from .rope import RopeConfig

MAGIC = b"ATNT"
FORMAT_VERSION = 1
RMS_EPS = 1e-6


class InputError(ValueError):
    """Bad token ids or sequence length."""


class WeightFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 64
    d_head: int = 16
    d_ff: int = 128
    vocab_size: int = 256
    max_seq_len: int = 256
    rope: RopeConfig = None  # filled from d_head / max_seq_len when omitted
    rng_seed: int = 0

    def __post_init__(self):
        if self.rope is None:
            object.__setattr__(self, "rope", RopeConfig(self.d_head, 10000.0, self.max_seq_len))
        if min(self.n_layers, self.n_heads, self.d_head, self.d_ff, self.vocab_size, self.max_seq_len) < 1:
            raise ValueError(f"all model sizes must be positive: {self}")
        if self.d_model != self.n_heads * self.d_head:
            raise ValueError(f"d_model {self.d_model} != n_heads {self.n_heads} * d_head {self.d_head}")
        if self.rope.head_dim != self.d_head:
            raise ValueError(f"rope head_dim {self.rope.head_dim} != d_head {self.d_head}")
        if self.rope.max_pos < self.max_seq_len:
            raise ValueError(f"rope max_pos {self.rope.max_pos} < max_seq_len {self.max_seq_len}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelConfig":
        d = dict(d)
        rope = d.pop("rope", None)
        if rope is not None:
            rope = RopeConfig(**rope)
        return cls(rope=rope, **d)


@dataclass
class LayerWeights:
    attn: HeadProjections
    w_gate: np.ndarray  # [d_model, d_ff]
    w_up: np.ndarray    # [d_model, d_ff]
    w_down: np.ndarray  # [d_ff, d_model]
    attn_norm: np.ndarray
    ffn_norm: np.ndarray


@dataclass
class ModelWeights:
    config: ModelConfig
    embed: np.ndarray  # [vocab, d_model]
    layers: list[LayerWeights]
    final_norm: np.ndarray
    lm_head: np.ndarray  # [d_model, vocab]

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """All parameters in the fixed serialization order."""
        yield "embed", self.embed
        for i, lw in enumerate(self.layers):
            yield f"layers.{i}.wq", lw.attn.wq
            yield f"layers.{i}.wk", lw.attn.wk
            yield f"layers.{i}.wv", lw.attn.wv
            yield f"layers.{i}.wo", lw.attn.wo
            yield f"layers.{i}.w_gate", lw.w_gate
            yield f"layers.{i}.w_up", lw.w_up
            yield f"layers.{i}.w_down", lw.w_down
            yield f"layers.{i}.attn_norm", lw.attn_norm
            yield f"layers.{i}.ffn_norm", lw.ffn_norm
        yield "final_norm", self.final_norm
        yield "lm_head", self.lm_head

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, t in self.named_tensors():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t, dtype="<f8").tobytes())
        return h.hexdigest()


def _expected_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    n, dm, dh, ff, v = cfg.n_heads, cfg.d_model, cfg.d_head, cfg.d_ff, cfg.vocab_size
    shapes = [("embed", (v, dm))]
    for i in range(cfg.n_layers):
        shapes += [
            (f"layers.{i}.wq", (n, dm, dh)),
            (f"layers.{i}.wk", (n, dm, dh)),
            (f"layers.{i}.wv", (n, dm, dh)),
            (f"layers.{i}.wo", (n * dh, dm)),
            (f"layers.{i}.w_gate", (dm, ff)),
            (f"layers.{i}.w_up", (dm, ff)),
            (f"layers.{i}.w_down", (ff, dm)),
            (f"layers.{i}.attn_norm", (dm,)),
            (f"layers.{i}.ffn_norm", (dm,)),
        ]
    shapes += [("final_norm", (dm,)), ("lm_head", (dm, v))]
    return shapes


def _assemble(cfg: ModelConfig, tensors: Sequence[np.ndarray]) -> ModelWeights:
    it = iter(tensors)
    embed = next(it)
    layers = []
    for _ in range(cfg.n_layers):
        wq, wk, wv, wo, wg, wu, wd, an, fn = (next(it) for _ in range(9))
        layers.append(LayerWeights(HeadProjections(wq, wk, wv, wo), wg, wu, wd, an, fn))
    final_norm = next(it)
    lm_head = next(it)
    return ModelWeights(cfg, embed, layers, final_norm, lm_head)


def init_random(cfg: ModelConfig) -> ModelWeights:
    """Gaussian init from ``cfg.rng_seed``.

    Residual-path outputs (attention ``wo`` and feed-forward ``w_down``) use
    std ``0.02 / sqrt(n_layers)``; input projections use ``1 / sqrt(fan_in)``;
    token embeddings use std 0.02 so that residual updates are not dwarfed;
    norm gains start at one.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    resid_std = 0.02 / np.sqrt(cfg.n_layers)
    tensors = []
    for name, shape in _expected_shapes(cfg):
        kind = name.rsplit(".", 1)[-1]
        if kind.endswith("norm"):
            tensors.append(np.ones(shape))
        elif kind == "embed":
            tensors.append(rng.standard_normal(shape) * 0.02)
        elif kind in ("wo", "w_down"):
            tensors.append(rng.standard_normal(shape) * resid_std)
        else:
            fan_in = shape[-2]
            tensors.append(rng.standard_normal(shape) / np.sqrt(fan_in))
    return _assemble(cfg, tensors)


@dataclass
class LayerTrace:
    hidden: list[np.ndarray]      # per layer, residual stream after the layer, [l, d_model]
    attention: list[np.ndarray]   # per layer, weights used by the layer, [1, n, l, l]
    logits: np.ndarray            # [l, vocab]
    reports: list = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.hidden)


def rms_norm(x: np.ndarray, gain: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS) * gain


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def _check_tokens(cfg: ModelConfig, tokens: Sequence[int]) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("tokens must be a non-empty 1-d sequence")
    if ids.size > cfg.max_seq_len:
        raise InputError(f"{ids.size} tokens exceed max_seq_len {cfg.max_seq_len}")
    bad = ids[(ids < 0) | (ids >= cfg.vocab_size)]
    if bad.size:
        raise InputError(f"token id {int(bad[0])} outside vocabulary of size {cfg.vocab_size}")
    return ids


def forward(
    weights: ModelWeights,
    tokens: Sequence[int],
    hooks: Optional[Mapping[int, AttnHook]] = None,
) -> LayerTrace:
    """Run the decoder stack on one sequence, capturing every layer.

    ``hooks`` maps layer index to a post-softmax attention transform; layers
    without an entry run unmodified.
    """
    cfg = weights.config
    ids = _check_tokens(cfg, tokens)
    hooks = hooks or {}
    x = weights.embed[ids][None]  # [1, l, d_model]
    hidden, attention = [], []
    for i, lw in enumerate(weights.layers):
        res = multi_head_attention(rms_norm(x, lw.attn_norm), lw.attn, cfg.rope, hooks.get(i))
        x = x + res.out
        h = rms_norm(x, lw.ffn_norm)
        x = x + (silu(h @ lw.w_gate) * (h @ lw.w_up)) @ lw.w_down
        hidden.append(x[0])
        attention.append(res.weights)
    logits = project_logits(weights, x[0])
    return LayerTrace(hidden, attention, logits)


def project_logits(weights: ModelWeights, hidden: np.ndarray) -> np.ndarray:
    """Final normalization and LM head applied to a ``[l, d_model]`` hidden state."""
    return rms_norm(hidden, weights.final_norm) @ weights.lm_head


def logit_lens(trace: LayerTrace, layer: int, weights: ModelWeights, k: int = 1) -> np.ndarray:
    """Top-k token ids per position, ``[l, k]``, read off an intermediate layer.

    Ties resolve to the lower token id.
    """
    if not 0 <= layer < trace.n_layers:
        raise IndexError(f"layer {layer} out of range for {trace.n_layers} layers")
    if k < 1:
        raise ValueError("k must be >= 1")
    logits = project_logits(weights, trace.hidden[layer])
    return np.argsort(-logits, axis=-1, kind="stable")[:, :k]


def greedy_generate(
    weights: ModelWeights,
    prompt: Sequence[int],
    n_new: int,
    run: Optional[Callable[[Sequence[int]], LayerTrace]] = None,
) -> tuple[list[int], list[np.ndarray]]:
    """Temperature-0 decoding by re-encoding the full sequence each step.

    ``run`` replaces ``forward`` (e.g. a transition-enabled forward).  Returns
    the generated ids and the final-position logits at each step.  Stops early
    at ``max_seq_len``.
    """
    run = run or (lambda toks: forward(weights, toks))
    seq = list(prompt)
    new, step_logits = [], []
    for _ in range(n_new):
        if len(seq) >= weights.config.max_seq_len:
            break
        last = run(seq).logits[-1]
        tok = int(np.argmax(last))
        step_logits.append(last)
        new.append(tok)
        seq.append(tok)
    return new, step_logits


def save_weights(weights: ModelWeights, path) -> None:
    Path(path).write_bytes(weights_to_bytes(weights))


def weights_to_bytes(weights: ModelWeights) -> bytes:
    named = list(weights.named_tensors())
    header = {
        "config": weights.config.to_dict(),
        "tensors": [[name, list(t.shape)] for name, t in named],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    parts += [np.ascontiguousarray(t, dtype="<f8").tobytes() for _, t in named]
    return b"".join(parts)


def load_weights(path) -> ModelWeights:
    return weights_from_bytes(Path(path).read_bytes())


def weights_from_bytes(buf: bytes) -> ModelWeights:
    if len(buf) < 12:
        raise WeightFormatError("file too short for header", len(buf))
    if buf[:4] != MAGIC:
        raise WeightFormatError(f"bad magic {buf[:4]!r}", 0)
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise WeightFormatError(f"unsupported format version {version}", 4)
    if 12 + hlen > len(buf):
        raise WeightFormatError(f"header length {hlen} runs past end of file", 8)
    try:
        header = json.loads(buf[12 : 12 + hlen])
        cfg = ModelConfig.from_dict(header["config"])
        manifest = [(name, tuple(shape)) for name, shape in header["tensors"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise WeightFormatError(f"malformed header: {exc}", 12) from None
    if manifest != _expected_shapes(cfg):
        raise WeightFormatError("tensor manifest does not match config", 12)
    offset = 12 + hlen
    tensors = []
    for name, shape in manifest:
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(buf):
            raise WeightFormatError(f"truncated tensor {name}", offset)
        t = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape)
        if not np.all(np.isfinite(t)):
            raise WeightFormatError(f"non-finite values in {name}", offset)
        tensors.append(t.astype(np.float64))
        offset += nbytes
    if offset != len(buf):
        raise WeightFormatError(f"{len(buf) - offset} trailing bytes", offset)
    return _assemble(cfg, tensors)


def tokens_from_bytes(text: str | bytes) -> list[int]:
    """Byte-level tokenization into the 256-entry vocabulary."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    return list(text)


def parse_token_ids(text: str) -> list[int]:
    """Whitespace-separated integer ids."""
    try:
        return [int(t) for t in text.split()]
    except ValueError as exc:
        raise InputError(f"bad token id: {exc}") from None
