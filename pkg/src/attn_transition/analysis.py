"""Measurement harness: attention statistics, elimination disturbance, and
layer-to-layer logit-lens overlap."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import LayerTrace, ModelWeights, forward, logit_lens, project_logits


@dataclass
class DistributionStats:
    seq_len: int
    frac_below: np.ndarray        # [layers, heads] share of last-row weights < 1/l
    max_weight: np.ndarray        # [layers, heads]
    max_pos: np.ndarray           # [layers, heads]
    first_token: np.ndarray       # [layers, heads]
    count_above_half: np.ndarray  # [layers, heads]
    head_similarity: np.ndarray   # [layers, heads, heads] cosine of last rows

    @property
    def n_layers(self) -> int:
        return self.frac_below.shape[0]

    def rows(self) -> list[dict]:
        out = []
        for L in range(self.n_layers):
            for h in range(self.frac_below.shape[1]):
                out.append({
                    "layer": L,
                    "head": h,
                    "frac_below_inv_l": float(self.frac_below[L, h]),
                    "max_weight": float(self.max_weight[L, h]),
                    "max_pos": int(self.max_pos[L, h]),
                    "first_token_weight": float(self.first_token[L, h]),
                    "count_above_half": int(self.count_above_half[L, h]),
                })
        return out


def cosine_matrix(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=-1)
    sim = (rows @ rows.T) / np.outer(norms, norms)
    np.fill_diagonal(sim, 1.0)
    return (sim + sim.T) / 2


def distribution_stats(trace: LayerTrace) -> DistributionStats:
    """Per layer and head statistics of the last query row (batch 0)."""
    if not trace.attention:
        raise ValueError("trace has no attention snapshots")
    last = np.stack([att[0, :, -1, :] for att in trace.attention])  # [L, n, l]
    l = last.shape[-1]
    return DistributionStats(
        seq_len=l,
        frac_below=(last < 1.0 / l).mean(axis=-1),
        max_weight=last.max(axis=-1),
        max_pos=last.argmax(axis=-1),
        first_token=last[..., 0].copy(),
        count_above_half=(last > 0.5).sum(axis=-1),
        head_similarity=np.stack([cosine_matrix(r) for r in last]),
    )


def odd_even_similarity(stats: DistributionStats) -> np.ndarray:
    """Per layer, mean cosine between even-indexed and odd-indexed heads' last rows."""
    sim = stats.head_similarity
    n = sim.shape[1]
    even, odd = np.arange(0, n, 2), np.arange(1, n, 2)
    if odd.size == 0:
        return np.ones(sim.shape[0])
    return sim[:, even][:, :, odd].mean(axis=(1, 2))


@dataclass
class DisturbanceLevel:
    level: float
    realized_mass_fraction: float
    abs_diff: np.ndarray   # [layers] mean |logit diff| of each layer's logit-lens output
    sq_diff: np.ndarray    # [layers] mean squared logit diff
    argmax_match: bool
    rescaled: bool
    min_row_sum: float     # smallest touched row sum after the hook

    @property
    def final_abs_diff(self) -> float:
        return float(self.abs_diff[-1])


@dataclass
class DisturbanceReport:
    levels: list[DisturbanceLevel] = field(default_factory=list)

    def csv_rows(self) -> list[list]:
        rows = []
        for lv in self.levels:
            for layer, (a, q) in enumerate(zip(lv.abs_diff, lv.sq_diff)):
                rows.append([lv.level, lv.realized_mass_fraction, layer, float(a), float(q),
                             lv.argmax_match, lv.rescaled])
        return rows


def elimination_hook(threshold: float, rescale: bool, tally: Optional[dict] = None):
    """Zero weights below ``threshold``; optionally renormalize rows to 1.

    A row's largest weight is always kept so rescaling stays defined.
    """

    def hook(att: np.ndarray) -> np.ndarray:
        if threshold <= 0:
            out = att
        else:
            row_max = att.max(axis=-1, keepdims=True)
            out = np.where((att >= threshold) | (att == row_max), att, 0.0)
        sums = out.sum(axis=-1, keepdims=True)
        if tally is not None:
            tally["removed"] += float(att.sum() - out.sum())
            tally["total"] += float(att.sum())
        if rescale and threshold > 0:
            out = out / sums
            sums = out.sum(axis=-1, keepdims=True)
        if tally is not None:
            tally["min_row_sum"] = min(tally["min_row_sum"], float(sums.min()))
        return out

    return hook


def _hooked_layers(n_layers: int, skip_first_layer: bool) -> range:
    return range(1 if skip_first_layer else 0, n_layers)


def thresholds_for_mass(
    trace: LayerTrace, fractions: Sequence[float], skip_first_layer: bool = True
) -> list[float]:
    """Thresholds under which the given fractions of attention mass fall.

    Computed from the pooled causal weights of the hooked layers in an
    unmodified trace.  Fraction 0 maps to threshold 0.
    """
    pooled = []
    for L in _hooked_layers(trace.n_layers, skip_first_layer):
        att = trace.attention[L]
        l = att.shape[-1]
        pooled.append(att[..., np.tril(np.ones((l, l), dtype=bool))].ravel())
    w = np.sort(np.concatenate(pooled))
    cum = np.cumsum(w) / w.sum()
    out = []
    for f in fractions:
        if f <= 0:
            out.append(0.0)
            continue
        idx = int(np.searchsorted(cum, f, side="left"))
        out.append(float(w[min(idx, w.size - 1)]))
    return out


def disturbance_experiment(
    weights: ModelWeights,
    tokens: Sequence[int],
    levels: Sequence[float],
    rescale: bool,
    skip_first_layer: bool = True,
) -> DisturbanceReport:
    """Compare each layer's logit-lens output with and without elimination.

    ``levels`` are absolute weight thresholds, processed in ascending order.
    """
    if not levels:
        return DisturbanceReport()
    if len(tokens) < 16:
        raise ValueError(f"need at least 16 tokens, got {len(tokens)}")
    base = forward(weights, tokens)
    base_logits = [project_logits(weights, h) for h in base.hidden]
    report = DisturbanceReport()
    for level in sorted(levels):
        tally = {"removed": 0.0, "total": 0.0, "min_row_sum": np.inf}
        hook = elimination_hook(level, rescale, tally)
        hooks = {L: hook for L in _hooked_layers(weights.config.n_layers, skip_first_layer)}
        trace = forward(weights, tokens, hooks)
        lens = [project_logits(weights, h) for h in trace.hidden]
        diffs = [a - b for a, b in zip(lens, base_logits)]
        report.levels.append(DisturbanceLevel(
            level=float(level),
            realized_mass_fraction=tally["removed"] / tally["total"] if tally["total"] else 0.0,
            abs_diff=np.array([np.abs(d).mean() for d in diffs]),
            sq_diff=np.array([(d * d).mean() for d in diffs]),
            argmax_match=bool(np.argmax(trace.logits[-1]) == np.argmax(base.logits[-1])),
            rescaled=rescale,
            min_row_sum=tally["min_row_sum"],
        ))
    return report


@dataclass
class OverlapReport:
    k: int
    pairs: list[tuple[int, int]]
    jaccard: list[float]
    shift_hist: list[dict[int, int]]  # per pair: p - p' of nearest recurrence -> count


def _top_sets(trace: LayerTrace, weights: ModelWeights, layer: int, k: int) -> list[set]:
    return [set(row.tolist()) for row in logit_lens(trace, layer, weights, k)]


def overlap_between(trace: LayerTrace, weights: ModelWeights, a: int, b: int, k: int) -> tuple[float, dict[int, int]]:
    """Mean per-position Jaccard of top-k sets of layers ``a`` and ``b``.

    The histogram maps, for each top-k token of layer ``b`` at position p,
    the offset ``p - p'`` of the nearest position p' where layer ``a`` has it
    in its top-k (ties prefer p' <= p).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    sa, sb = _top_sets(trace, weights, a, k), _top_sets(trace, weights, b, k)
    jac = float(np.mean([len(x & y) / len(x | y) for x, y in zip(sa, sb)]))
    where: dict[int, list[int]] = {}
    for p, s in enumerate(sa):
        for t in s:
            where.setdefault(t, []).append(p)
    hist: Counter = Counter()
    for p, s in enumerate(sb):
        for t in s:
            if t in where:
                best = min(where[t], key=lambda q: (abs(p - q), q > p))
                hist[p - best] += 1
    return jac, dict(sorted(hist.items()))


def layer_token_overlap(trace: LayerTrace, weights: ModelWeights, k: int) -> OverlapReport:
    pairs = [(j, j + 1) for j in range(trace.n_layers - 1)]
    jac, hists = [], []
    for a, b in pairs:
        j, h = overlap_between(trace, weights, a, b, k)
        jac.append(j)
        hists.append(h)
    return OverlapReport(k, pairs, jac, hists)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(x, y).statistic)
