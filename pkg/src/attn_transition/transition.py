"""Interval-scheduled attention elimination and redistribution.

Two pieces:

* :func:`plan_schedule` picks which (layer, interval) pairs get modified.
  The first layer and the last two layers are never touched, and intervals
  are assigned sequentially starting from the third one, ``lay`` per layer.
* :func:`dispense` modifies one interval's rows of a post-softmax attention
  tensor: weights under ``alpha / e`` are zeroed and a multiple of the
  removed mass is spread over the two preceding intervals.

:func:`run_with_transition` wires both into a model forward pass.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .model import LayerTrace, ModelWeights, forward, greedy_generate


class ScheduleError(ValueError):
    pass


class IntervalError(ValueError):
    pass


class DegenerateEliminationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TransitionParams:
    alpha: float = 1.0
    beta: float = 0.5
    lay: int = 2
    interval: int = 16
    near_factor: float = 7.0
    far_factor: float = 3.0
    mask_floor: float = 0.01
    halve_first_token: bool = False
    # per-row beta chosen so every modified row sums back to its original mass
    renormalize: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.lay < 0:
            raise ValueError(f"lay must be >= 0, got {self.lay}")
        if self.interval < 1:
            raise ValueError(f"interval must be >= 1, got {self.interval}")
        if self.near_factor < 0 or self.far_factor < 0:
            raise ValueError("dispensation factors must be >= 0")
        if not 0 < self.mask_floor <= 1:
            raise ValueError(f"mask_floor must lie in (0, 1], got {self.mask_floor}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TransitionParams":
        return cls(**d)


@dataclass(frozen=True)
class IntervalSchedule:
    interval: int
    entries: tuple[tuple[int, int, int], ...] = ()  # (layer, s, e)

    def for_layer(self, layer: int) -> list[tuple[int, int]]:
        return [(s, e) for lyr, s, e in self.entries if lyr == layer]

    @property
    def layers(self) -> list[int]:
        return sorted({lyr for lyr, _, _ in self.entries})

    def __len__(self) -> int:
        return len(self.entries)


def plan_schedule(seq_len: int, n_layers: int, params: TransitionParams, start_interval: int = 3) -> IntervalSchedule:
    """Sequential decision maker.

    Intervals are numbered from 1, interval k covering positions
    ``[(k-1)*i, k*i)``.  Layers 1 .. n_layers-3 each receive ``lay``
    consecutive intervals starting at ``start_interval``; scheduling stops at
    the first layer for which a full group of ``lay`` intervals is no longer
    available.
    """
    i = params.interval
    if n_layers < 4:
        raise ScheduleError(f"n_layers must be >= 4 to leave an eligible layer, got {n_layers}")
    if start_interval < 3:
        raise ScheduleError(f"start_interval must be >= 3 so that s >= 2*interval, got {start_interval}")
    if params.lay == 0:
        return IntervalSchedule(i)
    if seq_len < start_interval * i:
        raise ScheduleError(
            f"seq_len {seq_len} < start_interval {start_interval} * interval {i}: "
            "no interval is eligible"
        )
    total = seq_len // i
    k = start_interval
    entries = []
    for layer in range(1, n_layers - 2):
        if k + params.lay - 1 > total:
            break
        for _ in range(params.lay):
            entries.append((layer, (k - 1) * i, k * i))
            k += 1
    return IntervalSchedule(i, tuple(entries))


def interval_count(seq_len: int, interval: int) -> int:
    return seq_len // interval


@dataclass
class DispenseReport:
    s: int
    e: int
    layer: Optional[int]
    eliminated: np.ndarray     # [b, n, i] eliminated mass per row, first-token half included
    mask_sum: np.ndarray       # [b, n, i]
    kept: np.ndarray           # [b, n, i] row mass over keys [0, e) after elimination
    added: np.ndarray          # [b, n, i]
    post_sum: np.ndarray       # [b, n, i] full row sum after dispensation
    n_eliminated: np.ndarray   # [b, n, i] count of zeroed causal entries
    degenerate: bool = False

    def to_record(self) -> dict[str, Any]:
        i = self.e - self.s
        return {
            "layer": self.layer,
            "interval": self.e // i,
            "s": self.s,
            "e": self.e,
            "eliminated": self.eliminated.tolist(),
            "mask_sum": self.mask_sum.tolist(),
            "kept": self.kept.tolist(),
            "added": self.added.tolist(),
            "post_sum": self.post_sum.tolist(),
            "n_eliminated": self.n_eliminated.tolist(),
            "degenerate": self.degenerate,
        }


def dispense(
    att: np.ndarray,
    s: int,
    e: int,
    params: TransitionParams,
    layer: Optional[int] = None,
    warn: bool = True,
) -> tuple[np.ndarray, DispenseReport]:
    """Eliminate and redistribute attention for query rows ``[s, e)``.

    Returns a modified copy of ``att`` and the per-row bookkeeping.  Only rows
    ``[s, e)`` and key columns ``[0, e)`` can change.  A bound that reaches a
    row's largest weight is flagged in the report and, if ``warn``, raises a
    :class:`DegenerateEliminationWarning`.
    """
    att = np.asarray(att, dtype=np.float64)
    i = e - s
    if att.ndim != 4:
        raise IntervalError(f"attention tensor must be rank 4, got shape {att.shape}")
    if i != params.interval:
        raise IntervalError(f"interval [{s}, {e}) has size {i}, params.interval is {params.interval}")
    if not (2 * i <= s < e <= att.shape[2]):
        raise IntervalError(f"need 2*{i} <= s={s} < e={e} <= query length {att.shape[2]}")
    rows_in = att[:, :, s:e, :e]
    if np.any(rows_in.sum(axis=-1) > 1 + 1e-6):
        raise IntervalError(f"rows [{s}, {e}) are not normalized")

    out = att.copy()
    bound = params.alpha / e
    w = out[:, :, s:e, :e].copy()
    degenerate = bool(np.any(bound >= w.max(axis=-1)))
    if degenerate and warn:
        warnings.warn(
            f"bound {bound:.4g} reaches the largest weight in some row of [{s}, {e})",
            DegenerateEliminationWarning,
            stacklevel=2,
        )

    first = np.zeros(w.shape[:-1])
    if params.halve_first_token:
        first = w[..., 0] * 0.5
        w[..., 0] = w[..., 0] - first

    drop = w < bound
    causal = np.arange(e)[None, :] <= np.arange(s, e)[:, None]
    eliminated = np.where(drop, w, 0.0).sum(axis=-1) + first
    w[drop] = 0.0
    kept = w.sum(axis=-1)

    window = w[..., s - 2 * i : e - i]
    mask_sum = np.where(window >= bound, 1.0, params.mask_floor).sum(axis=-1)
    if params.renormalize:
        beta = mask_sum / ((params.near_factor + params.far_factor) * i)
    else:
        beta = params.beta
    quantum = eliminated / mask_sum * beta

    w[..., s - i : e - i] += params.near_factor * quantum[..., None]
    w[..., s - 2 * i : e - 2 * i] += params.far_factor * quantum[..., None]
    out[:, :, s:e, :e] = w

    added = (params.near_factor + params.far_factor) * i * quantum
    report = DispenseReport(
        s=s,
        e=e,
        layer=layer,
        eliminated=eliminated,
        mask_sum=mask_sum,
        kept=kept,
        added=added,
        post_sum=out[:, :, s:e, :].sum(axis=-1),
        n_eliminated=(drop & causal).sum(axis=-1),
        degenerate=degenerate,
    )
    return out, report


def transition_hooks(schedule: IntervalSchedule, params: TransitionParams, sink: Optional[list] = None) -> dict:
    """Per-layer hooks applying every scheduled interval of that layer in order."""
    hooks = {}
    for layer in schedule.layers:
        spans = schedule.for_layer(layer)

        def hook(att, spans=spans, layer=layer):
            for s, e in spans:
                att, rep = dispense(att, s, e, params, layer=layer, warn=False)
                if sink is not None:
                    sink.append(rep)
            return att

        hooks[layer] = hook
    return hooks


def run_with_transition(
    weights: ModelWeights,
    tokens: Sequence[int],
    params: TransitionParams,
    start_interval: int = 3,
) -> LayerTrace:
    """Forward pass with the planned transition hooks installed.

    The dispense reports of the pass are attached as ``trace.reports``.
    """
    schedule = plan_schedule(len(tokens), weights.config.n_layers, params, start_interval)
    reports: list[DispenseReport] = []
    trace = forward(weights, tokens, transition_hooks(schedule, params, reports))
    trace.reports = reports
    return trace


@dataclass
class GenerationComparison:
    baseline: list[int]
    transition: list[int]
    logit_l2: list[float] = field(default_factory=list)
    reports: list[list[DispenseReport]] = field(default_factory=list)  # per generation step


def compare_generation(
    weights: ModelWeights,
    prompt: Sequence[int],
    n_new: int,
    params: Optional[TransitionParams],
    start_interval: int = 3,
) -> GenerationComparison:
    """Greedy continuations with and without the transition.

    ``logit_l2`` holds, per step, the L2 distance between the two runs'
    final-position logits, each run conditioned on its own continuation.
    ``params=None`` disables the transition.
    """
    base, base_logits = greedy_generate(weights, prompt, n_new)
    if params is None:
        return GenerationComparison(base, list(base), [0.0] * len(base), [[] for _ in base])
    step_reports: list[list[DispenseReport]] = []

    def run(toks):
        trace = run_with_transition(weights, toks, params, start_interval)
        step_reports.append(trace.reports)
        return trace

    trans, trans_logits = greedy_generate(weights, prompt, n_new, run=run)
    l2 = [float(np.linalg.norm(a - b)) for a, b in zip(base_logits, trans_logits)]
    return GenerationComparison(base, trans, l2, step_reports)
