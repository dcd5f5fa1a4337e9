"""Command-line experiment runner.

Usage: ``python -m attn_transition <subcommand> --config cfg.json --out DIR``.
Exit status is 0 on success, 2 for configuration errors and 3 for runtime
or contract errors.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import analysis
from .attention import ContractError
from .config import ConfigError, ExperimentConfig, load_config
from .model import InputError, WeightFormatError, forward, save_weights
from .numerics import DimensionError, DomainError
from .rope import RopeConfig, decay_curve
from .transition import (
    GenerationComparison,
    IntervalError,
    ScheduleError,
    TransitionParams,
    compare_generation,
)

log = logging.getLogger("attn_transition")

RUNTIME_ERRORS = (
    ScheduleError, IntervalError, InputError, WeightFormatError,
    ContractError, DimensionError, DomainError, OSError, ValueError,
)

SUMMARY_COLUMNS = [
    "alpha", "beta", "lay", "n_steps", "continuation_match", "first_divergence",
    "final_logit_l2", "mean_logit_l2", "n_dispense", "mean_eliminated",
    "mean_added", "mean_post_sum", "eliminated_entries",
]
DISTURB_COLUMNS = ["level", "realized_mass_fraction", "layer", "abs_diff", "sq_diff", "argmax_match", "rescaled"]


def fmt(v: Any) -> str:
    """Fixed CSV field formatting: shortest round-trip floats, lowercase bools."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def summary_row(params: TransitionParams, comp: GenerationComparison) -> list:
    reports = [r for step in comp.reports for r in step]
    match = comp.baseline == comp.transition
    diverge = next((i for i, (a, b) in enumerate(zip(comp.baseline, comp.transition)) if a != b), -1)
    if reports:
        elim = float(np.mean([r.eliminated.mean() for r in reports]))
        added = float(np.mean([r.added.mean() for r in reports]))
        post = float(np.mean([r.post_sum.mean() for r in reports]))
        count = int(sum(int(r.n_eliminated.sum()) for r in reports))
    else:
        elim = added = 0.0
        post = 1.0
        count = 0
    return [
        float(params.alpha), float(params.beta), int(params.lay), len(comp.baseline), match, diverge,
        comp.logit_l2[-1] if comp.logit_l2 else 0.0,
        float(np.mean(comp.logit_l2)) if comp.logit_l2 else 0.0,
        len(reports), elim, added, post, count,
    ]


def cmd_gen_model(cfg: ExperimentConfig, out: Path, seed: Optional[int]) -> None:
    weights = cfg.load_model(seed)
    save_weights(weights, out / "model.atnt")
    write_json(out / "model.json", {"checksum": weights.checksum(), "config": weights.config.to_dict()})


def cmd_run(cfg: ExperimentConfig, out: Path, seed: Optional[int]) -> None:
    weights = cfg.load_model(seed)
    prompt = cfg.prompt_tokens(weights.config.vocab_size)
    params = cfg.transition
    comp = compare_generation(weights, prompt, cfg.n_new, params, cfg.start_interval)
    write_json(out / "run.json", {
        "prompt_length": len(prompt),
        "baseline": comp.baseline,
        "transition": comp.transition,
        "transition_enabled": params is not None,
        "logit_l2": comp.logit_l2,
    })
    write_csv(out / "steps.csv", ["step", "baseline_token", "transition_token", "logit_l2"],
              ([i, a, b, d] for i, (a, b, d) in enumerate(zip(comp.baseline, comp.transition, comp.logit_l2))))
    records = []
    for step, reps in enumerate(comp.reports):
        for r in reps:
            records.append({"step": step, **r.to_record()})
    write_json(out / "reports.json", records)
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, [summary_row(params or TransitionParams(lay=0), comp)])


def sweep_cells(cfg: ExperimentConfig) -> list[TransitionParams]:
    base = cfg.transition or TransitionParams()
    grid = cfg.grid or {}
    axes = [sorted(grid.get(name, [getattr(base, name)])) for name in ("alpha", "beta", "lay")]
    n = int(np.prod([len(a) for a in axes]))
    if n > cfg.max_cells:
        raise ConfigError(f"grid has {n} cells, above the cap of {cfg.max_cells}")
    out = []
    for a, b, lay in itertools.product(*axes):
        d = base.to_dict()
        d.update(alpha=float(a), beta=float(b), lay=int(lay))
        out.append(TransitionParams.from_dict(d))
    return out


def cmd_sweep(cfg: ExperimentConfig, out: Path, seed: Optional[int], threads: int = 1) -> None:
    weights = cfg.load_model(seed)
    prompt = cfg.prompt_tokens(weights.config.vocab_size)
    cells = sweep_cells(cfg)

    def one(params):
        return summary_row(params, compare_generation(weights, prompt, cfg.n_new, params, cfg.start_interval))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(one, cells))
    write_csv(out / "sweep.csv", SUMMARY_COLUMNS, rows)


def cmd_analyze_dist(cfg: ExperimentConfig, out: Path, seed: Optional[int]) -> None:
    weights = cfg.load_model(seed)
    trace = forward(weights, cfg.prompt_tokens(weights.config.vocab_size))
    stats = analysis.distribution_stats(trace)
    rows = stats.rows()
    write_csv(out / "dist_stats.csv", list(rows[0]), (r.values() for r in rows))
    write_json(out / "dist_summary.json", {
        "seq_len": stats.seq_len,
        "n_layers": stats.n_layers,
        "head_similarity": stats.head_similarity.tolist(),
        "odd_even_similarity": analysis.odd_even_similarity(stats).tolist(),
    })


def cmd_disturb(cfg: ExperimentConfig, out: Path, seed: Optional[int]) -> None:
    weights = cfg.load_model(seed)
    tokens = cfg.prompt_tokens(weights.config.vocab_size)
    if cfg.mass_levels is not None:
        levels = analysis.thresholds_for_mass(forward(weights, tokens), cfg.mass_levels, cfg.skip_first_layer)
    elif cfg.levels is not None:
        levels = cfg.levels
    else:
        raise ConfigError("disturb needs 'levels' or 'mass_levels'")
    rows, summary = [], []
    for rescale in cfg.rescale:
        rep = analysis.disturbance_experiment(weights, tokens, levels, rescale, cfg.skip_first_layer)
        rows += rep.csv_rows()
        summary += [{
            "level": lv.level,
            "realized_mass_fraction": lv.realized_mass_fraction,
            "final_abs_diff": lv.final_abs_diff,
            "argmax_match": lv.argmax_match,
            "rescaled": lv.rescaled,
            "min_row_sum": lv.min_row_sum,
        } for lv in rep.levels]
    write_csv(out / "disturbance.csv", DISTURB_COLUMNS, rows)
    write_json(out / "disturbance.json", summary)


def cmd_overlap(cfg: ExperimentConfig, out: Path, seed: Optional[int]) -> None:
    weights = cfg.load_model(seed)
    trace = forward(weights, cfg.prompt_tokens(weights.config.vocab_size))
    rep = analysis.layer_token_overlap(trace, weights, cfg.k)
    write_csv(out / "overlap.csv", ["layer_a", "layer_b", "jaccard"],
              ([a, b, j] for (a, b), j in zip(rep.pairs, rep.jaccard)))
    write_csv(out / "overlap_shifts.csv", ["layer_a", "layer_b", "shift", "count"],
              ([a, b, s, c] for (a, b), h in zip(rep.pairs, rep.shift_hist) for s, c in h.items()))


def cmd_decay_bound(d: int, base: float, max_dist: int, out: Path) -> None:
    curve = decay_curve(max_dist, RopeConfig(d, base, max(max_dist, 1)))
    write_csv(out / "decay.csv", ["rel_dist", "bound"], enumerate(curve.tolist()))


COMMANDS = ["gen-model", "run", "sweep", "analyze-dist", "disturb", "overlap", "decay-bound"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attn-transition", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, required=name != "decay-bound")
        sp.add_argument("--out", type=Path, required=True)
        sp.add_argument("--seed", type=int, default=None, help="overrides the model rng_seed")
        sp.add_argument("--threads", type=int, default=1)
        if name == "decay-bound":
            sp.add_argument("--d", type=int, default=None)
            sp.add_argument("--base", type=float, default=None)
            sp.add_argument("--max-dist", type=int, default=None)
    return p


def dispatch(args: argparse.Namespace) -> None:
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "decay-bound":
        opts = {"head_dim": 128, "theta_base": 10000.0, "max_dist": 2048}
        if args.config is not None:
            opts.update(load_config(args.config).decay or {})
        for key, flag in (("head_dim", args.d), ("theta_base", args.base), ("max_dist", args.max_dist)):
            if flag is not None:
                opts[key] = flag
        try:
            cmd_decay_bound(int(opts["head_dim"]), float(opts["theta_base"]), int(opts["max_dist"]), out)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return
    cfg = load_config(args.config)
    if args.command == "sweep":
        cmd_sweep(cfg, out, args.seed, args.threads)
    else:
        handler = {
            "gen-model": cmd_gen_model,
            "run": cmd_run,
            "analyze-dist": cmd_analyze_dist,
            "disturb": cmd_disturb,
            "overlap": cmd_overlap,
        }[args.command]
        handler(cfg, out, args.seed)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        dispatch(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except RUNTIME_ERRORS as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
