"""Regenerate the regression goldens under tests/golden/.

Only run this after a deliberate, verified change to model numerics; the
test suite compares against whatever this script last wrote.
"""

import json
import shutil
import sys
from pathlib import Path

import numpy as np

from attn_transition import cli
from attn_transition.analysis import layer_token_overlap
from attn_transition.model import ModelConfig, forward, init_random, save_weights, tokens_from_bytes
from attn_transition.transition import TransitionParams, compare_generation, run_with_transition

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden"
FIXTURES = ROOT / "tests" / "fixtures"

FORWARD_TEXT = "attention shift!"  # 16 bytes
CLI_GOLDENS = {"run": "run", "sweep": "sweep_grid"}


def main() -> int:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    weights = init_random(ModelConfig(rng_seed=42))
    save_weights(weights, GOLDEN / "toy_seed42.atnt")
    (GOLDEN / "checksum_seed42.txt").write_text(weights.checksum() + "\n")

    toks = tokens_from_bytes(FORWARD_TEXT)
    assert len(toks) == 16
    np.save(GOLDEN / "forward_logits_seed42.npy", forward(weights, toks).logits)

    prompt = np.random.default_rng(7).integers(0, 256, 128).tolist()
    params = TransitionParams(alpha=1.0, beta=0.5, lay=2, interval=16)
    base = forward(weights, prompt)
    trans = run_with_transition(weights, prompt, params)
    comp = compare_generation(weights, prompt, 8, params)
    overlap = layer_token_overlap(forward(weights, np.random.default_rng(5).integers(0, 256, 48).tolist()), weights, 5)
    (GOLDEN / "transition_seed42.json").write_text(json.dumps({
        "final_logit_l2": float(np.linalg.norm(trans.logits[-1] - base.logits[-1])),
        "baseline": comp.baseline,
        "transition": comp.transition,
        "overlap_jaccard_k5": overlap.jaccard,
    }, indent=2, sort_keys=True) + "\n")

    for cmd, fixture in CLI_GOLDENS.items():
        out = GOLDEN / "cli" / fixture
        if out.exists():
            shutil.rmtree(out)
        rc = cli.main([cmd, "--config", str(FIXTURES / f"{fixture}.json"), "--out", str(out)])
        if rc != 0:
            print(f"{cmd} failed with exit code {rc}", file=sys.stderr)
            return rc
    print(f"goldens written to {GOLDEN}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
