"""Sweep alpha x beta x lay on the toy model and rank the cells.

Runs the same grid as ``tests/fixtures/sweep_grid.json`` (optionally on a
longer prompt) and prints the cells whose greedy continuation moved most.
"""

import argparse
import csv
import io
import json
import tempfile
from pathlib import Path

from attn_transition import cli

FIXTURE = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "sweep_grid.json"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--prompt-length", type=int, default=None)
    ap.add_argument("--n-new", type=int, default=None)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--top", type=int, default=10)
    ap.add_argument("--out", default=None, help="directory for sweep.csv (default: temporary)")
    args = ap.parse_args()

    cfg = json.loads(FIXTURE.read_text())
    if args.prompt_length:
        cfg["prompt"] = {"random": {"length": args.prompt_length, "seed": 7}}
    if args.n_new:
        cfg["n_new"] = args.n_new

    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = Path(tmp) / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out = Path(args.out or tmp)
        code = cli.main(["sweep", "--config", str(cfg_path), "--out", str(out), "--threads", str(args.threads)])
        if code:
            raise SystemExit(code)
        rows = list(csv.DictReader(io.StringIO((out / "sweep.csv").read_text())))

    rows.sort(key=lambda r: -float(r["final_logit_l2"]))
    print(f"{len(rows)} cells; {sum(r['continuation_match'] == 'false' for r in rows)} changed the continuation")
    print("alpha  beta  lay  first_div  final_l2")
    for r in rows[: args.top]:
        print(f"{float(r['alpha']):5.2f} {float(r['beta']):5.2f} {r['lay']:>4} {r['first_divergence']:>10} "
              f"{float(r['final_logit_l2']):9.4f}")


if __name__ == "__main__":
    main()
