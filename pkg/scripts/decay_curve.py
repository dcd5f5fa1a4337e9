"""Print the rotary long-range decay bound and where it falls off.

    python3 scripts/decay_curve.py --d 128 --max-dist 2048 --csv decay.csv
"""

import argparse
import csv

import numpy as np

from attn_transition.rope import RopeConfig, decay_curve


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=128)
    ap.add_argument("--base", type=float, default=10000.0)
    ap.add_argument("--max-dist", type=int, default=2048)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args()

    curve = decay_curve(args.max_dist, RopeConfig(args.d, args.base, max(args.max_dist, 1)))
    peak = curve[0]
    print(f"peak {peak:.4f} at rel_dist 0; value at {args.max_dist}: {curve[-1]:.4f} ({curve[-1] / peak:.3f} of peak)")
    for frac in (0.5, 0.25, 0.1):
        below = np.flatnonzero(curve < frac * peak)
        where = int(below[0]) if below.size else None
        print(f"first rel_dist below {frac:.0%} of peak: {where}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rel_dist", "bound"])
            w.writerows([r, repr(float(v))] for r, v in enumerate(curve))


if __name__ == "__main__":
    main()
