"""OPP vs DARTS over several seeds on the S2 and S4 toy spaces.

Writes one compare directory per space under --out and prints the per-mode
medians (skip_connect / noise counts in the normal cell, retrained accuracy).

    python scripts/table3_direction.py --out runs/table3 --seeds 0 1 2 3 4 5 6
"""

import argparse
import dataclasses
import json
import time
from pathlib import Path

from progdarts.cli import do_compare
from progdarts.config import load_config

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/table3")
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(7)))
    ap.add_argument("--spaces", nargs="+", default=["S4", "S2"])
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    for space in args.spaces:
        cfg = load_config(ROOT / "configs" / f"{space.lower()}_toy.yaml")
        cfg = dataclasses.replace(cfg, seeds=tuple(args.seeds), workers=args.workers).validate()
        t0 = time.time()
        summary = do_compare(cfg, Path(args.out) / space)
        print(f"{space} ({time.time() - t0:.0f}s)")
        for row in summary["rows"]:
            print("  ", row["run_id"], "skip", row["skip_connect"], "noise", row["noise"],
                  "acc", round(row["test_acc"], 4))
        print(json.dumps(summary["aggregate"], indent=2))


if __name__ == "__main__":
    main()
