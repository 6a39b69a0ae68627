#!/usr/bin/env python3
"""Carry-pole from scratch vs bootstrapped from a base checkpoint.

Usage: scripts/bootstrap_comparison.py BASE_CHECKPOINT [extra train flags]

Trains carry-pole twice (scratch and bootstrapped from the given unloaded
checkpoint), then compares the two learning curves at a mean-reward
threshold of 60.
"""

import sys

from loadgait.cli import main

if __name__ == "__main__":
    if len(sys.argv) < 2:
        print(__doc__.strip(), file=sys.stderr)
        sys.exit(2)
    base_ckpt, extra = sys.argv[1], sys.argv[2:]
    for name, init in (("scratch", "scratch"), ("bootstrapped", base_ckpt)):
        print(f"=== carry-pole {name} ===", flush=True)
        rc = main(["train", "--out", f"runs/carry-pole-{name}",
                   "--load", "carry-pole", "--init", init] + extra)
        if rc != 0:
            sys.exit(rc)
    sys.exit(main([
        "compare",
        "--curves", "runs/carry-pole-scratch/learning_curve.csv",
        "runs/carry-pole-bootstrapped/learning_curve.csv",
        "--threshold", "60",
        "--out", "runs/bootstrap_comparison.json",
    ]))
