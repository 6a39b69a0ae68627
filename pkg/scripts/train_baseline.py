#!/usr/bin/env python3
"""Train the unloaded walking baseline at desk-scale defaults.

Any extra arguments are passed straight to `loadgait train`, so e.g.
`scripts/train_baseline.py --seed 3 --iterations 150` works.
"""

import sys

from loadgait.cli import main

if __name__ == "__main__":
    argv = ["train", "--out", "runs/baseline", "--load", "unloaded"]
    sys.exit(main(argv + sys.argv[1:]))
