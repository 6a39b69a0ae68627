#!/usr/bin/env python3
"""Train one specialized policy per load kind (sequentially).

Each run lands in runs/specialist-<kind>/. Extra arguments pass through to
every `loadgait train` invocation (e.g. --iterations 150 --seed 3).
"""

import sys

from loadgait.cli import main
from loadgait.config import LOAD_KINDS

if __name__ == "__main__":
    for kind in LOAD_KINDS:
        print(f"=== {kind} ===", flush=True)
        rc = main(["train", "--out", f"runs/specialist-{kind}",
                   "--load", kind, "--reward-mode", "specialized"]
                  + sys.argv[1:])
        if rc != 0:
            sys.exit(rc)
    sys.exit(0)
