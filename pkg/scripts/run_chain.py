"""Train on the noiseless two-activity chain grammar and evaluate on its test split."""

import argparse
from pathlib import Path

from _common import run

from afn.recipes import chain_config

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/chain")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int)
    args = p.parse_args()
    run(chain_config(args.seed), Path(args.out), args.steps)
