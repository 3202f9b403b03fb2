"""Full model against a memory-zeroed ablation on the two-back grammar, where the
successor of the shared middle action depends on the action that preceded it."""

import argparse
from pathlib import Path

from _common import run

from afn.recipes import two_back_config

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/two_back")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int)
    args = p.parse_args()
    full = run(two_back_config(args.seed, use_memory=True), Path(args.out) / "full", args.steps, with_prototypes=False)
    ablated = run(two_back_config(args.seed, use_memory=False), Path(args.out) / "ablation", args.steps, with_prototypes=False)
    gap = full["forecasting_accuracy"] - ablated["forecasting_accuracy"]
    print(f"y_next: full {full['forecasting_accuracy']:.4f}, ablation {ablated['forecasting_accuracy']:.4f}, gap {100 * gap:.1f} points")
