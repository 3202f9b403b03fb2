"""Train on the default stochastic grammar (1000 videos) and compare y_next accuracy with the Bayes oracle."""

import argparse
from pathlib import Path

from _common import run

from afn.recipes import desk_config

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int)
    p.add_argument("--videos", type=int, help="dataset size (default 1000)")
    args = p.parse_args()
    cfg = desk_config(args.seed)
    if args.videos:
        cfg.grammar.n_videos = args.videos
    run(cfg, Path(args.out), args.steps)
