"""Named run configurations shared by the acceptance suite and the scripts.

Each recipe returns a validated ``RunConfig``; ``prepare`` turns one into a grammar
and train/validation/test video lists without touching the filesystem.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import RunConfig
from .datagen import ActivityGrammar, Video, generate_dataset, generate_grammar, split_dataset


def chain_config(seed: int = 0) -> RunConfig:
    """Two activities of four deterministic actions, noiseless frames."""
    cfg = RunConfig(seed=seed, out_dir="runs/chain")
    g = cfg.grammar
    g.kind, g.n_activities, g.actions_per_activity, g.vocab_size = "chain", 2, 4, 8
    g.noise_sigma = 0.0
    g.n_videos = 60
    cfg.trainer.steps = 2000
    return cfg.validate()


def desk_config(seed: int = 0) -> RunConfig:
    """Default stochastic grammar with enough videos that per-video histories cannot be memorised."""
    cfg = RunConfig(seed=seed, out_dir="runs/desk")
    cfg.grammar.n_videos = 1000
    cfg.model.dropout = 0.0
    t = cfg.trainer
    t.steps, t.decay, t.decay_interval, t.refresh_memory_every = 6000, 0.6, 1000, 500
    return cfg.validate()


def two_back_config(seed: int = 0, use_memory: bool = True) -> RunConfig:
    """Grammar whose shared middle action has a successor fixed by the action before it."""
    cfg = RunConfig(seed=seed, out_dir="runs/two_back" + ("" if use_memory else "_ablation"))
    g = cfg.grammar
    g.kind, g.n_activities, g.noise_sigma, g.n_videos = "two_back", 4, 0.0, 80
    cfg.model.dropout = 0.2
    cfg.model.use_memory = use_memory
    cfg.trainer.steps = 2000
    cfg.trainer.refresh_memory_every = 100
    return cfg.validate()


@dataclass
class Prepared:
    grammar: ActivityGrammar
    train: list[Video]
    validation: list[Video]
    test: list[Video]

    @property
    def channels(self) -> int:
        return sum(self.grammar.channel_groups.values())

    @property
    def image_size(self) -> int:
        return self.grammar.image_size[0]


def prepare(cfg: RunConfig) -> Prepared:
    """Grammar, dataset and split with the same seeding as ``afn gen-data``."""
    grammar = generate_grammar(cfg.grammar, seed=cfg.seed)
    videos = generate_dataset(grammar, cfg.grammar.n_videos, seed=cfg.seed + 1)
    split = split_dataset(videos, cfg.split, seed=cfg.seed)
    by_id = {v.video_id: v for v in videos}
    return Prepared(
        grammar,
        [by_id[i] for i in split.train],
        [by_id[i] for i in split.validation],
        [by_id[i] for i in split.test],
    )
