"""Shared train-then-evaluate loop for the scripts in this directory."""

import time
from pathlib import Path

from afn import evaluator as E
from afn.config import dump_config
from afn.datagen import oracle_accuracy_enumerated
from afn.recipes import prepare
from afn.trainer import init_state, save_checkpoint, train


def run(cfg, out: Path, steps: int | None = None, with_prototypes: bool = True) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    data = prepare(cfg)
    g = data.grammar
    oracle = oracle_accuracy_enumerated(g)
    print(f"{len(data.train)} train / {len(data.test)} test videos, oracle y_next accuracy {oracle:.4f}")
    state = init_state(cfg, g.n_actions, len(g.activity_names), data.channels, data.image_size, data.train)
    t0 = time.perf_counter()
    rows = train(state, data.train, steps or cfg.trainer.steps, log_path=out / "train_log.csv")
    save_checkpoint(state, out / "checkpoint.npz")
    print(f"trained {state.step} steps in {time.perf_counter() - t0:.0f} s, last L_tot {rows[-1]['L_tot']:.4f}")
    records = E.run_inference(
        state.params, cfg, data.test, g.end_label, state.prototypes if with_prototypes else None
    )
    summary = E.write_reports(records, out / "eval", g.action_names, g.activity_names, g.end_label)
    summary["oracle"] = oracle
    print(
        f"test y_now {summary['anticipation_accuracy']:.4f}  y_next {summary['forecasting_accuracy']:.4f}  "
        f"({summary['forecasting_accuracy'] / oracle:.3f} of oracle); reports in {out / 'eval'}"
    )
    return summary
