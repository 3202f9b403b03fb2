"""Command-line entry point: ``afn gen-data | train | eval | gradcheck``.

Exit codes: 0 ok, 1 usage or config error, 2 data or I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluator, gradcheck_suite
from .autodiff import NumericError
from .config import ConfigError, dump_config, load_config
from .datagen import (
    ActivityGrammar,
    DatasetMeta,
    DatasetSplit,
    GenerationError,
    GrammarError,
    ParseError,
    generate_dataset,
    generate_grammar,
    oracle_accuracy_enumerated,
    oracle_accuracy_simulated,
    read_dataset,
    split_dataset,
    write_dataset,
)
from .sampler import SamplingError
from .trainer import CheckpointError, init_state, load_checkpoint, save_checkpoint, train

log = logging.getLogger("afn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRAMMAR_FILE, DATASET_FILE, SPLIT_FILE = "grammar.json", "dataset.jsonl", "split.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args):
    overrides = {"seed": args.seed} if args.seed is not None else None
    cfg = load_config(args.config, overrides=overrides)
    return cfg.validate()


def _out(args, cfg) -> Path:
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(data_dir):
    data_dir = Path(data_dir)
    meta, videos = read_dataset(data_dir / DATASET_FILE)
    split_path = data_dir / SPLIT_FILE
    if not split_path.exists():
        raise FileNotFoundError(f"split file not found: {split_path}")
    split = DatasetSplit(**json.loads(split_path.read_text()))
    return meta, videos, split


def _subset(videos, ids):
    by_id = {v.video_id: v for v in videos}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ParseError(f"split names videos absent from the dataset: {missing[:5]}")
    return [by_id[i] for i in ids]


# -- commands ------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    grammar = generate_grammar(cfg.grammar, seed=cfg.seed)
    videos = generate_dataset(grammar, cfg.grammar.n_videos, seed=cfg.seed + 1)
    grammar.save(out / GRAMMAR_FILE)
    write_dataset(videos, DatasetMeta.from_grammar(grammar), out / DATASET_FILE)
    split = split_dataset(videos, cfg.split, seed=cfg.seed)
    (out / SPLIT_FILE).write_text(json.dumps(split.parts(), indent=1) + "\n")
    dump_config(cfg, out / "config.yaml")
    enumerated = oracle_accuracy_enumerated(grammar)
    report = {"oracle_accuracy_enumerated": enumerated, "n_videos": len(videos)}
    if args.simulate:
        report["oracle_accuracy_simulated"] = oracle_accuracy_simulated(grammar, args.simulate, seed=cfg.seed)
    (out / "oracle.json").write_text(json.dumps(report, indent=1) + "\n")
    print(f"oracle accuracy (enumerated): {enumerated:.6f}")
    if "oracle_accuracy_simulated" in report:
        print(f"oracle accuracy (simulated, {args.simulate} s): {report['oracle_accuracy_simulated']:.6f}")
    print(f"wrote {len(videos)} videos to {out / DATASET_FILE}")
    return EXIT_OK


def cmd_train(args) -> int:
    out = Path(args.out) if args.out else None
    ckpt = (out / "checkpoint.npz") if out else None
    meta, videos, split = _load_data(args.data)
    train_videos = _subset(videos, split.train)
    if args.resume and ckpt is not None and ckpt.exists():
        state = load_checkpoint(ckpt)
        log.info("resumed from %s at step %d", ckpt, state.step)
    else:
        cfg = _config(args)
        out = out or Path(cfg.out_dir)
        ckpt = out / "checkpoint.npz"
        channels = sum(meta.channel_groups.values())
        state = init_state(cfg, len(meta.action_names), len(meta.activity_names), channels, meta.image_size[0], train_videos)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(state.config, out / "config.yaml")
    total = args.steps if args.steps is not None else state.config.trainer.steps
    remaining = max(0, total - state.step)
    t0 = time.perf_counter()
    rows = train(state, train_videos, remaining, log_path=out / "train_log.csv", checkpoint_dir=out)
    save_checkpoint(state, ckpt)
    if rows:
        last = rows[-1]
        print(
            f"step {state.step}: L_tot {last['L_tot']:.4f} acc_now {last['acc_now']:.3f} "
            f"acc_next {last['acc_next']:.3f} ({time.perf_counter() - t0:.1f} s)"
        )
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    state = load_checkpoint(args.checkpoint)
    meta, videos, split = _load_data(args.data)
    part = getattr(split, args.split)
    videos = _subset(videos, part)
    out = Path(args.out or Path(args.checkpoint).parent / "eval")
    records = evaluator.run_inference(state.params, state.config, videos, meta.end_label, state.prototypes)
    if args.oracle:
        grammar = ActivityGrammar.load(Path(args.data) / GRAMMAR_FILE)
        records = evaluator.oracle_records(records, grammar)
    lam = evaluator.LAMBDA_PRESETS.get(str(args.lam).lower(), None)
    lam = lam if lam is not None else float(args.lam)
    summary = evaluator.write_reports(
        records, out, meta.action_names, meta.activity_names, meta.end_label, lam=lam, bin_width_s=args.bin_width
    )
    for k in ("anticipation_accuracy", "forecasting_accuracy", "activity_accuracy", "delta_minus"):
        v = summary[k]
        print(f"{k}: {'n/a' if v is None else f'{v:.6f}'}")
    print(f"reports: {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    g = cfg.grammar
    results = gradcheck_suite.run_suite(cfg.model, sum(g.channel_groups), g.image_size, g.vocab_size, seed=cfg.seed)
    print(gradcheck_suite.format_report(results))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        evaluator.write_csv(
            out / "gradcheck.csv",
            ["check", "max_rel_error", "tolerance", "probed", "passed"],
            [[r.name, r.max_rel_error, r.tolerance, r.n_probed, int(r.passed)] for r in results],
        )
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="afn", description="Anticipation and forecasting network on synthetic activity videos.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("gen-data", help="generate a grammar and a synthetic dataset")
    common(sp)
    sp.add_argument("--simulate", type=int, default=0, metavar="SECONDS", help="also estimate the oracle by simulation")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train on the train split")
    common(sp)
    sp.add_argument("--data", required=True, help="directory written by gen-data")
    sp.add_argument("--steps", type=int, help="total step count (defaults to trainer.steps)")
    sp.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.npz")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="sequential inference and metric reports")
    common(sp)
    sp.add_argument("--data", required=True, help="directory written by gen-data")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("train", "test", "validation"), default="test")
    sp.add_argument("--lambda", dest="lam", default="2.0", help="high-variance threshold or preset (mpii, breakfast, charades)")
    sp.add_argument("--bin-width", type=float, default=1.0, help="seconds per time-to-next bucket")
    sp.add_argument("--oracle", action="store_true", help="score the Bayes oracle instead of the model")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(sp)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"afn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"afn: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ParseError, GrammarError, GenerationError, SamplingError, CheckpointError) as exc:
        print(f"afn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"afn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
