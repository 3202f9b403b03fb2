"""Sequential inference, anticipation/forecasting metrics and report files."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import model as afn_model
from .ism import MemoryBank
from .sampler import sample_clip

log = logging.getLogger(__name__)

LAMBDA_PRESETS = {"mpii": 2.0, "breakfast": 0.82, "charades": 0.94}
BIN_NAMES = ("begin_90_100", "middle_50_90", "late_1_50", "end_0_1")


@dataclass
class PredictionRecord:
    video_id: str
    t: float
    activity: int
    y_current: int
    y_next: int
    straddle: bool
    horizon_fraction: float
    time_to_next_start: float
    segment_index: int
    segment_start: float
    activity_pred: int | None = None
    y_current_pred: int | None = None
    y_next_pred: int | None = None

    @property
    def next_correct(self) -> bool:
        return not self.straddle and self.y_next_pred == self.y_next

    @property
    def current_correct(self) -> bool:
        return not self.straddle and self.y_current_pred == self.y_current


# -- inference ----------------------------------------------------------------
def sequential_pass(params, mcfg, videos, bank: MemoryBank, end_label: int, n_frames: int = 6):
    """Walk every video second by second in lockstep, reading ``s(t-1)`` from ``bank`` and
    writing ``s(t)`` back. Yields ``(clips, trace)`` once per second index."""
    cursors = {v.video_id: bank.sequential_cursor(v.video_id) for v in videos}
    by_id = {v.video_id: v for v in videos}
    active = [v.video_id for v in videos]
    while active:
        step = []
        for vid in active:
            t = next(cursors[vid], None)
            if t is not None and t <= by_id[vid].duration - 1:
                step.append((vid, t))
        if not step:
            break
        active = [vid for vid, _ in step]
        clips = [sample_clip(by_id[vid], t=float(t), end_label=end_label, n_frames=n_frames) for vid, t in step]
        if mcfg.use_memory:
            s_prev = np.stack([bank.read_prev(c.video_id, c.t) for c in clips])
        else:
            s_prev = np.zeros((len(clips), 2 * mcfg.hidden))
        trace = afn_model.forward_batch(params, np.stack([c.X for c in clips]), s_prev, mcfg, training=False)
        if mcfg.use_memory:
            for k, c in enumerate(clips):
                bank.write_state(c.video_id, c.t, trace.s_new.data[k])
        yield clips, trace


def run_inference(params, cfg, videos, end_label: int, prototypes=None, n_frames: int = 6) -> list[PredictionRecord]:
    """Fresh memory bank and one sequential cursor per video. Straddling clips still advance
    the memory chain but carry no prediction."""
    mcfg = cfg.model if hasattr(cfg, "model") else cfg
    bank = MemoryBank(2 * mcfg.hidden, dtype=np.dtype(mcfg.dtype))
    bank.register_all(videos)
    by_id = {v.video_id: v for v in videos}
    records: list[PredictionRecord] = []
    for clips, trace in sequential_pass(params, mcfg, videos, bank, end_label, n_frames):
        now = trace.y_now.data.argmax(-1)
        nxt = trace.y_next.data.argmax(-1)
        act = None
        if prototypes is not None and len(prototypes):
            d = ((trace.u.data[:, None, :] - prototypes[None]) ** 2).sum(-1)
            act = d.argmin(-1)
        for k, c in enumerate(clips):
            rec = PredictionRecord(
                video_id=c.video_id,
                t=c.t,
                activity=c.activity,
                y_current=c.y_current,
                y_next=c.y_next,
                straddle=c.straddle,
                horizon_fraction=c.horizon_fraction,
                time_to_next_start=c.time_to_next_start,
                segment_index=c.segment_index,
                segment_start=by_id[c.video_id].segments[c.segment_index][1],
            )
            if not c.straddle:
                rec.y_current_pred = int(now[k])
                rec.y_next_pred = int(nxt[k])
                rec.activity_pred = None if act is None else int(act[k])
            records.append(rec)
    records.sort(key=lambda r: (r.video_id, r.t))
    return records


def oracle_records(records: list[PredictionRecord], grammar) -> list[PredictionRecord]:
    """Replace predictions with the Bayes oracle's (true current action, argmax of its transition row)."""
    from .datagen import oracle_next_distribution

    out = []
    for r in records:
        r2 = PredictionRecord(**asdict(r))
        if not r.straddle:
            r2.y_current_pred = r.y_current
            r2.y_next_pred = int(np.argmax(oracle_next_distribution(grammar, r.activity, r.y_current)))
            r2.activity_pred = r.activity
        out.append(r2)
    return out


# -- metrics -------------------------------------------------------------------
def delta_minus(mean_video_length_s: float) -> float:
    """The fixed one-second anticipation as a fraction of mean video length."""
    if not mean_video_length_s > 0:
        raise ValueError(f"mean video length must be positive, got {mean_video_length_s}")
    return 1.0 / mean_video_length_s


def anticipation_accuracy(records: list[PredictionRecord]) -> float:
    scored = [r for r in records if not r.straddle]
    if not scored:
        raise ValueError("no non-straddle records to score")
    return sum(r.y_current_pred == r.y_current for r in scored) / len(scored)


def forecasting_accuracy(records: list[PredictionRecord], straddle_as_error: bool = True) -> float:
    """Top-1 next-action accuracy; straddling windows count as errors unless excluded."""
    scored = records if straddle_as_error else [r for r in records if not r.straddle]
    if not scored:
        raise ValueError("no records to score")
    return sum(r.next_correct for r in scored) / len(scored)


def activity_accuracy(records: list[PredictionRecord]) -> float:
    scored = [r for r in records if not r.straddle and r.activity_pred is not None]
    if not scored:
        raise ValueError("no records carry activity predictions")
    return sum(r.activity_pred == r.activity for r in scored) / len(scored)


def jump_in_bin(h: float) -> int:
    """Bin index for a remaining-horizon fraction in (0, 1]."""
    if h >= 0.90:
        return 0
    if h >= 0.50:
        return 1
    if h > 0.01:
        return 2
    return 3


def jump_in_bins(records: list[PredictionRecord]) -> dict:
    """Forecasting accuracy in four remaining-horizon bins; straddles go to a discarded tally."""
    counts = [0, 0, 0, 0]
    hits = [0, 0, 0, 0]
    discarded = 0
    for r in records:
        if r.straddle:
            discarded += 1
            continue
        b = jump_in_bin(r.horizon_fraction)
        counts[b] += 1
        hits[b] += int(r.next_correct)
    bins = {}
    for name, n, h in zip(BIN_NAMES, counts, hits):
        bins[name] = {"count": n, "correct": h, "accuracy": (h / n) if n else None}
    return {"bins": bins, "discarded": discarded, "discarded_accuracy": 0.0, "total": len(records)}


@dataclass
class ConfusionMatrix:
    labels: list[str]
    counts: np.ndarray  # rows truth, columns prediction

    def row_accuracy(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, self.counts / np.maximum(rows, 1), 0.0)

    @property
    def accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else float("nan")


def confusion(records, labels: list[str], level: str = "action", target: str = "next") -> ConfusionMatrix:
    """Count argmax predictions against truth; straddle records carry no prediction and are skipped.

    ``level="action"`` uses ``labels`` as the action vocabulary; an END row/column
    is appended for ``target="next"``. ``level="activity"`` uses ``labels`` as activity names.
    """
    if not records:
        raise ValueError("confusion needs at least one record")
    if level == "action":
        names = list(labels) + (["END"] if target == "next" else [])
        get = (lambda r: (r.y_next, r.y_next_pred)) if target == "next" else (lambda r: (r.y_current, r.y_current_pred))
    elif level == "activity":
        names = list(labels)
        get = lambda r: (r.activity, r.activity_pred)  # noqa: E731
    else:
        raise ValueError(f"unknown confusion level {level!r}")
    counts = np.zeros((len(names), len(names)), dtype=np.int64)
    for r in records:
        if r.straddle:
            continue
        truth, pred = get(r)
        if pred is None:
            continue
        if not (0 <= truth < len(names) and 0 <= pred < len(names)):
            raise KeyError(f"label outside the {level} vocabulary: truth={truth}, pred={pred}")
        counts[truth, pred] += 1
    return ConfusionMatrix(names, counts)


def time_to_next_curve(records, bin_width_s: float = 1.0) -> list[dict]:
    """Next-action accuracy bucketed by seconds remaining until the next action starts."""
    if bin_width_s <= 0:
        raise ValueError("bin width must be positive")
    buckets: dict[int, list[int]] = defaultdict(lambda: [0, 0])
    for r in records:
        if r.straddle:
            continue
        b = int(math.floor(r.time_to_next_start / bin_width_s + 1e-9))
        buckets[b][0] += 1
        buckets[b][1] += int(r.next_correct)
    return [
        {"bin_start_s": b * bin_width_s, "bin_end_s": (b + 1) * bin_width_s, "count": n, "accuracy": h / n}
        for b, (n, h) in sorted(buckets.items())
    ]


def action_time_deltas(records, end_label: int) -> dict[int, list[float]]:
    """Per action, one delta per occurrence: next-action start minus the first second at which
    the action is correctly anticipated. Occurrences followed by END get a negative delta."""
    occ: dict[tuple, list[PredictionRecord]] = defaultdict(list)
    for r in records:
        occ[(r.video_id, r.segment_index)].append(r)
    out: dict[int, list[float]] = defaultdict(list)
    for rs in occ.values():
        rs.sort(key=lambda r: r.t)
        action = rs[0].y_current
        hit = next((r for r in rs if r.current_correct), None)
        if hit is None:
            continue
        if rs[0].y_next == end_label:
            out[action].append(-1.0)
        else:
            out[action].append(hit.time_to_next_start)
    return dict(out)


def high_variance_actions(records, lam: float, end_label: int, min_fraction: float = 0.5) -> dict:
    """Actions ``A`` with ``mu_A / mu_B > lam`` for at least ``ceil(min_fraction * others)`` other actions."""
    if isinstance(lam, str):
        lam = LAMBDA_PRESETS[lam.lower()]
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    deltas = action_time_deltas(records, end_label)
    mu = {}
    for a, ds in deltas.items():
        valid = [d for d in ds if d >= 0]
        if not valid:
            log.warning("action %s has no occurrence with a following action; excluded", a)
            continue
        mu[a] = float(np.mean(valid))
    return select_high_variance(mu, lam, min_fraction)


def select_high_variance(mu: dict[int, float], lam: float, min_fraction: float = 0.5) -> dict:
    selected = []
    for a, m_a in sorted(mu.items()):
        others = [b for b in mu if b != a]
        need = max(1, math.ceil(min_fraction * len(others)))
        wins = sum(1 for b in others if mu[b] > 0 and m_a / mu[b] > lam)
        if others and wins >= need:
            selected.append(a)
    return {"lambda": lam, "mu": mu, "selected": selected}


# -- reports -------------------------------------------------------------------
def _f(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_f(v) for v in row])


def write_records(records, path) -> None:
    fields = list(PredictionRecord.__dataclass_fields__)
    write_csv(path, fields, ([getattr(r, f) for f in fields] for r in records))


def write_confusion(cm: ConfusionMatrix, path) -> None:
    write_csv(path, ["truth\\pred", *cm.labels], ([cm.labels[i], *cm.counts[i].tolist()] for i in range(len(cm.labels))))


def curve_svg(curve: list[dict], path, title: str = "accuracy vs time to next action") -> None:
    w, h, pad = 480, 300, 40
    xmax = max((c["bin_end_s"] for c in curve), default=1.0)
    pts = " ".join(
        f"{pad + (c['bin_start_s'] + c['bin_end_s']) / 2 / xmax * (w - 2 * pad):.2f},{h - pad - c['accuracy'] * (h - 2 * pad):.2f}"
        for c in curve
    )
    svg = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<text x="{w / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
        f'<text x="{w / 2}" y="{h - 8}" text-anchor="middle" font-size="11">seconds to next action (max {xmax:g})</text>',
        f'<text x="12" y="{h / 2}" font-size="11" transform="rotate(-90 12 {h / 2})">accuracy</text>',
        f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{pts}"/>',
        "</svg>",
    ]
    Path(path).write_text("\n".join(svg) + "\n")


def confusion_svg(cm: ConfusionMatrix, path) -> None:
    n = len(cm.labels)
    cell = max(8, min(24, 480 // max(n, 1)))
    pad = 70
    acc = cm.row_accuracy()
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{pad + n * cell + 10}" height="{pad + n * cell + 10}">']
    for i in range(n):
        parts.append(f'<text x="{pad - 4}" y="{pad + i * cell + cell * 0.7:.1f}" text-anchor="end" font-size="9">{cm.labels[i]}</text>')
        parts.append(
            f'<text x="{pad + i * cell + cell * 0.7:.1f}" y="{pad - 4}" font-size="9" '
            f'transform="rotate(-90 {pad + i * cell + cell * 0.7:.1f} {pad - 4})">{cm.labels[i]}</text>'
        )
        for j in range(n):
            v = float(acc[i, j])
            shade = int(round(255 * (1 - v)))
            parts.append(
                f'<rect x="{pad + j * cell}" y="{pad + i * cell}" width="{cell}" height="{cell}" '
                f'fill="rgb({shade},{shade},255)" stroke="#ddd"/>'
            )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def write_reports(records, out_dir, action_names, activity_names, end_label: int, lam: float = 2.0, bin_width_s: float = 1.0):
    """Emit every metric as CSV (and curve/heatmap SVGs). Returns a summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records(records, out / "records.csv")
    mean_len = np.mean([max(r.t for r in records if r.video_id == v) + 1 for v in sorted({r.video_id for r in records})])
    summary = {
        "n_records": len(records),
        "n_straddle": sum(r.straddle for r in records),
        "anticipation_accuracy": anticipation_accuracy(records),
        "forecasting_accuracy": forecasting_accuracy(records),
        "mean_video_length_s": float(mean_len),
        "delta_minus": delta_minus(float(mean_len)),
    }
    try:
        summary["activity_accuracy"] = activity_accuracy(records)
    except ValueError:
        summary["activity_accuracy"] = None
    write_csv(out / "summary.csv", ["metric", "value"], sorted(summary.items()))

    bins = jump_in_bins(records)
    write_csv(
        out / "jump_in_bins.csv",
        ["bin", "count", "correct", "accuracy"],
        [[k, b["count"], b["correct"], b["accuracy"]] for k, b in bins["bins"].items()]
        + [["discarded_straddle", bins["discarded"], 0, 0.0 if bins["discarded"] else None]],
    )
    for target in ("current", "next"):
        cm = confusion(records, action_names, "action", target)
        write_confusion(cm, out / f"confusion_{target}.csv")
        confusion_svg(cm, out / f"confusion_{target}.svg")
    if summary["activity_accuracy"] is not None:
        cm = confusion(records, activity_names, "activity")
        write_confusion(cm, out / "confusion_activity.csv")
        confusion_svg(cm, out / "confusion_activity.svg")
    curve = time_to_next_curve(records, bin_width_s)
    write_csv(
        out / "time_to_next.csv",
        ["bin_start_s", "bin_end_s", "count", "accuracy"],
        [[c["bin_start_s"], c["bin_end_s"], c["count"], c["accuracy"]] for c in curve],
    )
    curve_svg(curve, out / "time_to_next.svg")
    hv = high_variance_actions(records, lam, end_label)
    write_csv(
        out / "high_variance.csv",
        ["action", "mu_s", "selected"],
        [[action_names[a], m, int(a in hv["selected"])] for a, m in sorted(hv["mu"].items())],
    )
    return summary
