"""Losses, accuracy-driven loss mixing, the training loop and checkpoints."""

from __future__ import annotations

import csv
import io
import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as afn_model
from . import protonet
from .autodiff import NumericError, OptimizerState, Tensor, adam_step, ops
from .config import RunConfig, from_dict, to_dict
from .ism import MemoryBank
from .sampler import Batch, assemble_batch

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "afn-checkpoint"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = [
    "step",
    "lr",
    "L1",
    "L2",
    "L3",
    "L_tot",
    "alpha",
    "beta",
    "acc_aux",
    "acc_now",
    "acc_next",
    "proto_loss",
    "proto_acc",
    "grad_norm",
]


class CheckpointError(RuntimeError):
    pass


def one_hot(labels, n: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise ValueError(f"label out of range for {n} classes: {labels.tolist()}")
    out = np.zeros((*labels.shape, n), dtype=dtype)
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def loss_terms(trace, y_current, y_next) -> tuple[Tensor, Tensor, Tensor]:
    """Per-clip cross-entropies of ``y_now``, ``y_next`` and ``aux`` against their targets."""
    dtype = trace.y_now.dtype
    K = trace.y_now.shape[-1]
    if trace.y_next.shape[-1] != K + 1 or trace.aux.shape[-1] != K:
        raise ValueError(f"head widths {trace.y_now.shape}, {trace.y_next.shape}, {trace.aux.shape} are inconsistent")
    bar = Tensor(one_hot(y_current, K, dtype))
    hat = Tensor(one_hot(y_next, K + 1, dtype))
    return ops.cross_entropy(bar, trace.y_now), ops.cross_entropy(hat, trace.y_next), ops.cross_entropy(bar, trace.aux)


def total_loss(L1, L2, L3, alpha: float, beta: float):
    """``alpha*((1-beta)*L1 + beta*L2) + (1-alpha)*L3``; alpha and beta enter as constants."""
    alpha, beta = float(alpha), float(beta)
    return alpha * ((1.0 - beta) * L1 + beta * L2) + (1.0 - alpha) * L3


@dataclass
class LossWeights:
    alpha: float = 0.0
    beta: float = 0.0
    smoothing: str = "raw"
    ema: float = 0.9

    def updated(self, acc_aux: float, acc_now: float) -> "LossWeights":
        if self.smoothing == "raw":
            a, b = acc_aux, acc_now
        else:
            a = self.ema * self.alpha + (1.0 - self.ema) * acc_aux
            b = self.ema * self.beta + (1.0 - self.ema) * acc_now
        return LossWeights(min(max(a, 0.0), 1.0), min(max(b, 0.0), 1.0), self.smoothing, self.ema)


def update_weights(aux_pred, now_pred, y_current, weights: LossWeights) -> LossWeights:
    """Previous-step accuracies become the next step's mixing weights."""
    y = np.asarray(y_current)
    if y.size == 0:
        raise ValueError("cannot update loss weights from an empty batch")
    acc_aux = float(np.mean(np.asarray(aux_pred) == y))
    acc_now = float(np.mean(np.asarray(now_pred) == y))
    return weights.updated(acc_aux, acc_now)


@dataclass
class TrainState:
    config: RunConfig
    n_actions: int
    n_activities: int
    channels: int
    image_size: int
    params: dict[str, Tensor]
    opt: OptimizerState
    bank: MemoryBank
    weights: LossWeights
    rng: np.random.Generator
    prototypes: np.ndarray  # running activity centroids [n_activities, E]
    proto_seen: np.ndarray  # bool [n_activities]
    step: int = 0
    history: list[dict] = field(default_factory=list)

    @property
    def end_label(self) -> int:
        return self.n_actions


def init_state(config: RunConfig, n_actions: int, n_activities: int, channels: int, image_size: int, videos=()) -> TrainState:
    m, t = config.model, config.trainer
    params = afn_model.init_params(m, channels, image_size, n_actions, seed=config.seed)
    opt = OptimizerState(base_lr=t.lr, decay=t.decay, decay_interval=t.decay_interval, clip=t.clip)
    bank = MemoryBank(2 * m.hidden, dtype=np.dtype(m.dtype))
    bank.register_all(videos)
    return TrainState(
        config=config,
        n_actions=n_actions,
        n_activities=n_activities,
        channels=channels,
        image_size=image_size,
        params=params,
        opt=opt,
        bank=bank,
        weights=LossWeights(0.0, 0.0, t.smoothing, t.ema),
        rng=np.random.default_rng(config.seed + 1),
        prototypes=np.zeros((n_activities, m.embed_dim), dtype=np.dtype(m.dtype)),
        proto_seen=np.zeros(n_activities, dtype=bool),
    )


def _trace_extrema(trace) -> str:
    parts = []
    for name in ("M", "L", "u", "s_new", "W", "w", "y_now", "y_next", "aux"):
        d = getattr(trace, name).data
        parts.append(f"{name}[min={np.nanmin(d):.3g}, max={np.nanmax(d):.3g}]")
    return ", ".join(parts)


def train_step(state: TrainState, batch: Batch) -> dict:
    """Forward all clips against the pre-step memory snapshot, update parameters, then write states back."""
    cfg = state.config
    mcfg = cfg.model
    clips = batch.samples
    if not clips:
        raise ValueError("empty batch")
    if any(c.straddle for c in clips):
        raise ValueError("straddling clips must be rejected before training")
    H = mcfg.hidden
    if mcfg.use_memory:
        s_prev = np.stack([state.bank.read_prev(c.video_id, c.t) for c in clips])
    else:
        s_prev = np.zeros((len(clips), 2 * H))
    for p in state.params.values():
        p.grad = None

    trace = afn_model.forward_batch(state.params, batch.stacked(), s_prev, mcfg, training=True, rng=state.rng)
    y_cur = np.array([c.y_current for c in clips])
    y_nxt = np.array([c.y_next for c in clips])
    L1, L2, L3 = loss_terms(trace, y_cur, y_nxt)
    alpha, beta = state.weights.alpha, state.weights.beta
    loss = ops.mean(total_loss(L1, L2, L3, alpha, beta))
    p_loss, p_acc = float("nan"), float("nan")
    labels = np.array([c.activity for c in clips])
    if mcfg.use_proto and cfg.trainer.gamma > 0:
        episode = protonet.make_episode(labels)
        if episode is not None:
            pl, p_acc = protonet.proto_loss(trace.u, episode)
            p_loss = float(pl.data)
            loss = loss + cfg.trainer.gamma * pl
    if not np.isfinite(loss.data):
        raise NumericError(f"non-finite loss at step {state.step}: {_trace_extrema(trace)}")
    loss.backward()
    grads = {n: p.grad for n, p in state.params.items() if p.grad is not None}
    stats = adam_step(state.params, grads, state.opt)

    if mcfg.use_memory:
        s_new = trace.s_new.data
        for k, c in enumerate(clips):
            state.bank.write_state(c.video_id, c.t, s_new[k])
    _update_prototypes(state, trace.u.data, labels)

    aux_pred = trace.aux.data.argmax(-1)
    now_pred = trace.y_now.data.argmax(-1)
    row = {
        "step": state.step,
        "lr": stats["lr"],
        "L1": float(L1.data.mean()),
        "L2": float(L2.data.mean()),
        "L3": float(L3.data.mean()),
        "L_tot": float(loss.data),
        "alpha": alpha,
        "beta": beta,
        "acc_aux": float(np.mean(aux_pred == y_cur)),
        "acc_now": float(np.mean(now_pred == y_cur)),
        "acc_next": float(np.mean(trace.y_next.data.argmax(-1) == y_nxt)),
        "proto_loss": p_loss,
        "proto_acc": p_acc,
        "grad_norm": stats["grad_norm"],
    }
    state.weights = update_weights(aux_pred, now_pred, y_cur, state.weights)
    state.step += 1
    return row


def _update_prototypes(state: TrainState, u: np.ndarray, labels: np.ndarray, momentum: float = 0.9) -> None:
    for a in np.unique(labels):
        mean = u[labels == a].mean(axis=0)
        if state.proto_seen[a]:
            state.prototypes[a] = momentum * state.prototypes[a] + (1.0 - momentum) * mean
        else:
            state.prototypes[a] = mean
            state.proto_seen[a] = True


def train(
    state: TrainState,
    videos,
    steps: int,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    callback=None,
) -> list[dict]:
    """Run ``steps`` training steps, appending rows to ``log_path`` and checkpointing periodically."""
    cfg = state.config
    tcfg, scfg = cfg.trainer, cfg.sampler
    state.bank.register_all(videos)
    rows = []
    writer_fh = None
    if log_path is not None:
        log_path = Path(log_path)
        new = not log_path.exists() or log_path.stat().st_size == 0
        writer_fh = open(log_path, "a", newline="")
        writer = csv.DictWriter(writer_fh, fieldnames=LOG_COLUMNS)
        if new:
            writer.writeheader()
    try:
        for _ in range(steps):
            if tcfg.reset_memory_per_epoch and state.step > 0 and state.step % tcfg.epoch_steps == 0:
                state.bank.reset()
            batch = assemble_batch(
                videos,
                scfg.batch_size,
                state.rng,
                end_label=state.end_label,
                n_frames=scfg.frames_per_clip,
                jitter=scfg.jitter,
                max_retries=scfg.max_retries,
            )
            row = train_step(state, batch)
            rows.append(row)
            if writer_fh is not None and row["step"] % tcfg.log_every == 0:
                writer.writerow({k: _fmt(v) for k, v in row.items()})
            if tcfg.refresh_memory_every and cfg.model.use_memory and state.step % tcfg.refresh_memory_every == 0:
                refresh_memory(state, videos)
            if checkpoint_dir is not None and tcfg.checkpoint_every and state.step % tcfg.checkpoint_every == 0:
                save_checkpoint(state, Path(checkpoint_dir) / "checkpoint.npz")
            if callback is not None:
                callback(state, row)
    finally:
        if writer_fh is not None:
            writer_fh.close()
    return rows


def refresh_memory(state: TrainState, videos) -> None:
    """Rewrite every memory slot of ``videos`` with an in-order pass under the current
    parameters, so later reads see a chain consistent with sequential inference."""
    from .evaluator import sequential_pass

    scfg = state.config.sampler
    for _ in sequential_pass(state.params, state.config.model, videos, state.bank, state.end_label, scfg.frames_per_clip):
        pass


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- checkpoints -------------------------------------------------------------
def save_checkpoint(state: TrainState, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "config": to_dict(state.config),
        "n_actions": state.n_actions,
        "n_activities": state.n_activities,
        "channels": state.channels,
        "image_size": state.image_size,
        "weights": {"alpha": state.weights.alpha, "beta": state.weights.beta},
        "optimizer": state.opt.hyperparams(),
        "rng": state.rng.bit_generator.state,
        "param_names": list(state.params),
        "adam_names": list(state.opt.m),
        "ism_order": state.bank.videos(),
        "ism_width": state.bank.width,
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for n, p in state.params.items():
        arrays[f"param/{n}"] = p.data
    for n in state.opt.m:
        arrays[f"adam_m/{n}"] = state.opt.m[n]
        arrays[f"adam_v/{n}"] = state.opt.v[n]
    arrays.update(state.bank.state_dict())
    arrays["proto/centroids"] = state.prototypes
    arrays["proto/seen"] = state.proto_seen
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> TrainState:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (zipfile.BadZipFile, ValueError, OSError, EOFError) as exc:
        raise CheckpointError(f"{path}: unreadable or truncated checkpoint ({exc})") from exc
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path}: missing checkpoint header")
    meta = json.loads(arrays["__meta__"].tobytes().decode())
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not an AFN checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {meta.get('version')} != supported {CHECKPOINT_VERSION}")
    config = from_dict(meta["config"])
    params = {n: Tensor(arrays[f"param/{n}"].copy(), requires_grad=True, name=n) for n in meta["param_names"]}
    o = meta["optimizer"]
    opt = OptimizerState(
        base_lr=o["base_lr"],
        decay=o["decay"],
        decay_interval=o["decay_interval"],
        clip=o["clip"],
        beta1=o["beta1"],
        beta2=o["beta2"],
        eps=o["eps"],
        step=o["step"],
        m={n: arrays[f"adam_m/{n}"].copy() for n in meta["adam_names"]},
        v={n: arrays[f"adam_v/{n}"].copy() for n in meta["adam_names"]},
    )
    bank = MemoryBank.from_state_dict(meta["ism_width"], meta["ism_order"], arrays, dtype=np.dtype(config.model.dtype))
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    t = config.trainer
    return TrainState(
        config=config,
        n_actions=meta["n_actions"],
        n_activities=meta["n_activities"],
        channels=meta["channels"],
        image_size=meta["image_size"],
        params=params,
        opt=opt,
        bank=bank,
        weights=LossWeights(meta["weights"]["alpha"], meta["weights"]["beta"], t.smoothing, t.ema),
        rng=rng,
        prototypes=arrays["proto/centroids"].copy(),
        proto_seen=arrays["proto/seen"].copy(),
        step=meta["step"],
    )
