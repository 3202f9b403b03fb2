"""The AFN computation graph.

Clip tensor ``X`` -> 3-D conv features ``M`` -> reduced ``L`` -> LSTM step
with the stored previous state -> advisory matrix ``W`` built from
``[L, s_prev, u]`` -> ``w = W h`` -> current-action, next-action and
auxiliary heads. Every function here works on a leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import protonet
from .autodiff import DimensionError, Tensor, ops
from .autodiff.ops import conv3d_output_shape, pool3d_output_shape
from .config import ModelConfig
from .sampler import FRAMES_PER_CLIP

CHECKPOINT_VERSION = 1


def feature_shapes(cfg: ModelConfig, channels: int, image_size: int, frames: int = FRAMES_PER_CLIP) -> list[tuple]:
    """Shape after each conv+pool block for a single clip, ``[(C, D, H, W), ...]``."""
    shape = (1, channels, frames, image_size, image_size)
    out = []
    for layer in cfg.conv:
        shape = conv3d_output_shape(shape, layer.out_channels, layer.kernel, layer.stride, layer.padding)
        shape = pool3d_output_shape(shape, layer.pool)
        out.append(shape[1:])
    return out


def m_shape(cfg: ModelConfig, channels: int, image_size: int) -> tuple[int, int, int]:
    """``M`` as ``(h_s, w_s, C_out)``; the conv plan must collapse the frame axis to 1."""
    c, d, h, w = feature_shapes(cfg, channels, image_size)[-1]
    if d != 1:
        raise DimensionError(f"conv plan leaves temporal depth {d}; it must pool down to 1")
    return (h, w, c)


def param_shapes(cfg: ModelConfig, channels: int, image_size: int, n_actions: int) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    c_in = channels
    for i, layer in enumerate(cfg.conv, start=1):
        shapes[f"q0.conv{i}.weight"] = (layer.out_channels, c_in, *layer.kernel)
        shapes[f"q0.conv{i}.bias"] = (layer.out_channels,)
        c_in = layer.out_channels
    flat = int(np.prod(m_shape(cfg, channels, image_size)))
    H = cfg.hidden
    shapes.update(
        {
            "reduce.fc1.weight": (flat, cfg.reduce_hidden),
            "reduce.fc1.bias": (cfg.reduce_hidden,),
            "reduce.fc2.weight": (cfg.reduce_hidden, cfg.d_l),
            "reduce.fc2.bias": (cfg.d_l,),
            "q2.w_x": (cfg.d_l, 4 * H),
            "q2.w_h": (H, 4 * H),
            "q2.bias": (4 * H,),
            "q1.fc1.weight": (cfg.d_l, cfg.embed_hidden),
            "q1.fc1.bias": (cfg.embed_hidden,),
            "q1.fc2.weight": (cfg.embed_hidden, cfg.embed_dim),
            "q1.fc2.bias": (cfg.embed_dim,),
            "advisory.weight": (cfg.d_l + 2 * H + cfg.embed_dim, H * H),
            "advisory.bias": (H * H,),
            "b_now": (H,),
            "head_now.weight": (H, n_actions),
            "head_now.bias": (n_actions,),
            "b_next": (H,),
            "head_next.weight": (H + n_actions, n_actions + 1),
            "head_next.bias": (n_actions + 1,),
        }
    )
    widths = [flat, *cfg.aux_hidden, n_actions]
    for i in range(len(widths) - 1):
        shapes[f"head_aux.fc{i + 1}.weight"] = (widths[i], widths[i + 1])
        shapes[f"head_aux.fc{i + 1}.bias"] = (widths[i + 1],)
    return shapes


def init_params(cfg: ModelConfig, channels: int, image_size: int, n_actions: int, seed: int = 0) -> dict[str, Tensor]:
    """Weights uniform in +-1/sqrt(fan_in); biases zero except the LSTM forget gate (1)
    and the advisory bias, which is vec(I) so that ``W`` starts as the identity."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    params = {}
    for name, shape in param_shapes(cfg, channels, image_size, n_actions).items():
        if name == "advisory.weight":
            arr = np.zeros(shape)
        elif name.endswith("weight") or name in ("q2.w_x", "q2.w_h"):
            fan_in = int(np.prod(shape[1:])) if name.startswith("q0.") else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        else:
            arr = np.zeros(shape)
        if name == "q2.bias":
            arr[cfg.hidden : 2 * cfg.hidden] = 1.0
        if name == "advisory.bias":
            arr = np.eye(cfg.hidden).reshape(-1, order="F")
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


# -- components ------------------------------------------------------------
def features(params, X: Tensor, cfg: ModelConfig, training: bool = False, rng=None) -> Tensor:
    """q0: conv blocks over ``X: [N, frames, C, S, S]``; returns ``M: [N, h_s, w_s, C_out]``."""
    if len(X.shape) != 5:
        raise DimensionError(f"features expects [N, frames, C, H, W], got {X.shape}")
    h = ops.transpose(X, (0, 2, 1, 3, 4))
    for i, layer in enumerate(cfg.conv, start=1):
        h = ops.conv3d(h, params[f"q0.conv{i}.weight"], params[f"q0.conv{i}.bias"], layer.stride, layer.padding)
        h = ops.relu(h)
        h = ops.dropout(h, cfg.dropout, rng, training)
        if tuple(layer.pool) != (1, 1, 1):
            h = ops.max_pool3d(h, layer.pool)
    n, c, d, hh, ww = h.shape
    if d != 1:
        raise DimensionError(f"conv plan leaves temporal depth {d}; it must pool down to 1")
    return ops.transpose(ops.reshape(h, (n, c, hh, ww)), (0, 2, 3, 1))


def _flatten(M: Tensor) -> Tensor:
    return ops.reshape(M, (M.shape[0], int(np.prod(M.shape[1:]))))


def reduce(params, M: Tensor) -> Tensor:
    """Two fully connected layers with a rectifier between: flatten(M) -> L."""
    h = ops.relu(ops.linear(_flatten(M), params["reduce.fc1.weight"], params["reduce.fc1.bias"]))
    return ops.linear(h, params["reduce.fc2.weight"], params["reduce.fc2.bias"])


def recurrent_step(params, L: Tensor, s_prev: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """q2: one LSTM step. Returns ``(h, c, s_new)`` with ``s_new = [h, c]``."""
    H = params["q2.w_h"].shape[0]
    if s_prev.shape[-1] != 2 * H:
        raise DimensionError(f"state width {s_prev.shape[-1]} does not match 2*hidden = {2 * H}")
    h_prev = s_prev[:, :H]
    c_prev = s_prev[:, H:]
    h, c = ops.lstm_cell(L, h_prev, c_prev, params["q2.w_x"], params["q2.w_h"], params["q2.bias"])
    return h, c, ops.concat([h, c], axis=-1)


def advisory(params, L: Tensor, s_prev: Tensor, u: Tensor) -> Tensor:
    """``W = vec^-1(fc([L, s_prev, u]))`` (column-major), ``[N, H, H]``."""
    z = ops.concat([L, s_prev, u], axis=-1)
    weight = params["advisory.weight"]
    if z.shape[-1] != weight.shape[0]:
        raise DimensionError(f"advisory input width {z.shape[-1]} != {weight.shape[0]}")
    H = params["q2.w_h"].shape[0]
    return ops.vec_inv(ops.linear(z, weight, params["advisory.bias"]), H, H)


def modulate(W: Tensor, h: Tensor) -> Tensor:
    return ops.batched_matvec(W, h)


def head_now(params, w: Tensor) -> Tensor:
    z = ops.relu(ops.add(w, params["b_now"]))
    return ops.softmax(ops.linear(z, params["head_now.weight"], params["head_now.bias"]))


def head_next(params, w: Tensor, y_now: Tensor) -> Tensor:
    z = ops.concat([ops.relu(ops.add(w, params["b_next"])), y_now], axis=-1)
    return ops.softmax(ops.linear(z, params["head_next.weight"], params["head_next.bias"]))


def head_aux(params, M: Tensor) -> Tensor:
    """Three fully connected layers on flatten(M), rectifiers between, softmax out."""
    h = _flatten(M)
    n_layers = sum(1 for k in params if k.startswith("head_aux.") and k.endswith(".weight"))
    for i in range(1, n_layers + 1):
        h = ops.linear(h, params[f"head_aux.fc{i}.weight"], params[f"head_aux.fc{i}.bias"])
        if i < n_layers:
            h = ops.relu(h)
    return ops.softmax(h)


@dataclass
class ForwardTrace:
    M: Tensor
    L: Tensor
    u: Tensor
    s_prev: Tensor
    s_new: Tensor
    W: Tensor
    w: Tensor
    h: Tensor
    y_now: Tensor
    y_next: Tensor
    aux: Tensor


def forward_batch(
    params, X: np.ndarray | Tensor, s_prev: np.ndarray, cfg: ModelConfig, training: bool = False, rng=None
) -> ForwardTrace:
    dtype = np.dtype(cfg.dtype)
    X = X if isinstance(X, Tensor) else Tensor(np.asarray(X, dtype=dtype))
    s_prev_t = Tensor(np.asarray(s_prev, dtype=dtype))
    M = features(params, X, cfg, training, rng)
    L = reduce(params, M)
    h, _c, s_new = recurrent_step(params, L, s_prev_t)
    if cfg.use_proto:
        u = protonet.embed(params, L)
        if cfg.detach_u:
            u = u.detach()
    else:
        u = Tensor(np.zeros((L.shape[0], cfg.embed_dim), dtype=dtype))
    W = advisory(params, L, s_prev_t, u)
    w = modulate(W, h)
    y_now = head_now(params, w)
    y_next = head_next(params, w, y_now)
    aux = head_aux(params, M)
    return ForwardTrace(M, L, u, s_prev_t, s_new, W, w, h, y_now, y_next, aux)


def forward(clip, ism, params, cfg: ModelConfig, training: bool = False, rng=None) -> ForwardTrace:
    """Single-clip forward: reads ``s(t-1)`` from the memory bank (zeros when memory is disabled)."""
    if training and clip.straddle:
        raise ValueError(f"straddling clip from video {clip.video_id} at t={clip.t} cannot be used for training")
    H = cfg.hidden
    s_prev = ism.read_prev(clip.video_id, clip.t) if cfg.use_memory else np.zeros(2 * H)
    return forward_batch(params, clip.X[None], s_prev[None], cfg, training, rng)


def shape_dry_run(cfg: ModelConfig, channels: int, image_size: int, n_actions: int, frames: int = FRAMES_PER_CLIP) -> dict:
    """Propagate shapes through the graph without allocating parameters or running anything."""
    H = cfg.hidden
    shapes = param_shapes(cfg, channels, image_size, n_actions)
    return {
        "X": (frames, channels, image_size, image_size),
        "conv_blocks": feature_shapes(cfg, channels, image_size, frames),
        "M": m_shape(cfg, channels, image_size),
        "L": (cfg.d_l,),
        "s": (2 * H,),
        "u": (cfg.embed_dim,),
        "advisory_in": (shapes["advisory.weight"][0],),
        "W": (H, H),
        "w": (H,),
        "y_now": (n_actions,),
        "y_next": (n_actions + 1,),
        "aux": (n_actions,),
        "n_params": int(sum(np.prod(s) for s in shapes.values())),
    }
