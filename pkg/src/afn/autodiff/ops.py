"""Differentiable operations over :class:`~afn.autodiff.tensor.Tensor`.

Only the operations the AFN graph needs are provided. Elementwise binary
ops follow numpy broadcasting and reduce gradients back to operand shape.
"""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, NumericError, Tensor, _unbroadcast

LOG_FLOOR = 1e-12


# -- elementwise ------------------------------------------------------------
def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._make(a.data * b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._make(x.data * mask, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor._make(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor._make(out, (x,), backward)


def log(x: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """Natural log with inputs clamped below at ``floor``; clamped entries get zero gradient."""
    clamped = np.maximum(x.data, floor)
    live = x.data >= floor

    def backward(g):
        return (g * live / clamped,)

    return Tensor._make(np.log(clamped), (x,), backward)


# -- reductions and shape ---------------------------------------------------
def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return Tensor._make(out, (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), Tensor(np.asarray(1.0 / n, dtype=x.dtype)))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc
    return Tensor._make(out, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inv),)

    return Tensor._make(x.data.transpose(axes), (x,), backward)


def getitem(x: Tensor, idx) -> Tensor:
    fancy = any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        out = np.zeros_like(x.data)
        if fancy:
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return Tensor._make(x.data[idx], (x,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ax = axis % tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != tensors[0].data.ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.data.ndim) if i != ax
        ):
            raise DimensionError(f"concat shape mismatch: {[t.shape for t in tensors]} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


# -- linear algebra ---------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``[m, k] @ [k, n]``; ``a`` may also carry leading batch axes."""
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return Tensor._make(a.data @ b.data, (a, b), backward)


def batched_matvec(m: Tensor, v: Tensor) -> Tensor:
    """``out[n] = m[n] @ v[n]`` for ``m: [N, R, C]`` and ``v: [N, C]``."""
    if m.data.ndim != 3 or v.data.ndim != 2 or m.shape[0] != v.shape[0] or m.shape[2] != v.shape[1]:
        raise DimensionError(f"batched_matvec shape mismatch: {m.shape} x {v.shape}")

    def backward(g):
        return g[:, :, None] * v.data[:, None, :], np.einsum("nrc,nr->nc", m.data, g)

    return Tensor._make(np.einsum("nrc,nc->nr", m.data, v.data), (m, v), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# -- probability ------------------------------------------------------------
def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not np.isfinite(x.data).all():
        raise NumericError("softmax of non-finite input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), backward)



def cross_entropy(target: Tensor, pred: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """``-sum(target * log(pred))`` over the last axis; one value per row."""
    if target.shape != pred.shape:
        raise DimensionError(f"cross_entropy length mismatch: target {target.shape} vs pred {pred.shape}")
    return mul(sum(mul(target, log(pred, floor)), axis=-1), Tensor(np.asarray(-1.0, dtype=pred.dtype)))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep))


# -- recurrent --------------------------------------------------------------
def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, w_x: Tensor, w_h: Tensor, bias: Tensor):
    """One LSTM step with gates packed as ``[input, forget, cell, output]``.

    ``w_x: [D, 4H]``, ``w_h: [H, 4H]``, ``bias: [4H]``. Returns ``(h, c)``.
    """
    hidden = h_prev.shape[-1]
    if w_x.shape[1] != 4 * hidden or w_h.shape != (hidden, 4 * hidden):
        raise DimensionError(f"lstm weight shapes {w_x.shape}, {w_h.shape} do not match hidden width {hidden}")
    gates = add(add(matmul(x, w_x), matmul(h_prev, w_h)), bias)
    i = sigmoid(gates[..., 0 * hidden : 1 * hidden])
    f = sigmoid(gates[..., 1 * hidden : 2 * hidden])
    g = tanh(gates[..., 2 * hidden : 3 * hidden])
    o = sigmoid(gates[..., 3 * hidden : 4 * hidden])
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


# -- 3-D convolution and pooling --------------------------------------------
def _triple(v) -> tuple[int, int, int]:
    return (v, v, v) if isinstance(v, int) else tuple(v)


def conv3d_output_shape(in_shape, out_channels: int, kernel, stride=1, padding=0) -> tuple[int, ...]:
    """Output ``[N, C_out, D, H, W]`` for an input ``[N, C_in, D, H, W]``."""
    k, s, p = _triple(kernel), _triple(stride), _triple(padding)
    n, _, *spatial = in_shape
    out = [(spatial[i] + 2 * p[i] - k[i]) // s[i] + 1 for i in range(3)]
    if min(out) < 1:
        raise DimensionError(f"conv3d kernel {k} does not fit input {tuple(in_shape)}")
    return (n, out_channels, *out)


def pool3d_output_shape(in_shape, window) -> tuple[int, ...]:
    w = _triple(window)
    n, c, *spatial = in_shape
    if any(spatial[i] % w[i] for i in range(3)):
        raise DimensionError(f"pool window {w} does not tile input {tuple(in_shape)}")
    return (n, c, *(spatial[i] // w[i] for i in range(3)))


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """3-D cross-correlation. ``x: [N, C, D, H, W]``, ``weight: [O, C, kd, kh, kw]``."""
    if x.data.ndim != 5 or weight.data.ndim != 5 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv3d shape mismatch: input {x.shape}, weight {weight.shape}")
    k = weight.shape[2:]
    s, p = _triple(stride), _triple(padding)
    n, c = x.shape[:2]
    o = weight.shape[0]
    _, _, od, oh, ow = conv3d_output_shape(x.shape, o, k, s, p)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p[0], p[0]), (p[1], p[1]), (p[2], p[2]))) if any(p) else x.data

    # columns laid out as [N, od, oh, ow, C, kd, kh, kw]
    cols = np.empty((n, od, oh, ow, c, *k), dtype=x.dtype)
    offsets = [(a, b, e) for a in range(k[0]) for b in range(k[1]) for e in range(k[2])]
    for a, b, e in offsets:
        patch = xp[:, :, a : a + s[0] * od : s[0], b : b + s[1] * oh : s[1], e : e + s[2] * ow : s[2]]
        cols[..., a, b, e] = patch.transpose(0, 2, 3, 4, 1)
    cols2 = cols.reshape(n * od * oh * ow, -1)
    w2 = weight.data.reshape(o, -1)
    out = cols2 @ w2.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, od, oh, ow, o).transpose(0, 4, 1, 2, 3)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 4, 1).reshape(-1, o)
        gw = (g2.T @ cols2).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(n, od, oh, ow, c, *k)
            gxp = np.zeros_like(xp)
            for a, b, e in offsets:
                gxp[:, :, a : a + s[0] * od : s[0], b : b + s[1] * oh : s[1], e : e + s[2] * ow : s[2]] += gcols[
                    ..., a, b, e
                ].transpose(0, 4, 1, 2, 3)
            gx = gxp[:, :, p[0] : p[0] + x.shape[2], p[1] : p[1] + x.shape[3], p[2] : p[2] + x.shape[4]]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward)


def max_pool3d(x: Tensor, window) -> Tensor:
    """Non-overlapping max pooling; the window must tile the input exactly."""
    w = _triple(window)
    n, c, d, h, wd = x.shape
    _, _, od, oh, ow = pool3d_output_shape(x.shape, w)
    blocks = x.data.reshape(n, c, od, w[0], oh, w[1], ow, w[2]).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    flat = blocks.reshape(n, c, od, oh, ow, -1)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(n, c, od, oh, ow, *w).transpose(0, 1, 2, 5, 3, 6, 4, 7).reshape(x.shape)
        return (gx,)

    return Tensor._make(out, (x,), backward)


def vec_inv(x: Tensor, rows: int, cols: int) -> Tensor:
    """Column-major inverse vectorization of ``[N, rows*cols]`` into ``[N, rows, cols]``."""
    if x.shape[-1] != rows * cols:
        raise DimensionError(f"vec_inv needs width {rows * cols}, got {x.shape[-1]}")
    lead = x.shape[:-1]
    return transpose(reshape(x, (*lead, cols, rows)), (*range(len(lead)), len(lead) + 1, len(lead)))


def vec(m: Tensor) -> Tensor:
    """Column-major vectorization, inverse of :func:`vec_inv`."""
    lead = m.shape[:-2]
    rows, cols = m.shape[-2:]
    t = transpose(m, (*range(len(lead)), len(lead) + 1, len(lead)))
    return reshape(t, (*lead, rows * cols))
