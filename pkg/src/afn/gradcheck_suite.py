"""Finite-difference checks for every differentiable op and for the full forward pass.

Each op case builds a scalar ``sum(op(inputs) * R)`` with a fixed random ``R`` so
that no coordinate of the output gradient is trivially uniform. The end-to-end
case runs the complete loss (three heads plus the episodic term) in 64-bit with
a dropout mask that is re-drawn from the same seed on every evaluation.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from . import model as afn_model
from . import protonet
from .autodiff import Tensor, ops
from .autodiff.gradcheck import finite_difference_grad

OP_TOLERANCE = 1e-4
E2E_TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    n_probed: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)


def _t(rng, *shape, name=None, away_from_zero=False):
    a = rng.standard_normal(shape)
    if away_from_zero:
        a = np.where(np.abs(a) < 0.05, np.sign(a + 1e-12) * 0.05 + a, a)
    return Tensor(a, requires_grad=True, name=name)


def _probe(f, inputs, step, max_elements, rng):
    """Max relative error over probed coordinates, scaled by the largest analytic entry of each input."""
    for x in inputs:
        x.grad = None
    f().backward()
    worst, probed = 0.0, 0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        if max_elements is None or x.size <= max_elements:
            numeric = finite_difference_grad(f, x, step)
            a, n = analytic.reshape(-1), numeric.reshape(-1)
        else:
            idx = rng.choice(x.size, size=max_elements, replace=False)
            flat = x.data.reshape(-1)
            n = np.empty(max_elements)
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + step
                fp = float(f().data)
                flat[i] = orig - step
                fm = float(f().data)
                flat[i] = orig
                n[j] = (fp - fm) / (2.0 * step)
            a = analytic.reshape(-1)[idx]
        scale = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(n).max(initial=0.0)), 1e-8)
        worst = max(worst, float(np.abs(a - n).max(initial=0.0)) / scale)
        probed += a.size
    return worst, probed


def _weighted(out: Tensor, R: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(R)))


def op_cases(seed: int = 0) -> dict:
    """``name -> (f, inputs)`` for every differentiable op."""
    rng = np.random.default_rng(seed)
    cases = {}

    def case(name, fn, *inputs):
        out_shape = fn(*inputs).shape
        R = rng.standard_normal(out_shape)
        cases[name] = (lambda: _weighted(fn(*inputs), R), list(inputs))

    case("add", ops.add, _t(rng, 3, 4), _t(rng, 4))
    case("sub", ops.sub, _t(rng, 3, 4), _t(rng, 3, 1))
    case("mul", ops.mul, _t(rng, 2, 3, 4), _t(rng, 3, 4))
    case("relu", ops.relu, _t(rng, 5, 4, away_from_zero=True))
    case("sigmoid", ops.sigmoid, _t(rng, 5, 4))
    case("tanh", ops.tanh, _t(rng, 5, 4))
    pos = Tensor(rng.uniform(0.5, 2.0, (4, 3)), requires_grad=True)
    case("log", ops.log, pos)
    case("sum", lambda x: ops.sum(x, axis=1), _t(rng, 3, 4, 2))
    case("mean", lambda x: ops.mean(x, axis=0), _t(rng, 3, 4))
    case("reshape", lambda x: ops.reshape(x, (6, 4)), _t(rng, 2, 3, 4))
    case("transpose", lambda x: ops.transpose(x, (2, 0, 1)), _t(rng, 2, 3, 4))
    case("getitem_slice", lambda x: x[:, 1:3], _t(rng, 4, 5))
    case("getitem_fancy", lambda x: ops.getitem(x, np.array([0, 2, 2, 1])), _t(rng, 3, 4))
    case("concat", lambda a, b: ops.concat([a, b], axis=-1), _t(rng, 3, 2), _t(rng, 3, 4))
    case("matmul", ops.matmul, _t(rng, 2, 3, 4), _t(rng, 4, 5))
    case("batched_matvec", ops.batched_matvec, _t(rng, 3, 4, 4), _t(rng, 3, 4))
    case("linear", ops.linear, _t(rng, 3, 4), _t(rng, 4, 5), _t(rng, 5))
    case("softmax", ops.softmax, _t(rng, 3, 5))
    target = rng.dirichlet(np.ones(5), size=3)
    probs = Tensor(rng.dirichlet(np.ones(5) * 3, size=3), requires_grad=True)
    case("cross_entropy", lambda p: ops.cross_entropy(Tensor(target), p), probs)
    case(
        "dropout",
        lambda x: ops.dropout(x, 0.4, np.random.default_rng(seed + 7), True),
        _t(rng, 4, 5),
    )
    case(
        "lstm_cell",
        lambda x, h, c, wx, wh, b: ops.concat(list(ops.lstm_cell(x, h, c, wx, wh, b)), axis=-1),
        _t(rng, 2, 3),
        _t(rng, 2, 4),
        _t(rng, 2, 4),
        _t(rng, 3, 16),
        _t(rng, 4, 16),
        _t(rng, 16),
    )
    case(
        "conv3d",
        lambda x, w, b: ops.conv3d(x, w, b, stride=(1, 2, 2), padding=1),
        _t(rng, 2, 2, 3, 5, 5),
        _t(rng, 3, 2, 3, 3, 3),
        _t(rng, 3),
    )
    case("max_pool3d", lambda x: ops.max_pool3d(x, (2, 2, 2)), _t(rng, 2, 2, 4, 4, 4))
    case("vec_inv", lambda x: ops.vec_inv(x, 3, 4), _t(rng, 2, 12))
    case("vec", ops.vec, _t(rng, 2, 3, 4))
    case(
        "proto_classify",
        lambda u, p: protonet.classify_activity(u, p),
        _t(rng, 4, 3),
        _t(rng, 2, 3),
    )
    return cases


def run_op_checks(seed: int = 0, step: float = 1e-6, tolerance: float = OP_TOLERANCE) -> list[CheckResult]:
    rng = np.random.default_rng(seed + 1)
    results = []
    for name, (f, inputs) in op_cases(seed).items():
        t0 = time.perf_counter()
        err, n = _probe(f, inputs, step, None, rng)
        results.append(CheckResult(name, err, tolerance, n, time.perf_counter() - t0))
    return results


def end_to_end_case(model_cfg, channels: int, image_size: int, n_actions: int, batch: int = 4, seed: int = 0):
    """Full AFN loss as a closure over float64 parameters; returns ``(f, params)``."""
    from .trainer import loss_terms, total_loss

    cfg = dataclasses.replace(model_cfg, dtype="float64")
    params = afn_model.init_params(cfg, channels, image_size, n_actions, seed)
    rng = np.random.default_rng(seed)
    # a zero advisory weight would hide half of the chain rule; perturb it
    params["advisory.weight"].data[:] = 0.05 * rng.standard_normal(params["advisory.weight"].shape)
    X = rng.standard_normal((batch, 6, channels, image_size, image_size))
    s_prev = 0.5 * rng.standard_normal((batch, 2 * cfg.hidden))
    y_cur = rng.integers(n_actions, size=batch)
    y_nxt = rng.integers(n_actions + 1, size=batch)
    labels = np.array([0, 0, 1, 1, 0, 1][:batch]) if batch <= 6 else rng.integers(2, size=batch)
    episode = protonet.make_episode(labels)

    def f():
        trace = afn_model.forward_batch(params, X, s_prev, cfg, training=True, rng=np.random.default_rng(seed + 11))
        L1, L2, L3 = loss_terms(trace, y_cur, y_nxt)
        loss = ops.mean(total_loss(L1, L2, L3, 0.6, 0.5))
        if cfg.use_proto and episode is not None:
            pl, _ = protonet.proto_loss(trace.u, episode)
            loss = loss + 0.1 * pl
        return loss

    return f, params


def run_end_to_end(
    model_cfg,
    channels: int,
    image_size: int,
    n_actions: int,
    seed: int = 0,
    step: float = 1e-6,
    per_param: int = 12,
    tolerance: float = E2E_TOLERANCE,
) -> list[CheckResult]:
    f, params = end_to_end_case(model_cfg, channels, image_size, n_actions, seed=seed)
    rng = np.random.default_rng(seed + 3)
    results = []
    for name, p in params.items():
        t0 = time.perf_counter()
        err, n = _probe(f, [p], step, per_param, rng)
        results.append(CheckResult(f"e2e:{name}", err, tolerance, n, time.perf_counter() - t0))
    return results


def run_suite(model_cfg, channels: int, image_size: int, n_actions: int, seed: int = 0) -> list[CheckResult]:
    return run_op_checks(seed) + run_end_to_end(model_cfg, channels, image_size, n_actions, seed=seed)


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'check':<32} {'max_rel_err':>12} {'tol':>8} {'probed':>7}  status"]
    for r in results:
        lines.append(f"{r.name:<32} {r.max_rel_error:>12.3e} {r.tolerance:>8.0e} {r.n_probed:>7}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
