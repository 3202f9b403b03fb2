"""Central finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def finite_difference_grad(f: Callable[[], Tensor], x: Tensor, step: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to every element of ``x``.

    ``f`` is re-evaluated from scratch for each perturbation; it must read
    ``x.data`` at call time.
    """
    grad = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f().data)
        flat[i] = orig - step
        fm = float(f().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max-norm relative error ``|a - n|_inf / max(|a|_inf, |n|_inf, floor)``."""
    diff = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    scale = max(np.max(np.abs(analytic)) if analytic.size else 0.0, np.max(np.abs(numeric)) if numeric.size else 0.0, floor)
    return float(diff / scale)


def check_gradients(
    f: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-6, max_elements: int | None = None, rng=None
) -> dict[str, float]:
    """Compare analytic and numeric gradients of ``f`` for each input; returns relative errors by input name.

    With ``max_elements`` set, only a random subset of coordinates per input is probed.
    """
    for x in inputs:
        x.grad = None
    f().backward()
    errors = {}
    for k, x in enumerate(inputs):
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        name = x.name or f"input{k}"
        if max_elements is None or x.size <= max_elements:
            numeric = finite_difference_grad(f, x, step)
            errors[name] = relative_error(analytic, numeric)
            continue
        rng = rng or np.random.default_rng(0)
        idx = rng.choice(x.size, size=max_elements, replace=False)
        flat = x.data.reshape(-1)
        num = np.empty(max_elements)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            num[j] = (fp - fm) / (2.0 * step)
        errors[name] = relative_error(analytic.reshape(-1)[idx], num)
    return errors
