"""Dense tensor with reverse-mode differentiation.

Each operation returns a new :class:`Tensor` holding its parents and a
closure that maps the output gradient to parent gradients. ``backward``
walks the graph once in reverse topological order, accumulating into
``.grad`` additively, so values with fan-out receive the sum of their
path gradients.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

CHECK_FINITE = True


class NumericError(ArithmeticError):
    """Raised when a tensor operation produces NaN or Inf."""


class DimensionError(ValueError):
    """Raised on incompatible operand shapes."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        name: str | None = None,
        _parents: Sequence["Tensor"] = (),
        _backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
    ):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if CHECK_FINITE and not np.isfinite(arr).all():
            raise NumericError(f"non-finite values in tensor {name or ''} of shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(_parents)
        self._backward = _backward
        self.name = name

    # -- introspection ------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # -- graph --------------------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: Iterable["Tensor"], backward) -> "Tensor":
        parents = tuple(parents)
        track = any(p.requires_grad for p in parents)
        return cls(data, requires_grad=track, _parents=parents if track else (), _backward=backward if track else None)

    def backward(self, grad: np.ndarray | float | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every tracked leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.broadcast_to(np.asarray(grad, dtype=self.data.dtype), self.shape)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _lift(other, self))

    def __rsub__(self, other):
        from . import ops

        return ops.sub(_lift(other, self), self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, _lift(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, _lift(-1.0, self))

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops

        return ops.getitem(self, idx)

    def sum(self, axis=None):
        from . import ops

        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops

        return ops.mean(self, axis)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def tensor(data, requires_grad: bool = False, dtype=np.float64, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad, name=name)
