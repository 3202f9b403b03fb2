from . import ops
from .gradcheck import finite_difference_grad, relative_error
from .optim import OptimizerState, adam_step, clip_by_global_norm, global_norm, step_decay_lr
from .tensor import DimensionError, NumericError, Tensor, tensor

__all__ = [
    "DimensionError",
    "NumericError",
    "OptimizerState",
    "Tensor",
    "adam_step",
    "clip_by_global_norm",
    "finite_difference_grad",
    "global_norm",
    "ops",
    "relative_error",
    "step_decay_lr",
    "tensor",
]
