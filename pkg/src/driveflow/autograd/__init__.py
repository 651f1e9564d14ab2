"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from . import ops
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .optim import Adam, AdamState, adam_step
from .tensor import Tape, Tensor, active_tape, as_tensor, backward

__all__ = [
    "Adam", "AdamState", "Tape", "Tensor", "active_tape", "adam_step", "as_tensor",
    "backward", "check_gradients", "numerical_gradient", "ops", "relative_error",
]
