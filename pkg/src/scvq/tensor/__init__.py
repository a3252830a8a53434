"""Minimal dense tensor library with reverse-mode differentiation."""

from scvq.tensor import ops
from scvq.tensor.core import (
    NonFiniteError,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_default_dtype,
)
from scvq.tensor.gradcheck import grad_check, numerical_grad
from scvq.tensor.ops import stop_gradient
from scvq.tensor.optim import Adam, AdamState, adam_step

__all__ = [
    "Adam",
    "AdamState",
    "NonFiniteError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "default_dtype",
    "get_default_dtype",
    "grad_check",
    "is_grad_enabled",
    "no_grad",
    "numerical_grad",
    "ops",
    "set_default_dtype",
    "stop_gradient",
]
