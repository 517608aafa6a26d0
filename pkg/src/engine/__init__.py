"""Reverse-mode differentiation engine"""
from .gradcheck import grad_check
from .tensor import CHECK_DTYPE, DEFAULT_DTYPE, Function, Tape, Tensor, active_tape, as_tensor

__all__ = [
    "CHECK_DTYPE",
    "DEFAULT_DTYPE",
    "Function",
    "Tape",
    "Tensor",
    "active_tape",
    "as_tensor",
    "grad_check",
]
