"""Reverse-mode differentiation over dense float64 tensors."""

from .checkpoint import read_checkpoint, write_checkpoint
from .tensor import (
    Graph,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    cumprod,
    div,
    gather_rows,
    grad_check,
    layer_norm,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    sin,
    softmax,
    sub,
    sum_,
    take,
    transpose,
)

__all__ = [
    "Graph", "Tensor", "add", "as_tensor", "backward", "concat", "cumprod", "div",
    "gather_rows", "grad_check", "layer_norm", "matmul", "mean", "mul", "no_grad",
    "read_checkpoint", "relu", "reshape", "scale", "sin", "softmax", "sub", "sum_",
    "take", "transpose", "write_checkpoint",
]
