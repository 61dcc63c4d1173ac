"""Minimal reverse-mode automatic differentiation on numpy arrays."""
from .checkpoint import read_checkpoint, write_checkpoint
from .nn import MLP, LayerNorm, Linear, glorot_uniform
from .optim import AdamConfig, ParameterStore, adam_step
from .tensor import (
    PRIMITIVES, Tensor, add, add_bias, as_tensor, backward, clamp, exp, expm1,
    layer_norm, log, matmul, mean, multiply, negative, reshape, sigmoid, square,
    stop_gradient, subtract, swish, tsum,
)

__all__ = [
    "PRIMITIVES", "Tensor", "add", "add_bias", "as_tensor", "backward", "clamp",
    "exp", "expm1", "layer_norm", "log", "matmul", "mean", "multiply", "negative",
    "reshape", "sigmoid", "square", "stop_gradient", "subtract", "swish", "tsum",
    "MLP", "LayerNorm", "Linear", "glorot_uniform",
    "AdamConfig", "ParameterStore", "adam_step",
    "read_checkpoint", "write_checkpoint",
]
