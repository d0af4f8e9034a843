"""Minimal dense-tensor engine with reverse-mode automatic differentiation."""

from .gradcheck import check_parameters, finite_difference_check, numerical_gradient, relative_error
from .ops import (
    add, broadcast_to, concat, conv2d, cross_entropy, div, dropout, exp, gelu, getitem,
    layer_norm, linear, log, matmul, maxpool2d, mean, mul, neg, output_extent, power, relu,
    reshape, softmax, sub, sum, swap_last, transpose,
)
from .rng import RngStream
from .tensor import DTYPES, Tensor, as_tensor, backward, nan_check_enabled, resolve_dtype, set_nan_check

__all__ = [
    "DTYPES", "RngStream", "Tensor", "add", "as_tensor", "backward", "broadcast_to",
    "check_parameters", "concat", "conv2d", "cross_entropy", "div", "dropout", "exp",
    "finite_difference_check", "gelu", "getitem", "layer_norm", "linear", "log", "matmul",
    "maxpool2d", "mean", "mul", "nan_check_enabled", "neg", "numerical_gradient", "output_extent", "power",
    "relative_error", "relu", "reshape", "resolve_dtype", "set_nan_check", "softmax", "sub", "sum",
    "swap_last", "transpose",
]
