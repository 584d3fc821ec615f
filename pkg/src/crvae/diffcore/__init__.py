"""Minimal reverse-mode autodiff: tensors, a tape, conv/LSTM operators, Adam and a gradient checker."""
from . import kernels, ops
from .conv import conv2d, conv_output_size, deconv2d, deconv_output_size
from .gradcheck import GradCheckResult, grad_check
from .lstm import GATE_ORDER, lstm_cell
from .ops import (
    add, clamp, concat, div, exp, leaky_relu, linear, log, log_sigmoid, logistic, matmul, mean, mul,
    neg, relu, reshape, scale, slice_axis, split, square, stop_gradient, sub, tanh, transpose,
)
from .optim import AdamState, adam_step
from .tensor import (
    DimensionError, DomainError, NonFiniteError, Tape, TapeError, Tensor, as_tensor, backward,
    default_dtype, no_grad, precision, set_finite_checks,
)

sum = ops.sum  # noqa: A001

__all__ = [
    "AdamState", "DimensionError", "DomainError", "GATE_ORDER", "GradCheckResult", "NonFiniteError",
    "Tape", "TapeError", "Tensor", "adam_step", "add", "as_tensor", "backward", "clamp", "concat",
    "conv2d", "conv_output_size", "deconv2d", "deconv_output_size", "default_dtype", "div", "exp",
    "grad_check", "kernels", "leaky_relu", "linear", "log", "log_sigmoid", "logistic", "lstm_cell",
    "matmul", "mean", "mul", "neg", "no_grad", "ops", "precision", "relu", "reshape", "scale",
    "set_finite_checks", "slice_axis", "split", "square", "stop_gradient", "sub", "sum", "tanh",
    "transpose",
]
