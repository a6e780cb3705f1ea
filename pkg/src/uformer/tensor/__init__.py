from .conv import conv2d, conv_output_size, conv_transpose1d, conv_transpose2d
from .core import (
    OpNode,
    ShapeError,
    Tensor,
    absolute,
    add,
    as_tensor,
    backward,
    concat,
    default_dtype,
    div,
    elementwise,
    exp,
    leaky_relu,
    matmul,
    mean,
    mul,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    square,
    sub,
    swapaxes,
    take_along_last,
    transpose,
    tsum,
)
from .gradcheck import GradCheckReport, grad_check
from .norm import RunningStats, batch_norm

__all__ = [
    "GradCheckReport", "OpNode", "RunningStats", "ShapeError", "Tensor", "absolute", "add",
    "as_tensor", "backward", "batch_norm", "concat", "conv2d", "conv_output_size",
    "conv_transpose1d", "conv_transpose2d", "default_dtype", "div", "elementwise", "exp",
    "grad_check", "leaky_relu", "matmul", "mean", "mul", "reshape", "sigmoid", "softmax",
    "sqrt", "square", "sub", "swapaxes", "take_along_last", "transpose", "tsum",
]
