from .conv import batchnorm_inference, conv2d, depthwise_conv2d, maxpool2x, separable_conv2d, upsample2x
from .gradcheck import coordinate_fd, directional_errors, max_gradient_error, parameter_errors
from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    absolute,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    div,
    exp,
    getitem,
    grad_enabled,
    log,
    matmul,
    mul,
    multiply_elementwise,
    neg,
    no_grad,
    power,
    reduce_max,
    reduce_mean,
    reduce_min,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sub,
    transpose,
)

__all__ = [
    "ShapeError",
    "Tape",
    "Tensor",
    "absolute",
    "add",
    "as_tensor",
    "backward",
    "batchnorm_inference",
    "clip",
    "concat",
    "conv2d",
    "coordinate_fd",
    "depthwise_conv2d",
    "directional_errors",
    "div",
    "exp",
    "getitem",
    "grad_enabled",
    "log",
    "matmul",
    "max_gradient_error",
    "maxpool2x",
    "mul",
    "parameter_errors",
    "multiply_elementwise",
    "neg",
    "no_grad",
    "power",
    "reduce_max",
    "reduce_mean",
    "reduce_min",
    "reduce_sum",
    "relu",
    "reshape",
    "separable_conv2d",
    "sigmoid",
    "softmax",
    "stack",
    "sub",
    "transpose",
    "upsample2x",
]
