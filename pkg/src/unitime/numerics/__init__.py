from .tensor import (
    DEFAULT_DTYPE,
    LAYER_NORM_EPS,
    ShapeError,
    Tensor,
    absolute,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    embedding,
    gelu,
    layer_norm,
    masked_fill,
    matmul,
    mean,
    mul,
    no_grad,
    reshape,
    sigmoid,
    slice_,
    softmax,
    square,
    sub,
    sum_,
    transpose,
)
from .optim import AdamWState, NonFiniteGradientError, adamw_step, clip_grad_norm

__all__ = [
    "DEFAULT_DTYPE", "LAYER_NORM_EPS", "ShapeError", "Tensor", "absolute", "add", "as_tensor",
    "backward", "broadcast_to", "concat", "embedding", "gelu", "layer_norm", "masked_fill",
    "matmul", "mean", "mul", "no_grad", "reshape", "sigmoid", "slice_", "softmax", "square",
    "sub", "sum_", "transpose", "AdamWState", "NonFiniteGradientError", "adamw_step",
    "clip_grad_norm",
]
