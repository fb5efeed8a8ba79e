"""Reverse-mode autodiff over float64 numpy arrays, plus parameters and SGD."""

from .params import (
    CHECKPOINT_VERSION,
    SGD,
    CheckpointError,
    MissingGradientError,
    ParamStore,
    he_uniform,
    read_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    conv1d,
    conv2d,
    flatten,
    linear,
    log_softmax,
    matmul,
    mse,
    mul,
    relu,
    reshape,
    softmax,
    sub,
    sum_squared_error,
    take_columns,
    tanh,
    tensor_sum,
    upsample1d,
)

__all__ = [
    "CHECKPOINT_VERSION",
    "SGD",
    "CheckpointError",
    "MissingGradientError",
    "NonFiniteError",
    "ParamStore",
    "ShapeError",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "conv1d",
    "conv2d",
    "flatten",
    "he_uniform",
    "linear",
    "log_softmax",
    "matmul",
    "mse",
    "mul",
    "read_checkpoint",
    "relu",
    "reshape",
    "save_checkpoint",
    "sgd_step",
    "softmax",
    "sub",
    "sum_squared_error",
    "take_columns",
    "tanh",
    "tensor_sum",
    "upsample1d",
]
