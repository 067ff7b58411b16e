"""Dense float64 arrays with reverse-mode differentiation."""

from . import checkpoint
from .gradcheck import GradCheckReport, grad_check, rel_error
from .nn import SGD, ParamStore, sgd_step
from .ops import (
    add,
    attention,
    bilinear_sample,
    concat,
    conv2d,
    cross_entropy,
    embedding,
    exp,
    index,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    max_pool2d,
    mean,
    mul,
    relu,
    reshape,
    rowwise_linear,
    sigmoid,
    smooth_l1,
    softmax,
    stack,
    sub,
    transpose,
    upsample2x,
)
from .ops import sum as sum_  # noqa: F401
from .tensor import ContractError, NumericError, Parameter, ShapeError, Tensor, as_tensor, no_grad

__all__ = [
    "SGD",
    "ContractError",
    "GradCheckReport",
    "NumericError",
    "ParamStore",
    "Parameter",
    "ShapeError",
    "Tensor",
    "add",
    "attention",
    "as_tensor",
    "bilinear_sample",
    "checkpoint",
    "concat",
    "conv2d",
    "cross_entropy",
    "embedding",
    "exp",
    "grad_check",
    "index",
    "layer_norm",
    "linear",
    "log",
    "log_softmax",
    "matmul",
    "max_pool2d",
    "mean",
    "mul",
    "no_grad",
    "rel_error",
    "relu",
    "reshape",
    "rowwise_linear",
    "sgd_step",
    "sigmoid",
    "smooth_l1",
    "softmax",
    "stack",
    "sub",
    "sum_",
    "transpose",
    "upsample2x",
]
