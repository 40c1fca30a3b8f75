"""Autodiff core: tensors, graph, optimizers."""

from .optim import SGD, Adam, AdamState, adam_step, cosine_lr, sgd_step
from .tensor import (
    LOG_GUARD,
    ComputeGraph,
    Tensor,
    add,
    add_bias,
    affine,
    as_tensor,
    backward,
    clamp,
    cross_entropy,
    detach,
    div,
    elementwise,
    log_softmax,
    matmul,
    mul,
    reduce,
    safe_log,
    softmax_tau,
    sub,
    zero_grad,
)

__all__ = [
    "LOG_GUARD", "ComputeGraph", "Tensor", "add", "add_bias", "affine",
    "as_tensor", "backward", "clamp", "cross_entropy", "detach", "div",
    "elementwise", "log_softmax", "matmul", "mul", "reduce", "safe_log",
    "softmax_tau", "sub", "zero_grad",
    "SGD", "Adam", "AdamState", "adam_step", "cosine_lr", "sgd_step",
]
