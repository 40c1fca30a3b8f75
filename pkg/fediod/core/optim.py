"""Optimizers over Tensor parameter lists: Adam, plain SGD, cosine schedule."""

import logging
import math
from typing import Iterable, List, Sequence

import numpy as np

from ..errors import OptimizerError
from .tensor import Tensor

logger = logging.getLogger(__name__)


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    __slots__ = ("m", "v", "t")

    def __init__(self, params: Sequence[Tensor]):
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        self.t = 0


def _trainable(p: Tensor) -> bool:
    return p.requires_grad


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, in place.

    Parameters that do not require grad (frozen networks) are skipped.
    """
    live = [i for i, p in enumerate(params) if _trainable(p)]
    for i in live:
        if params[i].grad is None:
            raise OptimizerError(
                f"Parameter {params[i].name or i} has no gradient")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for i in live:
        p = params[i]
        g = p.grad
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + eps)


def sgd_step(params: Sequence[Tensor], lr: float):
    """Plain gradient descent, in place; frozen parameters skipped."""
    for p in params:
        if not _trainable(p):
            continue
        if p.grad is None:
            raise OptimizerError(f"Parameter {p.name or '?'} has no gradient")
        p.values = p.values - lr * p.grad


def cosine_lr(lr0: float, t: int, total: int) -> float:
    """lr0 * (1 + cos(pi * t / total)) / 2, reaching 0 at t == total."""
    if total <= 0:
        return lr0
    t = min(max(t, 0), total)
    return lr0 * (1.0 + math.cos(math.pi * t / total)) / 2.0


class Adam:
    """Adam bound to a parameter list, with an optional cosine schedule."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 total_steps: int = 0):
        self.params: List[Tensor] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.total_steps = total_steps
        self.state = AdamState(self.params)

    @property
    def current_lr(self) -> float:
        if self.total_steps:
            return cosine_lr(self.lr, self.state.t, self.total_steps)
        return self.lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.state, self.current_lr,
                  self.beta1, self.beta2, self.eps)


class SGD:
    def __init__(self, params: Iterable[Tensor], lr: float = 0.01):
        self.params: List[Tensor] = list(params)
        self.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        sgd_step(self.params, self.lr)
