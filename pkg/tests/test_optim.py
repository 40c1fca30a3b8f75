import numpy as np
import pytest

from fediod.core import (
    SGD,
    Adam,
    AdamState,
    Tensor,
    adam_step,
    backward,
    cosine_lr,
    reduce,
    sgd_step,
)
from fediod.errors import OptimizerError


def test_zero_gradient_leaves_params():
    p = Tensor([1.0, -2.0], requires_grad=True)
    p.grad = np.zeros(2)
    adam_step([p], AdamState([p]), lr=0.1)
    np.testing.assert_array_equal(p.values, [1.0, -2.0])


def test_first_step_moves_by_lr():
    p = Tensor([3.0], requires_grad=True)
    p.grad = np.ones(1)
    adam_step([p], AdamState([p]), lr=0.1)
    assert p.values[0] == pytest.approx(2.9, abs=1e-6)


def test_missing_grad_raises():
    p = Tensor([1.0], requires_grad=True)
    with pytest.raises(OptimizerError):
        adam_step([p], AdamState([p]), lr=0.1)
    with pytest.raises(OptimizerError):
        sgd_step([p], lr=0.1)


def test_frozen_params_skipped():
    p = Tensor([1.0], requires_grad=False)
    adam_step([p], AdamState([p]), lr=0.1)
    sgd_step([p], lr=0.1)
    assert p.values[0] == 1.0


def test_adam_minimises_square():
    x = Tensor([5.0], requires_grad=True)
    opt = Adam([x], lr=0.1)
    trace = []
    for _ in range(100):
        opt.zero_grad()
        backward(reduce("sum", x.square()))
        opt.step()
        trace.append(abs(x.values[0]))
    assert trace[49] < 5.0
    assert trace[-1] < 0.5


def test_adam_deterministic():
    def run():
        x = Tensor([1.0, -0.5], requires_grad=True)
        opt = Adam([x], lr=0.05)
        for _ in range(5):
            opt.zero_grad()
            backward(reduce("sum", (x * 3.0).square()))
            opt.step()
        return x.values

    np.testing.assert_array_equal(run(), run())


def test_sgd_step():
    x = Tensor([2.0], requires_grad=True)
    opt = SGD([x], lr=0.25)
    backward(reduce("sum", x.square()))
    opt.step()
    assert x.values[0] == pytest.approx(1.0)


def test_cosine_schedule():
    assert cosine_lr(1e-3, 0, 100) == pytest.approx(1e-3)
    assert cosine_lr(1e-3, 50, 100) == pytest.approx(5e-4)
    assert cosine_lr(1e-3, 100, 100) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(1e-3, 10, 0) == 1e-3


def test_adam_follows_cosine():
    x = Tensor([1.0], requires_grad=True)
    opt = Adam([x], lr=0.1, total_steps=4)
    lrs = []
    for _ in range(4):
        lrs.append(opt.current_lr)
        opt.zero_grad()
        backward(reduce("sum", x.square()))
        opt.step()
    assert lrs[0] == pytest.approx(0.1)
    assert lrs == sorted(lrs, reverse=True)
    assert opt.current_lr == pytest.approx(0.0, abs=1e-18)
