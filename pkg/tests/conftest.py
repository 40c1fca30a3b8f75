"""Shared fixtures: seeded generators, finite-difference gradient checks,
and small run configs."""

import numpy as np
import pytest

from fediod.config import from_dict
from fediod.core import Tensor, backward


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grads(fn, arrays, h=1e-5):
    """Central differences of scalar fn(*Tensors) w.r.t. every array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for i, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[i][idx] += h
            minus[i][idx] -= h
            f_plus = fn(*[Tensor(a) for a in plus]).item()
            f_minus = fn(*[Tensor(a) for a in minus]).item()
            g[idx] = (f_plus - f_minus) / (2 * h)
        grads.append(g)
    return grads


def analytic_grads(fn, arrays):
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    backward(fn(*tensors))
    return [t.grad if t.grad is not None else np.zeros(t.shape)
            for t in tensors]


@pytest.fixture
def gradcheck():
    """gradcheck(fn, *arrays, rtol, atol) compares backward() with central
    finite differences."""

    def check(fn, *arrays, rtol=1e-6, atol=1e-8, h=1e-5):
        analytic = analytic_grads(fn, arrays)
        numeric = numeric_grads(fn, arrays, h)
        for a, n in zip(analytic, numeric):
            np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)

    return check


def tiny_config(mode: str, tmp_path, **overrides):
    """A run config small enough for unit tests (seconds, not minutes)."""
    doc = {
        "mode": mode,
        "dataset": {"kind": "blobs", "num_classes": 3, "per_class": 40},
        "federation": {"nodes": 3, "alpha": 1.0, "test_fraction": 0.25},
        "seeds": [0],
        "architectures": {"teacher": [8], "student": [8], "generator": [8],
                          "discriminator": [8]},
        "local": {"epochs": 5, "lr": 0.05, "batch_size": 0},
        "distill": {"steps": 4, "batch_size": 8, "noise_dim": 4},
        "fedavg": {"rounds": 2, "local_epochs": 1, "lr": 0.1},
        "eval_interval": 2,
        "output_dir": str(tmp_path / "out"),
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key] = {**doc[key], **value}
        else:
            doc[key] = value
    return from_dict(doc)


@pytest.fixture
def make_config(tmp_path):
    def factory(mode: str = "fediod", **overrides):
        return tiny_config(mode, tmp_path, **overrides)

    return factory
