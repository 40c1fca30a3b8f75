"""
Networks for the four roles: teacher T_k, student S, generator G,
discriminator D_k.

All roles are dense multilayer perceptrons.  Hidden layers use the
configured activation; the terminal layer depends on the role (none for
teacher/student logits, tanh for the generator, sigmoid for the patch
discriminator).
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np

from .core import Tensor, add_bias, elementwise, matmul, reduce
from .errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)

ROLES = ("teacher", "student", "generator", "discriminator")
ACTIVATIONS = ("relu", "tanh", "sigmoid", "none")

_TERMINAL = {
    "teacher": "none",
    "student": "none",
    "generator": "tanh",
    "discriminator": "sigmoid",
}


class DenseLayer:
    __slots__ = ("weight", "bias", "activation")

    def __init__(self, weight: Tensor, bias: Tensor, activation: str):
        self.weight = weight
        self.bias = bias
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        h = add_bias(matmul(x, self.weight), self.bias)
        if self.activation == "none":
            return h
        return elementwise(self.activation, h)


class Network:
    """Ordered dense layers for one role."""

    def __init__(self, role: str, layers: List[DenseLayer]):
        if role not in ROLES:
            raise ValueError(f"Unknown role: '{role}'")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ShapeError(
                    f"Layer dims do not chain: {prev.weight.shape} -> "
                    f"{nxt.weight.shape}")
        self.role = role
        self.layers = layers
        self.frozen = False

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def arch(self) -> List[int]:
        return [self.input_dim] + [l.weight.shape[1] for l in self.layers]

    def parameters(self) -> List[Tensor]:
        params = []
        for layer in self.layers:
            params.append(layer.weight)
            params.append(layer.bias)
        return params

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def freeze(self):
        """Mark the network frozen; no optimizer will touch it again."""
        self.frozen = True
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p.values).tobytes())
        return h.hexdigest()

    def copy_from(self, other: "Network"):
        """Overwrite parameters with *other*'s values (same architecture)."""
        if self.arch != other.arch:
            raise ShapeError(f"Architectures differ: {self.arch} vs {other.arch}")
        for dst, src in zip(self.parameters(), other.parameters()):
            dst.values = src.values.copy()

    def __call__(self, x: Tensor) -> Tensor:
        return forward(self, x)

    def __repr__(self):
        return (f"Network(role={self.role}, arch={self.arch}, "
                f"frozen={self.frozen})")

    # ------------------------------------------------------------------
    # Checkpoint document
    # ------------------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            "role": self.role,
            "frozen": self.frozen,
            "layers": [
                {
                    "activation": l.activation,
                    "weight_shape": list(l.weight.shape),
                    "weight": l.weight.values.ravel().tolist(),
                    "bias": l.bias.values.tolist(),
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "Network":
        layers = []
        for entry in doc["layers"]:
            w = np.asarray(entry["weight"], dtype=np.float64).reshape(
                entry["weight_shape"])
            layers.append(DenseLayer(
                Tensor(w, requires_grad=True),
                Tensor(entry["bias"], requires_grad=True),
                entry["activation"]))
        net = cls(doc["role"], layers)
        if doc.get("frozen"):
            net.freeze()
        return net


def build(role: str, arch: Sequence[int], activation: str = "relu",
          seed: int = 0) -> Network:
    """He-initialised MLP: normal(0, sqrt(2/fan_in)) weights, zero biases."""
    if role not in ROLES:
        raise ValueError(f"Unknown role: '{role}'")
    if activation not in ACTIVATIONS:
        raise ValueError(f"Unknown activation: '{activation}'")
    if len(arch) < 2:
        raise ShapeError(f"Architecture needs input and output sizes, got {arch}")
    if any(int(n) <= 0 for n in arch):
        raise ShapeError(f"Layer sizes must be positive, got {list(arch)}")

    rng = np.random.default_rng(seed)
    layers = []
    n_layers = len(arch) - 1
    for i, (fan_in, fan_out) in enumerate(zip(arch, arch[1:])):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        act = _TERMINAL[role] if i == n_layers - 1 else activation
        layers.append(DenseLayer(
            Tensor(w, requires_grad=True, name=f"{role}.w{i}"),
            Tensor(np.zeros(fan_out), requires_grad=True, name=f"{role}.b{i}"),
            act))
    return Network(role, layers)


def forward(net: Network, x: Tensor) -> Tensor:
    """Run *x* (batch×input_dim) through *net*; pure."""
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"{net.role} expects batch x {net.input_dim}, "
                         f"got {x.shape}")
    h = x
    for layer in net.layers:
        h = layer(h)
    if not np.all(np.isfinite(h.values)):
        raise NumericalError(f"{net.role} produced non-finite output")
    return h


# ======================================================================
# Noise
# ======================================================================

@dataclass(frozen=True)
class NoiseSpec:
    dim: int
    distribution: str = "standard_normal"


def sample_noise(spec: NoiseSpec, batch: int,
                 rng: np.random.Generator) -> Tensor:
    """i.i.d. N(0, 1) batch×dim draw."""
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    return Tensor(rng.standard_normal((batch, spec.dim)))


def discriminator_scalar(d_out: Tensor) -> Tensor:
    """Patch grid (batch×p²) to one realness score per sample (batch×1)."""
    return reduce("mean", d_out, axis=1, keepdims=True)


# ======================================================================
# Checkpoint files
# ======================================================================

def save_checkpoint(net: Network, path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(net.to_dict(), f)
    logger.info("Checkpoint written: %s (%d params)", path, net.param_count())


def load_checkpoint(path: str) -> Network:
    with open(path, "r", encoding="utf-8") as f:
        return Network.from_dict(json.load(f))
