"""
Tensor: minimal reverse-mode automatic differentiation over dense fp64 arrays.

Every operation returns a new Tensor.  When any operand requires a gradient
the operation records a node (kind, inputs, backward closure, tape sequence
number).  ``backward`` collects the nodes reachable from a scalar loss into a
ComputeGraph, orders them by tape sequence and replays the closures in exact
reverse insertion order.

Broadcasting is deliberately narrow: elementwise binary operations accept
equal shapes or a single-element operand.  ``add_bias`` is the one row
broadcast (dense layers); ``affine`` applies constant arrays.
"""

import itertools
import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from ..errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)

# Monotone tape counter shared by all graphs; only ordering matters.
_tape = itertools.count()

LOG_GUARD = 1e-12


class _Node:
    __slots__ = ("kind", "inputs", "output", "backward", "seq")

    def __init__(self, kind: str, inputs: Tuple["Tensor", ...],
                 output: "Tensor", backward: Callable):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.seq = next(_tape)


class Tensor:
    """Dense fp64 value with an optional gradient buffer."""

    __slots__ = ("values", "grad", "requires_grad", "_node", "name")

    def __init__(self, values, requires_grad: bool = False, name: str = None):
        arr = np.array(values, dtype=np.float64)
        if arr.size == 0 or any(d <= 0 for d in arr.shape):
            raise ShapeError(f"Tensor dims must be positive, got {arr.shape}")
        self.values = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._node: Optional[_Node] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.values = arr
        t.grad = None
        t.requires_grad = False
        t._node = None
        t.name = None
        return t

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return (f"Tensor(shape={self.shape}, requires_grad="
                f"{self.requires_grad}{label})")

    # ------------------------------------------------------------------
    # Operator sugar
    # ------------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int = None, keepdims: bool = False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis: int = None, keepdims: bool = False):
        return reduce("mean", self, axis, keepdims)

    def max(self, axis: int = None, keepdims: bool = False):
        return reduce("max", self, axis, keepdims)

    def exp(self):
        return elementwise("exp", self)

    def log(self):
        return elementwise("log", self)

    def relu(self):
        return elementwise("relu", self)

    def tanh(self):
        return elementwise("tanh", self)

    def sigmoid(self):
        return elementwise("sigmoid", self)

    def square(self):
        return elementwise("square", self)

    def abs(self):
        return elementwise("abs", self)


TensorLike = Tensor | float | int | np.ndarray


def as_tensor(x: TensorLike) -> Tensor:
    """Wrap numbers/arrays as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def detach(t: Tensor) -> Tensor:
    """Graph-free copy of *t*."""
    return Tensor._wrap(t.values.copy())


def zero_grad(params: Iterable[Tensor]):
    for p in params:
        p.grad = None


# ======================================================================
# Node construction
# ======================================================================

def _check_finite(arr: np.ndarray, kind: str):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"Non-finite value produced by '{kind}'")


def _make(values: np.ndarray, kind: str, inputs: Tuple[Tensor, ...],
          backward: Callable) -> Tensor:
    _check_finite(values, kind)
    out = Tensor._wrap(values)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = _Node(kind, inputs, out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Fold a gradient back onto a single-element operand."""
    if g.shape == shape:
        return g
    return np.full(shape, g.sum())


# ======================================================================
# Matrix product
# ======================================================================

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    av, bv = a.values, b.values

    def backward(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, "matmul", (a, b), backward)


def add_bias(x: TensorLike, b: TensorLike) -> Tensor:
    """Row broadcast: ``x[i, :] + b`` for a batch×n input and an n-vector."""
    x, b = as_tensor(x), as_tensor(b)
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias shape mismatch: {x.shape} + {b.shape}")

    def backward(g):
        return g, g.sum(axis=0)

    return _make(x.values + b.values, "add_bias", (x, b), backward)


# ======================================================================
# Elementwise
# ======================================================================

_BINARY = ("add", "sub", "mul", "div")
_UNARY = ("exp", "log", "relu", "tanh", "sigmoid", "square", "abs")


def _operands(a: Tensor, b: Tensor, kind: str):
    if a.shape == b.shape:
        return a.values, b.values
    if a.size == 1:
        return a.values.reshape(()), b.values
    if b.size == 1:
        return a.values, b.values.reshape(())
    raise ShapeError(f"'{kind}' needs equal shapes or a scalar operand, "
                     f"got {a.shape} and {b.shape}")


def _binary(kind: str, a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = _operands(a, b, kind)
    sa, sb = a.shape, b.shape

    if kind == "add":
        out = av + bv

        def backward(g):
            return _unbroadcast(g, sa), _unbroadcast(g, sb)
    elif kind == "sub":
        out = av - bv

        def backward(g):
            return _unbroadcast(g, sa), _unbroadcast(-g, sb)
    elif kind == "mul":
        out = av * bv

        def backward(g):
            return _unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)
    else:
        if np.any(bv == 0.0):
            raise NumericalError("Division by zero")
        out = av / bv

        def backward(g):
            return (_unbroadcast(g / bv, sa),
                    _unbroadcast(-g * av / (bv * bv), sb))

    return _make(np.asarray(out, dtype=np.float64), kind, (a, b), backward)


def _unary(kind: str, t: TensorLike) -> Tensor:
    t = as_tensor(t)
    v = t.values

    if kind == "exp":
        out = np.exp(v)

        def backward(g):
            return (g * out,)
    elif kind == "log":
        if np.any(v <= 0.0):
            raise NumericalError("log of non-positive value")
        out = np.log(v)

        def backward(g):
            return (g / v,)
    elif kind == "relu":
        mask = v > 0.0
        out = np.where(mask, v, 0.0)

        def backward(g):
            return (g * mask,)
    elif kind == "tanh":
        out = np.tanh(v)

        def backward(g):
            return (g * (1.0 - out * out),)
    elif kind == "sigmoid":
        out = expit(v)

        def backward(g):
            return (g * out * (1.0 - out),)
    elif kind == "square":
        out = v * v

        def backward(g):
            return (2.0 * g * v,)
    else:
        out = np.abs(v)

        def backward(g):
            return (g * np.sign(v),)

    return _make(out, kind, (t,), backward)


def elementwise(op: str, *args: TensorLike) -> Tensor:
    """Dispatch ``op`` over {add, sub, mul, div, exp, log, relu, tanh,
    sigmoid, square, abs}."""
    if op in _BINARY:
        if len(args) != 2:
            raise ValueError(f"'{op}' takes two operands")
        return _binary(op, *args)
    if op in _UNARY:
        if len(args) != 1:
            raise ValueError(f"'{op}' takes one operand")
        return _unary(op, args[0])
    raise ValueError(f"Unknown elementwise op: '{op}'")


def add(a, b):
    return _binary("add", a, b)


def sub(a, b):
    return _binary("sub", a, b)


def mul(a, b):
    return _binary("mul", a, b)


def div(a, b):
    return _binary("div", a, b)


def clamp(t: TensorLike, lo: float = None, hi: float = None) -> Tensor:
    """Clip into [lo, hi]; gradient passes only where nothing was clipped."""
    t = as_tensor(t)
    v = t.values
    out = np.clip(v, lo, hi)
    mask = np.ones_like(v, dtype=bool)
    if lo is not None:
        mask &= v >= lo
    if hi is not None:
        mask &= v <= hi

    def backward(g):
        return (g * mask,)

    return _make(out, "clamp", (t,), backward)


def safe_log(t: TensorLike) -> Tensor:
    """log with the argument clamped below at LOG_GUARD."""
    return _unary("log", clamp(t, lo=LOG_GUARD))


def affine(t: TensorLike, scale, shift=0.0) -> Tensor:
    """``t * scale + shift`` with constant arrays; gradient is ``scale``."""
    t = as_tensor(t)
    scale = np.asarray(scale, dtype=np.float64)
    shift = np.asarray(shift, dtype=np.float64)
    out = t.values * scale + shift
    if out.shape != t.shape:
        raise ShapeError(f"affine constants change shape {t.shape} -> {out.shape}")

    def backward(g):
        return (g * scale,)

    return _make(out, "affine", (t,), backward)


# ======================================================================
# Reductions
# ======================================================================

def _check_axis(t: Tensor, axis: Optional[int]) -> Optional[int]:
    if axis is None:
        return None
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {t.ndim}")
    return axis % t.ndim


def reduce(op: str, t: TensorLike, axis: int = None,
           keepdims: bool = False) -> Tensor:
    """sum | mean | max, over everything or one axis.

    Max routes the gradient to the first maximal index only.
    """
    t = as_tensor(t)
    if t.size == 0:
        raise ShapeError("Cannot reduce an empty tensor")
    axis = _check_axis(t, axis)
    v = t.values
    shape = t.shape

    def expand(g):
        if axis is None:
            return np.reshape(g, (1,) * len(shape))
        return g if keepdims else np.expand_dims(g, axis)

    if op == "sum":
        out = v.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            return (np.broadcast_to(expand(g), shape).copy(),)
    elif op == "mean":
        out = v.mean(axis=axis, keepdims=keepdims)
        n = v.size if axis is None else shape[axis]

        def backward(g):
            return (np.broadcast_to(expand(g) / n, shape).copy(),)
    elif op == "max":
        out = v.max(axis=axis, keepdims=keepdims)
        mask = np.zeros(shape)
        if axis is None:
            mask.flat[int(np.argmax(v))] = 1.0
        else:
            idx = np.expand_dims(np.argmax(v, axis=axis), axis)
            np.put_along_axis(mask, idx, 1.0, axis=axis)

        def backward(g):
            return (mask * expand(g),)
    else:
        raise ValueError(f"Unknown reduction: '{op}'")

    return _make(np.asarray(out, dtype=np.float64), op, (t,), backward)


# ======================================================================
# Temperature softmax
# ======================================================================

def _check_tau(tau: float):
    if not tau > 0:
        raise ValueError(f"Temperature must be positive, got {tau}")


def softmax_tau(z: TensorLike, tau: float = 1.0) -> Tensor:
    """Softmax of ``z / tau`` along the last axis (max-subtracted)."""
    _check_tau(tau)
    z = as_tensor(z)
    s = z.values / tau
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner) / tau,)

    return _make(p, "softmax", (z,), backward)


def log_softmax(z: TensorLike, tau: float = 1.0) -> Tensor:
    _check_tau(tau)
    z = as_tensor(z)
    s = z.values / tau
    s = s - s.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(s).sum(axis=-1, keepdims=True))
    out = s - lse
    p = np.exp(out)

    def backward(g):
        return ((g - p * g.sum(axis=-1, keepdims=True)) / tau,)

    return _make(out, "log_softmax", (z,), backward)


def cross_entropy(logits: TensorLike, labels: Sequence[int]) -> Tensor:
    """Batch-mean negative log-likelihood of integer *labels*."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape}, "
                         f"labels {labels.shape}")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    picked = mul(log_softmax(logits), Tensor._wrap(onehot))
    return -reduce("mean", reduce("sum", picked, axis=1))


# ======================================================================
# Backward
# ======================================================================

class ComputeGraph:
    """Nodes reachable from one loss, in tape (insertion) order."""

    def __init__(self, nodes: List[_Node]):
        self.nodes = nodes

    @property
    def tape_position(self) -> int:
        return self.nodes[-1].seq if self.nodes else -1

    @classmethod
    def collect(cls, root: Tensor) -> "ComputeGraph":
        seen = set()
        nodes = []
        stack = [root]
        while stack:
            t = stack.pop()
            node = t._node
            if node is None or id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node.inputs)
        nodes.sort(key=lambda n: n.seq)
        return cls(nodes)


def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every grad-requiring t."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got {loss.shape}")
    if not loss.requires_grad:
        return
    graph = ComputeGraph.collect(loss)
    pending: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    touched: Dict[int, Tensor] = {id(loss): loss}

    for node in reversed(graph.nodes):
        g = pending.get(id(node.output))
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in pending:
                pending[key] = pending[key] + gi
            else:
                pending[key] = gi
                touched[key] = inp

    for key, t in touched.items():
        g = pending[key].reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g
