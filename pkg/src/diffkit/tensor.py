"""
Dense float64 tensors with reverse-mode gradients.

Every primitive returns a new ``Tensor`` holding its parents and a backward
closure that maps the output cotangent to one cotangent per parent. Tensors
are never mutated after construction; gradient accumulation happens in the
``Graph`` that walks them (see ``graph.py``).

Broadcasting is limited to the forms the backbones and losses need: equal
shapes, a scalar against a tensor, or a row/column operand that expands into
the other operand's shape. Two operands may not both expand.
"""
import itertools
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import digamma, expit, gammaln

from src.exception import ContractError, NumericOverflowError

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "op", "name")

    # ndarray (op) Tensor must defer to the Tensor reflected operators
    __array_ufunc__ = None

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward_fn: Optional[BackwardFn] = None,
                 op: str = "const", name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __float__(self) -> float:
        return self.item()

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"

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

    def __getitem__(self, index):
        return slice_(self, index)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


_serials = itertools.count()


def _label(t: Tensor) -> str:
    return f"parameter:{t.name}" if t.op == "parameter" else t.op


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    serial = next(_serials)
    finite = np.isfinite(data)
    if not np.all(finite):
        bad = np.argwhere(~finite)
        position = tuple(int(i) for i in bad[0]) if bad.size else ()
        raise NumericOverflowError(op, serial, position, tuple(np.shape(data)), [_label(p) for p in parents])
    return Tensor(data, parents, backward_fn, op)


def _result_shape(a: Tensor, b: Tensor, op: str):
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ContractError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from e
    if shape != a.shape and shape != b.shape:
        raise ContractError(f"{op}: shapes {a.shape} and {b.shape} would both broadcast")
    return shape


def unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy-style expansion."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, op: str, forward, grad_a, grad_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _result_shape(a, b, op)
    out = forward(a.data, b.data)

    def backward(g):
        return (unbroadcast(grad_a(g, a.data, b.data), a.shape),
                unbroadcast(grad_b(g, a.data, b.data), b.shape))

    return _node(out, (a, b), backward, op)


def add(a, b) -> Tensor:
    return _binary(a, b, "add", np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, "sub", np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, "mul", np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        a, b, "div", np.divide,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: expected (n, k) @ (k, m), got {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, (a, b), backward, "matmul")


def _unary(x, op: str, forward, derivative) -> Tensor:
    x = as_tensor(x)
    out = forward(x.data)

    def backward(g):
        return (g * derivative(x.data, out),)

    return _node(out, (x,), backward, op)


def tanh(x) -> Tensor:
    return _unary(x, "tanh", np.tanh, lambda x, y: 1.0 - y * y)


def sigmoid(x) -> Tensor:
    return _unary(x, "sigmoid", expit, lambda x, y: y * (1.0 - y))


def softplus(x) -> Tensor:
    return _unary(x, "softplus", lambda v: np.logaddexp(0.0, v), lambda x, y: expit(x))


def clamp_min(x, floor: float) -> Tensor:
    # gradient passes only where x is above the floor
    return _unary(x, "clamp_min", lambda v: np.maximum(v, floor), lambda x, y: (x > floor).astype(np.float64))


def exp(x) -> Tensor:
    return _unary(x, "exp", np.exp, lambda x, y: y)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise NumericOverflowError("log")
    return _unary(x, "log", np.log, lambda x, y: 1.0 / x)


def lgamma(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise NumericOverflowError("lgamma")
    return _unary(x, "lgamma", gammaln, lambda x, y: digamma(x))


def square(x) -> Tensor:
    return _unary(x, "square", np.square, lambda x, y: 2.0 * x)


def abs_(x) -> Tensor:
    # np.sign(0) == 0: subgradient 0 at the kink
    return _unary(x, "abs", np.abs, lambda x, y: np.sign(x))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), backward, "softmax")


def sum_(x, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), backward, "sum")


def mean(x, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _node(out, (x,), backward, "mean")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def slice_(x, index) -> Tensor:
    x = as_tensor(x)
    out = np.array(x.data[index], dtype=np.float64)

    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(out, (x,), backward, "slice")


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of an empty list")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tensors, backward, "concat")


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ContractError(f"transpose expects a matrix, got shape {x.shape}")

    def backward(g):
        return (g.T,)

    return _node(x.data.T.copy(), (x,), backward, "transpose")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _node(out, (x,), backward, "reshape")


# Composites built only from the primitives above.

def logsumexp(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shift = x.data.max(axis=axis, keepdims=True)
    return log(sum_(exp(x - shift), axis=axis)) + np.squeeze(shift, axis=axis)


def swish(x) -> Tensor:
    x = as_tensor(x)
    return x * sigmoid(x)


def rsqrt(x) -> Tensor:
    return exp(log(x) * -0.5)
