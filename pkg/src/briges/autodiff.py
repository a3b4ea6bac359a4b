"""Small dense-tensor kernel with tape-based reverse-mode differentiation.

Operations are plain functions over :class:`Tensor`. While a :class:`Graph`
is active (``with Graph() as g:``) every operation that touches a tracked
tensor is appended to the graph's tape; ``g.backward(loss)`` then walks the
tape in reverse. Outside a graph the same functions simply evaluate.

Everything is float64 and row-major, and every reduction uses numpy's
fixed-order kernels, so replaying a tape is bit-reproducible.
"""

from __future__ import annotations

import contextvars
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError, ParameterError

_ACTIVE_GRAPH: contextvars.ContextVar["Graph | None"] = contextvars.ContextVar(
    "briges_active_graph", default=None
)


class Tensor:
    """A float64 array (rank 0-4) that may take part in differentiation."""

    __slots__ = ("data", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 4:
            raise DimensionError(f"tensors are limited to rank 4, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node: Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.name = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._node is not None


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    forward: Callable[..., np.ndarray]
    backward: Callable[..., tuple]


class Gradients(dict):
    """Maps each trainable :class:`Tensor` to the gradient array of the same shape."""

    def by_name(self) -> dict[str, np.ndarray]:
        return {t.name: g for t, g in self.items()}


class Graph:
    """Ordered tape of recorded operations.

    Nodes are appended as operations execute, so inputs always precede the
    nodes that consume them.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._token = None

    def __enter__(self) -> "Graph":
        self._token = _ACTIVE_GRAPH.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_GRAPH.reset(self._token)
        self._token = None

    def _record(self, node: Node) -> None:
        self.nodes.append(node)
        node.output._node = node

    def backward(self, output: Tensor) -> Gradients:
        if output.size != 1:
            raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
        grads: dict[int, np.ndarray] = {}
        leaves: dict[int, Tensor] = {}
        if output._node is None or output._node not in self.nodes:
            if output.requires_grad:
                return Gradients({output: np.ones_like(output.data)})
            raise ContractError("output was not produced by this graph")

        grads[id(output)] = np.ones_like(output.data)
        stop = self.nodes.index(output._node)
        for node in reversed(self.nodes[: stop + 1]):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            arrays = [t.data for t in node.inputs]
            in_grads = node.backward(g, *arrays, out=node.output.data)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not _tracked(t):
                    continue
                if t.requires_grad and t._node is None:
                    leaves[id(t)] = t
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

        result = Gradients()
        for key, t in leaves.items():
            result[t] = grads[key].reshape(t.shape)
        return result

    def replay(self) -> bool:
        """Re-run every recorded forward and report whether all outputs match bit for bit."""
        values: dict[int, np.ndarray] = {}
        same = True
        for node in self.nodes:
            arrays = [values.get(id(t), t.data) for t in node.inputs]
            out = node.forward(*arrays)
            values[id(node.output)] = out
            same = same and out.shape == node.output.data.shape and np.array_equal(out, node.output.data)
        return same


def _apply(op: str, inputs: Sequence[Tensor], forward, backward) -> Tensor:
    out = Tensor._wrap(forward(*[t.data for t in inputs]))
    graph = _ACTIVE_GRAPH.get()
    if graph is not None and any(_tracked(t) for t in inputs):
        graph._record(Node(op, tuple(inputs), out, forward, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _apply(
        "add", (a, b), np.add,
        lambda g, x, y, out: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _apply(
        "sub", (a, b), np.subtract,
        lambda g, x, y, out: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    sa, sb = a.shape, b.shape
    return _apply(
        "mul", (a, b), np.multiply,
        lambda g, x, y, out: (_unbroadcast(g * y, sa), _unbroadcast(g * x, sb)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    sa, sb = a.shape, b.shape
    return _apply(
        "div", (a, b), np.divide,
        lambda g, x, y, out: (_unbroadcast(g / y, sa), _unbroadcast(-g * out / y, sb)),
    )


def abs_(x: Tensor, deadzone: float = 0.0) -> Tensor:
    """|x|. Entries with ``|x| <= deadzone`` get a zero subgradient.

    A small dead zone treats round-off residuals as exact zeros, so an exactly
    fitted model is a stationary point instead of a sign-noise source.
    """
    def backward(g, v, out):
        s = np.sign(v)
        if deadzone > 0.0:
            s = np.where(np.abs(v) <= deadzone, 0.0, s)
        return (g * s,)

    return _apply("abs", (as_tensor(x),), np.abs, backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu(v: np.ndarray) -> np.ndarray:
    return 0.5 * v * (1.0 + erf(v * _INV_SQRT2))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    def backward(g, v, out):
        cdf = 0.5 * (1.0 + erf(v * _INV_SQRT2))
        pdf = _INV_SQRT2PI * np.exp(-0.5 * v * v)
        return (g * (cdf + v * pdf),)

    return _apply("gelu", (as_tensor(x),), _gelu, backward)


# ------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _apply(
        "matmul", (a, b), np.matmul,
        lambda g, x, y, out: (g @ y.T, x.T @ g),
    )


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return _apply(
        "transpose", (x,), lambda v: np.ascontiguousarray(v.T),
        lambda g, v, out: (g.T,),
    )


# ----------------------------------------------------------------- reductions

def sum_(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _apply(
        "sum", (x,), lambda v: np.asarray(v.sum()),
        lambda g, v, out: (np.full(v.shape, float(g)),),
    )


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.size
    return _apply(
        "mean", (x,), lambda v: np.asarray(v.sum() / n),
        lambda g, v, out: (np.full(v.shape, float(g) / n),),
    )


# ------------------------------------------------------------- restructuring

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: cannot view shape {x.shape} as {shape}")
    src = x.shape
    return _apply(
        "reshape", (x,), lambda v: v.reshape(shape),
        lambda g, v, out: (g.reshape(src),),
    )


def take(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather entries of the flattened tensor into a vector."""
    index = np.asarray(index, dtype=np.intp).copy()
    src = x.shape

    def backward(g, v, out):
        full = np.zeros(v.size)
        np.add.at(full, index, g)
        return (full.reshape(src),)

    return _apply("take", (x,), lambda v: v.reshape(-1)[index], backward)


def scatter(x: Tensor, index: np.ndarray, shape: Sequence[int]) -> Tensor:
    """Place a vector into a zero tensor of ``shape`` at flat positions ``index``."""
    index = np.asarray(index, dtype=np.intp).copy()
    shape = tuple(shape)
    if x.ndim != 1 or x.shape[0] != index.size:
        raise DimensionError(f"scatter: {x.shape} values for {index.size} positions")

    def forward(v):
        out = np.zeros(int(np.prod(shape)))
        out[index] = v
        return out.reshape(shape)

    return _apply("scatter", (x,), forward, lambda g, v, out: (g.reshape(-1)[index],))


def columns(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"columns expects a matrix, got shape {x.shape}")
    src = x.shape

    def backward(g, v, out):
        full = np.zeros(src)
        full[:, start:stop] = g
        return (full,)

    return _apply("columns", (x,), lambda v: np.ascontiguousarray(v[:, start:stop]), backward)


def concat_columns(parts: Sequence[Tensor]) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.ndim != 2 for p in parts):
        raise DimensionError(f"concat_columns: shapes {[p.shape for p in parts]}")
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g, *vs, out):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(vs)))

    return _apply("concat", tuple(parts), lambda *vs: np.concatenate(vs, axis=1), backward)


# -------------------------------------------------------------------- softmax

def _softmax_unit(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(x: Tensor, tau: float = 1.0) -> Tensor:
    """Row-wise softmax of ``x / tau`` with row-max subtraction."""
    tau = float(tau)
    if not tau > 0.0:
        raise ParameterError(f"softmax temperature must be positive, got {tau}")
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {x.shape}")

    def backward(g, v, out):
        return ((out * (g - (g * out).sum(axis=1, keepdims=True))) / tau,)

    return _apply("softmax", (x,), lambda v: _softmax_unit(v / tau), backward)


# ------------------------------------------------------------------------ MLP

@dataclass
class MLPParams:
    """Two affine layers with a GELU in between: in -> hidden -> out."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]


def mlp_forward(x: Tensor, p: MLPParams) -> Tensor:
    if x.ndim != 2 or x.shape[1] != p.w1.shape[0]:
        raise DimensionError(f"mlp: input {x.shape} does not fit first layer {p.w1.shape}")
    if p.w1.shape[1] != p.b1.shape[-1] or p.w1.shape[1] != p.w2.shape[0] or p.w2.shape[1] != p.b2.shape[-1]:
        raise DimensionError(
            f"mlp: layers do not chain: w1 {p.w1.shape}, b1 {p.b1.shape}, w2 {p.w2.shape}, b2 {p.b2.shape}"
        )
    h = gelu(add(matmul(x, p.w1), p.b1))
    return add(matmul(h, p.w2), p.b2)
