"""Small reverse-mode autodiff over float64 numpy arrays.

Every op records its parents and a closure that pushes the upstream gradient
back to them. ``backward`` replays the recorded DAG in reverse topological
order. Broadcasting is limited to scalar-vs-tensor; everything else needs
matching shapes.
"""
from __future__ import annotations

import contextlib
import json
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True
_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

CHECKPOINT_MAGIC = "GAZEGNN-CKPT"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        desc = " vs ".join(str(list(s)) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference on frozen parameters)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(op, a.shape, b.shape)


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    # scalar operand of a scalar-vs-tensor op collects the summed gradient
    return np.asarray(g.sum()) if t.data.ndim == 0 and g.ndim != 0 else g


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("add", a, b)

    def bw(g):
        if a.requires_grad:
            a._accum(_reduce_to(g, a))
        if b.requires_grad:
            b._accum(_reduce_to(g, b))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("sub", a, b)

    def bw(g):
        if a.requires_grad:
            a._accum(_reduce_to(g, a))
        if b.requires_grad:
            b._accum(_reduce_to(-g, b))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("mul", a, b)

    def bw(g):
        if a.requires_grad:
            a._accum(_reduce_to(g * b.data, a))
        if b.requires_grad:
            b._accum(_reduce_to(g * a.data, b))

    return _make(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        a._accum(g * c)

    return _make(a.data * c, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bw(g):
        a._accum(g * out)

    return _make(out, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g):
        a._accum(g / a.data)

    return _make(np.log(a.data), (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        a._accum(g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), bw)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT_2))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        a._accum(g * (cdf + x * pdf))

    return _make(x * cdf, (a,), bw)


# -- linear algebra / shape -------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., K) @ (K, M) -> (..., M). Left operand may carry leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            b._accum(a2.T @ g.reshape(-1, g.shape[-1]))

    return _make(a.data @ b.data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.shape)

    def bw(g):
        a._accum(g.T)

    return _make(a.data.T.copy(), (a,), bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None

    def bw(g):
        a._accum(g.reshape(a.shape))

    return _make(out, (a,), bw)


def concat(ts: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    ref = list(ts[0].shape)
    for t in ts[1:]:
        s = list(t.shape)
        if len(s) != len(ref) or any(x != y for i, (x, y) in enumerate(zip(s, ref)) if i != axis % len(ref)):
            raise ShapeError("concat", ts[0].shape, t.shape)
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, cuts, axis=axis)):
            if t.requires_grad:
                t._accum(part)

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def gather(a: Tensor, index) -> Tensor:
    """Select rows along axis 0: out[...] = a[index[...]]. Repeated indices accumulate."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise IndexError(f"gather: index out of range for axis of size {a.shape[0]}")

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index.reshape(-1), g.reshape((-1,) + a.shape[1:]))
        a._accum(full)

    return _make(a.data[index], (a,), bw)


def add_bias(a: Tensor, bias: Tensor) -> Tensor:
    """Add a length-D vector to every row of a (..., D) tensor."""
    if bias.data.ndim != 1 or a.shape[-1] != bias.shape[0]:
        raise ShapeError("add_bias", a.shape, bias.shape)

    def bw(g):
        if a.requires_grad:
            a._accum(g)
        if bias.requires_grad:
            bias._accum(g.reshape(-1, bias.shape[0]).sum(axis=0))

    return _make(a.data + bias.data, (a, bias), bw)


def mul_row(a: Tensor, v: Tensor) -> Tensor:
    """Multiply every row of a (..., D) tensor elementwise by a length-D vector."""
    if v.data.ndim != 1 or a.shape[-1] != v.shape[0]:
        raise ShapeError("mul_row", a.shape, v.shape)

    def bw(g):
        if a.requires_grad:
            a._accum(g * v.data)
        if v.requires_grad:
            v._accum((g * a.data).reshape(-1, v.shape[0]).sum(axis=0))

    return _make(a.data * v.data, (a, v), bw)


# -- reductions ---------------------------------------------------------------
def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    def bw(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape))
        else:
            a._accum(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), bw)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def max(a: Tensor, axis: int) -> Tensor:  # noqa: A001
    """Max over one axis. Gradient goes to the argmax; ties -> lowest index."""
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        a._accum(full)

    return _make(out, (a,), bw)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)

    def bw(g):
        a._accum(np.expand_dims(g, axis) * e / s)

    return _make(out, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        a._accum(g - p * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accum(p * (g - (g * p).sum(axis=axis, keepdims=True)))

    return _make(p, (a,), bw)


def node_norm(a: Tensor, n_graphs: int, eps: float = 1e-5) -> Tensor:
    """Per-feature standardization over the node axis of each graph.

    ``a`` holds ``n_graphs`` stacked graphs of equal size, shape (n_graphs*N, D).
    Statistics never mix graphs, so results do not depend on batch composition.
    """
    if a.data.ndim != 2 or a.shape[0] % n_graphs:
        raise ShapeError("node_norm", a.shape, (n_graphs,))
    B, D = n_graphs, a.shape[1]
    x = a.data.reshape(B, -1, D)
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        g = g.reshape(B, -1, D)
        gm = g.mean(axis=1, keepdims=True)
        gxm = (g * xhat).mean(axis=1, keepdims=True)
        a._accum((inv * (g - gm - xhat * gxm)).reshape(a.shape))

    return _make(xhat.reshape(a.shape), (a,), bw)


# -- driver -----------------------------------------------------------------
def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable leaf and node."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        raise ValueError("loss is not attached to any tensor that requires grad")
    order = _topo_order(loss)
    # intermediate grads are rebuilt each call; leaves keep accumulating
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- checkpoints ----------------------------------------------------------------
def save_params(params: dict[str, Tensor], path, meta: dict | None = None) -> None:
    """Write a versioned JSON checkpoint: name -> {shape, values (row-major)}."""
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {
            k: {"shape": list(v.shape), "values": v.data.reshape(-1).tolist()}
            for k, v in sorted(params.items())
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a gazegnn checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    arrays = {
        k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"])
        for k, v in payload["params"].items()
    }
    return arrays, payload.get("meta", {})
