"""Central finite-difference gradient checking for the autodiff engine."""
from __future__ import annotations

import zlib
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def numeric_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f / d t by central differences, perturbing ``t.data`` in place."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gf = g.reshape(-1)
    with T.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            gf[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(f: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5) -> list[float]:
    """Relative error of backprop vs finite differences for each tensor."""
    for t in tensors:
        t.grad = None
    T.backward(f())
    errs = []
    for t in tensors:
        a = t.grad if t.grad is not None else np.zeros_like(t.data)
        errs.append(relative_error(a, numeric_grad(f, t, h)))
    return errs


def _leaf(shape, rng, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def primitive_cases() -> dict:
    """One builder per primitive: ``builder(rng) -> (loss_fn, leaves)``."""

    def unary(fn, shape=(3, 4), lo=-1.0, hi=1.0):
        def build(rng):
            x = _leaf(shape, rng, lo, hi)
            w = Tensor(rng.normal(size=fn(x).shape))
            return (lambda: T.sum(T.mul(fn(x), w))), [x]
        return build

    def binary(fn):
        def build(rng):
            a, b = _leaf((3, 4), rng), _leaf((3, 4), rng)
            w = Tensor(rng.normal(size=(3, 4)))
            return (lambda: T.sum(T.mul(fn(a, b), w))), [a, b]
        return build

    def mm(rng):
        a, b = _leaf((2, 3, 4), rng), _leaf((4, 5), rng)
        w = Tensor(rng.normal(size=(2, 3, 5)))
        return (lambda: T.sum(T.mul(T.matmul(a, b), w))), [a, b]

    def cat(rng):
        a, b = _leaf((2, 3), rng), _leaf((4, 3), rng)
        w = Tensor(rng.normal(size=(6, 3)))
        return (lambda: T.sum(T.mul(T.concat([a, b]), w))), [a, b]

    def gat(rng):
        a = _leaf((5, 3), rng)
        idx = np.array([[0, 4], [4, 4], [2, 1]])
        w = Tensor(rng.normal(size=(3, 2, 3)))
        return (lambda: T.sum(T.mul(T.gather(a, idx), w))), [a]

    def bias(rng):
        a, b = _leaf((4, 3), rng), _leaf((3,), rng)
        w = Tensor(rng.normal(size=(4, 3)))
        return (lambda: T.sum(T.mul(T.add_bias(a, b), w))), [a, b]

    def mrow(rng):
        a, b = _leaf((4, 3), rng), _leaf((3,), rng)
        w = Tensor(rng.normal(size=(4, 3)))
        return (lambda: T.sum(T.mul(T.mul_row(a, b), w))), [a, b]

    def scalar_mul(rng):
        a, s = _leaf((3, 2), rng), _leaf((), rng)
        w = Tensor(rng.normal(size=(3, 2)))
        return (lambda: T.sum(T.mul(T.mul(a, s), w))), [a, s]

    def nnorm(rng):
        a = _leaf((12, 3), rng)
        w = Tensor(rng.normal(size=(12, 3)))
        return (lambda: T.sum(T.mul(T.node_norm(a, 3), w))), [a]

    return {
        "add": binary(T.add),
        "sub": binary(T.sub),
        "mul": binary(T.mul),
        "scalar_mul": scalar_mul,
        "scale": unary(lambda x: T.scale(x, -2.5)),
        "matmul": mm,
        "sum_axis": unary(lambda x: T.sum(x, axis=1)),
        "sum_all": unary(lambda x: T.sum(x)),
        "mean_axis": unary(lambda x: T.mean(x, axis=0)),
        "max_axis": unary(lambda x: T.max(x, axis=1)),
        "relu": unary(T.relu),
        "gelu": unary(T.gelu),
        "exp": unary(T.exp),
        "log": unary(T.log, lo=0.2, hi=1.0),
        "softmax": unary(lambda x: T.softmax(x, axis=1)),
        "log_softmax": unary(lambda x: T.log_softmax(x, axis=1)),
        "logsumexp": unary(lambda x: T.logsumexp(x, axis=1)),
        "transpose": unary(T.transpose),
        "reshape": unary(lambda x: T.reshape(x, (2, 6))),
        "concat": cat,
        "gather": gat,
        "add_bias": bias,
        "mul_row": mrow,
        "node_norm": nnorm,
    }


def primitive_gradient_errors(h: float = 1e-5) -> dict[str, float]:
    """Worst relative error per primitive, each case seeded from its name."""
    out = {}
    for name, build in sorted(primitive_cases().items()):
        f, leaves = build(np.random.default_rng(zlib.crc32(name.encode())))
        out[name] = max(check_gradients(f, leaves, h))
    return out


def model_gradient_errors(seed: int = 0, h: float = 1e-5, n_blocks: int = 2, embed_dim: int = 8,
                          k: int = 3, batch: int = 2) -> dict[str, float]:
    """Relative error for every parameter group of a small model (N=16) on a cross-entropy loss."""
    from .gaze import FixationSet
    from .graph import build_batch
    from .model import ModelConfig, init_params, model_logits
    from .train import cross_entropy

    cfg = ModelConfig(input_size=16, patch_size=4, embed_dim=embed_dim, k=k, n_blocks=n_blocks)
    model = init_params(cfg, seed)
    rng = np.random.default_rng(seed)
    # move norm affine and biases off their trivial init so every path carries signal
    for name, p in model.params.items():
        if name.endswith((".gamma", ".beta", ".bias")):
            p.data = p.data + rng.normal(0.0, 0.3, size=p.shape)
    images = [rng.uniform(size=(16, 16)) for _ in range(batch)]
    fixes = [FixationSet.from_points(np.column_stack([rng.uniform(0, 16, (5, 2)), rng.uniform(0.1, 1, 5)]), 16, 16)
             for _ in range(batch)]
    labels = [i % cfg.n_classes for i in range(batch)]

    def loss():
        g = build_batch(images, fixes, model)
        return cross_entropy(model_logits(model, g), labels)

    names = [n for n, _ in model.parameters()]
    errs = check_gradients(loss, [model.params[n] for n in names], h)
    return dict(zip(names, errs))
