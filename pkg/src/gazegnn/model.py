"""Grapher-block GNN classifier over gaze/image graphs."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import GazeImageGraph, StemConfig, knn_edges, linear
from .tensor import ShapeError, Tensor


@dataclass
class ModelConfig:
    input_size: int = 224
    patch_size: int = 16
    embed_dim: int = 64
    k: int = 9
    n_blocks: int = 4
    n_classes: int = 3
    overlap: bool = False
    pos_weight: float = 1.0  # lambda on e_i.e_j for the initial graph
    block_pos_weight: float = 0.0  # same term inside per-block kNN
    dynamic_knn: bool = True
    ffn_ratio: int = 4
    gaze_enabled: bool = True
    raw_durations: bool = False
    norm_eps: float = 1e-5

    @property
    def stem(self) -> StemConfig:
        return StemConfig(self.patch_size, self.embed_dim, self.overlap)

    @property
    def n_nodes(self) -> int:
        return (self.input_size // self.patch_size) ** 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


PRESETS = {
    "default": ModelConfig(),
    # 14x14 grid variant: 224 / 16 = 14 rows and cols, S=14 gives 16x16
    "s14": ModelConfig(patch_size=14),
    # larger configuration, not exercised by the test-suite
    "paper-ish": ModelConfig(embed_dim=192, n_blocks=12),
    # small synthetic-data experiments on one CPU
    "desk": ModelConfig(input_size=32, patch_size=4, embed_dim=24, k=8, n_blocks=2),
}


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class GazeGnnModel:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return sorted(self.params.items())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(arrays)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for k, v in arrays.items():
            if self.params[k].shape != v.shape:
                raise ShapeError(f"load {k}", self.params[k].shape, v.shape)
            self.params[k].data = np.array(v, dtype=np.float64)

    def save(self, path, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        meta["model_config"] = self.config.to_dict()
        T.save_params(self.params, path, meta)

    @classmethod
    def load(cls, path) -> "GazeGnnModel":
        arrays, meta = T.load_params(path)
        model = init_params(ModelConfig.from_dict(meta["model_config"]), seed=0)
        model.load_state(arrays)
        return model

    def config_json(self) -> str:
        return json.dumps(self.config.to_dict(), sort_keys=True)


def init_params(config: ModelConfig, seed: int = 0) -> GazeGnnModel:
    """Affine weights ~ U(+-sqrt(1/fan_in)), biases 0, position table ~ N(0, 0.02^2)."""
    rng = np.random.default_rng(seed)
    D, H = config.embed_dim, config.embed_dim * config.ffn_ratio
    P = config.stem.patch_dim
    shapes: list[tuple[str, tuple[int, ...]]] = [("stem.weight", (P, D)), ("stem.bias", (D,))]
    for t in range(config.n_blocks):
        b = f"blocks.{t}"
        shapes += [
            # fc1 and fc3 carry no bias: it would cancel in r_i - r_j and in node_norm
            (f"{b}.fc1.weight", (D, D)),
            (f"{b}.gconv.weight", (D, D)),
            (f"{b}.norm1.gamma", (D,)), (f"{b}.norm1.beta", (D,)),
            (f"{b}.fc2.weight", (D, D)), (f"{b}.fc2.bias", (D,)),
            (f"{b}.fc3.weight", (D, H)),
            (f"{b}.norm2.gamma", (H,)), (f"{b}.norm2.beta", (H,)),
            (f"{b}.fc4.weight", (H, D)), (f"{b}.fc4.bias", (D,)),
        ]
    shapes += [("head.weight", (D, config.n_classes)), ("head.bias", (config.n_classes,))]

    params: dict[str, Tensor] = {}
    for name, shape in shapes:
        if name.endswith(".gamma"):
            arr = np.ones(shape)
        elif name.endswith((".bias", ".beta")):
            arr = np.zeros(shape)
        else:
            arr = _uniform(rng, shape[0], shape)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    pos = rng.normal(0.0, 0.02, size=(config.n_nodes, D))
    params["pos_table"] = Tensor(pos, requires_grad=True, name="pos_table")
    return GazeGnnModel(config, params)


def graph_conv(R: Tensor, edges: np.ndarray, W: Tensor) -> Tensor:
    """Max-relative aggregation: s_i = W @ max_j (r_i - r_j) over the neighbours of i."""
    M, D = R.shape
    edges = np.asarray(edges, dtype=np.int64).reshape(M, -1)
    k = edges.shape[1]
    if k == 0:
        return T.matmul(Tensor(np.zeros((M, D))), T.transpose(W))
    centre = T.gather(R, np.repeat(np.arange(M), k).reshape(M, k))
    nbrs = T.gather(R, edges)
    agg = T.max(T.sub(centre, nbrs), axis=1)
    return T.matmul(agg, T.transpose(W))


def _affine_norm(x: Tensor, gamma: Tensor, beta: Tensor, n_graphs: int, eps: float) -> Tensor:
    return T.add_bias(T.mul_row(T.node_norm(x, n_graphs, eps), gamma), beta)


def grapher_forward(
    model: GazeGnnModel,
    t: int,
    X: Tensor,
    edges: np.ndarray,
    n_graphs: int = 1,
    pos_table: Tensor | None = None,
) -> Tensor:
    """One block: graph branch and feed-forward branch, each with a residual."""
    cfg, p = model.config, model.params
    b = f"blocks.{t}"
    R = linear(X, p[f"{b}.fc1.weight"])
    if cfg.dynamic_knn:
        e = pos_table.data if pos_table is not None else None
        edges = knn_edges(R.data, e, edges.shape[1], cfg.block_pos_weight, n_graphs)
    S = graph_conv(R, edges, p[f"{b}.gconv.weight"])
    h = T.gelu(_affine_norm(S, p[f"{b}.norm1.gamma"], p[f"{b}.norm1.beta"], n_graphs, cfg.norm_eps))
    Y = T.add(linear(h, p[f"{b}.fc2.weight"], p[f"{b}.fc2.bias"]), X)
    h = linear(Y, p[f"{b}.fc3.weight"])
    h = T.gelu(_affine_norm(h, p[f"{b}.norm2.gamma"], p[f"{b}.norm2.beta"], n_graphs, cfg.norm_eps))
    return T.add(linear(h, p[f"{b}.fc4.weight"], p[f"{b}.fc4.bias"]), Y)


def model_logits(model: GazeGnnModel, graph: GazeImageGraph) -> Tensor:
    """Blocks -> mean pool over nodes -> head. Returns (n_graphs, C) logits."""
    if graph.dim != model.config.embed_dim:
        raise ShapeError("model_forward", (graph.dim,), (model.config.embed_dim,))
    X = graph.node_features
    for t in range(model.config.n_blocks):
        X = grapher_forward(model, t, X, graph.edges, graph.n_graphs, graph.pos_table)
    pooled = T.mean(T.reshape(X, (graph.n_graphs, -1, graph.dim)), axis=1)
    return linear(pooled, model.params["head.weight"], model.params["head.bias"])


def model_forward(model: GazeGnnModel, graph: GazeImageGraph) -> Tensor:
    """Class probabilities, shape (n_graphs, C)."""
    return T.softmax(model_logits(model, graph), axis=-1)
