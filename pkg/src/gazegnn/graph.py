"""Unified image/gaze/position graph: node embeddings and kNN edges."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .gaze import FixationSet, PatchGrid, normalize_durations, time_aggregate
from .tensor import ShapeError, Tensor

if TYPE_CHECKING:
    from .model import GazeGnnModel


@dataclass(frozen=True)
class StemConfig:
    patch_size: int = 16
    embed_dim: int = 64
    # kernel 2S / stride S with reflect padding instead of kernel S / stride S
    overlap: bool = False

    def __post_init__(self):
        if self.embed_dim <= 0:
            raise ValueError("embed_dim must be positive")
        if self.patch_size < 2:
            raise ValueError("patch_size must be >= 2")

    @property
    def kernel(self) -> int:
        return 2 * self.patch_size if self.overlap else self.patch_size

    @property
    def patch_dim(self) -> int:
        return self.kernel * self.kernel


def extract_patches(image: np.ndarray, cfg: StemConfig) -> np.ndarray:
    """Flattened pixel windows, one row per patch in row-major grid order."""
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape
    S = cfg.patch_size
    if H % S or W % S:
        raise ValueError(
            f"image {H}x{W} is not divisible by patch size {S}; resize it to a multiple of {S} first"
        )
    if cfg.overlap:
        lo, hi = S // 2, S - S // 2
        padded = np.pad(image, ((lo, hi), (lo, hi)), mode="reflect")
        win = sliding_window_view(padded, (2 * S, 2 * S))[::S, ::S]
    else:
        win = image.reshape(H // S, S, W // S, S).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(win).reshape(-1, cfg.patch_dim)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = T.matmul(x, weight)
    return T.add_bias(out, bias) if bias is not None else out


def patch_embed(image: np.ndarray, cfg: StemConfig, weight: Tensor, bias: Tensor) -> Tensor:
    """Learned (optionally overlapping) linear projection of every patch: N x D."""
    return linear(Tensor(extract_patches(image, cfg)), weight, bias)


def gaze_embed(durations, dim: int) -> Tensor:
    """Replicate each patch's scalar fixation time across ``dim`` feature columns."""
    d = np.asarray(durations, dtype=np.float64).reshape(-1, 1)
    return Tensor(np.repeat(d, dim, axis=1))


def fuse(patch: Tensor, gaze: Tensor, pos: Tensor) -> Tensor:
    if not (patch.shape == gaze.shape == pos.shape):
        raise ShapeError("fuse", patch.shape, gaze.shape, pos.shape)
    return T.add(T.add(patch, gaze), pos)


def knn_scores(features: np.ndarray, pos_table: np.ndarray | None, pos_weight: float) -> np.ndarray:
    """score(i, j) = |f_i - f_j|^2 - pos_weight * e_i.e_j, self-pairs set to +inf."""
    f = np.asarray(features, dtype=np.float64)
    sq = (f * f).sum(axis=1)
    score = sq[:, None] + sq[None, :] - 2.0 * (f @ f.T)
    if pos_weight and pos_table is not None:
        e = np.asarray(pos_table, dtype=np.float64)
        score = score - pos_weight * (e @ e.T)
    np.fill_diagonal(score, np.inf)
    return score


def knn_edges(features, pos_table, k: int, pos_weight: float = 1.0, n_graphs: int = 1) -> np.ndarray:
    """k neighbours per node (self excluded), lowest index wins ties.

    ``features`` may hold ``n_graphs`` equally sized graphs stacked along axis 0;
    neighbours never cross graphs and are returned as global row indices.
    """
    f = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    e = pos_table.data if isinstance(pos_table, Tensor) else pos_table
    M = f.shape[0]
    if M % n_graphs:
        raise ShapeError("knn_edges", f.shape, (n_graphs,))
    N = M // n_graphs
    if k >= N:
        raise ValueError(f"k={k} must be smaller than the number of nodes N={N}")
    out = np.empty((M, k), dtype=np.int64)
    for b in range(n_graphs):
        sl = slice(b * N, (b + 1) * N)
        score = knn_scores(f[sl], e, pos_weight)
        out[sl] = np.argsort(score, axis=1, kind="stable")[:, :k] + b * N
    return out


@dataclass
class GazeImageGraph:
    """One or more equally sized graphs with stacked node rows (n_graphs * N, D)."""

    node_features: Tensor
    edges: np.ndarray
    grid: PatchGrid
    pos_table: Tensor
    n_graphs: int = 1
    patch_features: Tensor | None = None
    gaze_features: Tensor | None = None

    @property
    def n_nodes(self) -> int:
        return self.grid.n_patches

    @property
    def dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def k(self) -> int:
        return self.edges.shape[1]

    def check(self) -> None:
        M = self.n_graphs * self.n_nodes
        if self.node_features.shape[0] != M:
            raise ShapeError("graph", self.node_features.shape, (M, self.dim))
        if self.edges.shape[0] != M:
            raise ValueError("edge table does not cover every node")
        owner = np.arange(M)[:, None] // self.n_nodes
        if np.any(self.edges == np.arange(M)[:, None]):
            raise ValueError("self-loop in edge table")
        if np.any(self.edges // self.n_nodes != owner):
            raise ValueError("edge crosses graphs")
        if self.patch_features is not None and self.gaze_features is not None:
            pos = np.tile(self.pos_table.data, (self.n_graphs, 1))
            recon = self.patch_features.data + self.gaze_features.data + pos
            if not np.array_equal(recon, self.node_features.data):
                raise AssertionError("node features differ from patch + gaze + position embeddings")

    def to_json(self) -> dict:
        return {
            "N": self.n_nodes * self.n_graphs,
            "D": self.dim,
            "k": self.k,
            "nodes": self.node_features.data.tolist(),
            "edges": self.edges.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def gaze_vector(fix: FixationSet | None, grid: PatchGrid, enabled: bool = True, raw: bool = False) -> np.ndarray:
    if not enabled or fix is None:
        return np.zeros(grid.n_patches)
    if (fix.image_height, fix.image_width) != (grid.height, grid.width):
        fix = fix.rescaled(grid.height, grid.width)
    v = time_aggregate(fix, grid)
    return v if raw else normalize_durations(v)


def build_batch(
    images: Sequence[np.ndarray],
    fixations: Sequence[FixationSet | None],
    model: "GazeGnnModel",
) -> GazeImageGraph:
    """Embed and connect a batch of images (already at the model's input size)."""
    cfg = model.config
    stem = cfg.stem
    grid = PatchGrid(cfg.input_size, cfg.input_size, stem.patch_size)
    patches, gazes = [], []
    for img, fix in zip(images, fixations):
        img = np.asarray(img, dtype=np.float64)
        if img.shape != (cfg.input_size, cfg.input_size):
            raise ValueError(f"image shape {img.shape} != model input {(cfg.input_size, cfg.input_size)}")
        patches.append(extract_patches(img, stem))
        gazes.append(gaze_vector(fix, grid, cfg.gaze_enabled, cfg.raw_durations))
    B, N, D = len(patches), grid.n_patches, stem.embed_dim
    p = model.params
    patch_feat = linear(Tensor(np.concatenate(patches)), p["stem.weight"], p["stem.bias"])
    gaze_feat = gaze_embed(np.concatenate(gazes), D)
    pos = T.gather(p["pos_table"], np.tile(np.arange(N), B)) if B > 1 else p["pos_table"]
    x = fuse(patch_feat, gaze_feat, pos)
    edges = knn_edges(x.data, p["pos_table"].data, cfg.k, cfg.pos_weight, n_graphs=B)
    g = GazeImageGraph(x, edges, grid, p["pos_table"], B, patch_feat, gaze_feat)
    g.check()
    return g


def build_graph(image: np.ndarray, fixations: FixationSet | None, model: "GazeGnnModel") -> GazeImageGraph:
    return build_batch([image], [fixations], model)
