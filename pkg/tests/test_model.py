import dataclasses
import time

import numpy as np
import pytest

from gazegnn import tensor as T
from gazegnn.gaze import FixationSet
from gazegnn.gradcheck import check_gradients, model_gradient_errors
from gazegnn.graph import GazeImageGraph, build_batch, build_graph
from gazegnn.model import GazeGnnModel, ModelConfig, PRESETS, graph_conv, grapher_forward, init_params, model_forward
from gazegnn.tensor import ShapeError, Tensor

SMALL = ModelConfig(input_size=16, patch_size=4, embed_dim=8, k=3, n_blocks=2)


def graph_conv_oracle(R, edges, W):
    """Materialise every difference vector, take the coordinate max, then apply W."""
    out = []
    for i, nbrs in enumerate(edges):
        diffs = [[R[i][t] - R[j][t] for t in range(len(R[i]))] for j in nbrs]
        m = [max(d[t] for d in diffs) for t in range(len(R[i]))] if diffs else [0.0] * len(R[i])
        out.append([sum(W[a][b] * m[b] for b in range(len(m))) for a in range(len(W))])
    return np.array(out)


def _sample(seed=0, size=16):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(0, size, (6, 2)), rng.uniform(0.1, 1.0, 6)])
    return rng.uniform(size=(size, size)), FixationSet.from_points(pts, size, size)


def test_graph_conv_single_neighbour():
    R = Tensor([[1.0, 0.0], [0.0, 2.0]])
    out = graph_conv(R, np.array([[1], [0]]), Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data[0], [1, -2])


def test_graph_conv_coordinate_max():
    R = Tensor([[1.0, 0.0], [0.0, 2.0], [2.0, -1.0]])
    out = graph_conv(R, np.array([[1, 2], [0, 2], [0, 1]]), Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data[0], [1, 1])


def test_graph_conv_empty_neighbourhood():
    out = graph_conv(Tensor(np.ones((3, 2))), np.zeros((3, 0), dtype=int), Tensor(np.eye(2)))
    assert out.shape == (3, 2) and not out.data.any()


@pytest.mark.parametrize("trial", range(50))
def test_graph_conv_matches_oracle(trial):
    rng = np.random.default_rng([11, trial])
    N, D = int(rng.integers(3, 12)), int(rng.integers(1, 6))
    k = int(rng.integers(1, N))
    R = rng.normal(size=(N, D))
    W = rng.normal(size=(D, D))
    edges = np.array([rng.choice([j for j in range(N) if j != i], k, replace=False) for i in range(N)])
    got = graph_conv(Tensor(R), edges, Tensor(W)).data
    np.testing.assert_allclose(got, graph_conv_oracle(R.tolist(), edges.tolist(), W.tolist()), rtol=0, atol=1e-12)


def test_graph_conv_gradient():
    rng = np.random.default_rng(0)
    R = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    W = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    edges = np.array([[1, 2], [0, 3], [4, 5], [2, 1], [5, 0], [3, 4]])
    w = Tensor(rng.normal(size=(6, 3)))
    for err in check_gradients(lambda: T.sum(T.mul(graph_conv(R, edges, W), w)), [R, W]):
        assert err < 1e-6


def test_zero_maps_leave_input_unchanged():
    model = init_params(SMALL, seed=0)
    for name, p in model.params.items():
        if name.startswith("blocks.0.") and not name.endswith(".gamma"):
            p.data = np.zeros_like(p.data)
    X = Tensor(np.random.default_rng(1).normal(size=(16, 8)))
    edges = np.tile(np.arange(1, 4), (16, 1))
    edges[1:4] = 0
    out = grapher_forward(model, 0, X, edges)
    np.testing.assert_array_equal(out.data, X.data)


def test_grapher_preserves_shape():
    model = init_params(SMALL, seed=0)
    X = Tensor(np.random.default_rng(2).normal(size=(32, 8)))
    edges = np.zeros((32, 3), dtype=int)
    assert grapher_forward(model, 1, X, edges, n_graphs=2).shape == (32, 8)


def test_grapher_input_gradient():
    model = init_params(SMALL, seed=3)
    rng = np.random.default_rng(3)
    X = Tensor(rng.normal(size=(16, 8)), requires_grad=True)
    w = Tensor(rng.normal(size=(16, 8)))
    edges = np.zeros((16, 3), dtype=int)
    (err,) = check_gradients(lambda: T.sum(T.mul(grapher_forward(model, 0, X, edges), w)), [X])
    assert err < 1e-4


def test_end_to_end_gradients_every_group():
    t0 = time.perf_counter()
    errs = model_gradient_errors(seed=0)
    assert time.perf_counter() - t0 < 60
    assert len(errs) == len(init_params(SMALL).params)
    worst = max(errs, key=errs.get)
    assert errs[worst] < 1e-4, (worst, errs[worst])


def test_zero_head_gives_uniform_probabilities():
    model = init_params(SMALL, seed=0)
    model.params["head.weight"].data[:] = 0.0
    p = model_forward(model, build_graph(*_sample(), model)).data
    np.testing.assert_array_equal(p, np.full((1, 3), 1 / 3))


def test_probabilities_normalised():
    model = init_params(SMALL, seed=4)
    imgs, fixes = zip(*[_sample(s) for s in range(4)])
    p = model_forward(model, build_batch(imgs, fixes, model)).data
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-9)
    assert np.all((p > 0) & (p < 1))


def permute_graph(g: GazeImageGraph, perm: np.ndarray) -> GazeImageGraph:
    inv = np.argsort(perm)
    return dataclasses.replace(
        g,
        node_features=Tensor(g.node_features.data[perm]),
        edges=inv[g.edges[perm]],
        pos_table=Tensor(g.pos_table.data[perm]),
        patch_features=None,
        gaze_features=None,
    )


@pytest.mark.parametrize("block_pos_weight", [0.0, 1.0])
def test_node_permutation_invariance(block_pos_weight):
    cfg = dataclasses.replace(SMALL, block_pos_weight=block_pos_weight)
    model = init_params(cfg, seed=5)
    g = build_graph(*_sample(5), model)
    base = model_forward(model, g).data
    rng = np.random.default_rng(5)
    for _ in range(20):
        out = model_forward(model, permute_graph(g, rng.permutation(16))).data
        assert np.abs(out - base).max() <= 1e-9


def test_dimension_mismatch_rejected():
    model = init_params(SMALL, seed=0)
    other = init_params(dataclasses.replace(SMALL, embed_dim=4), seed=0)
    g = build_graph(*_sample(), other)
    with pytest.raises(ShapeError):
        model_forward(model, g)


def test_init_is_seeded():
    a, b, c = init_params(SMALL, 1), init_params(SMALL, 1), init_params(SMALL, 2)
    for name in a.params:
        assert a.params[name].data.tobytes() == b.params[name].data.tobytes()
    assert any(not np.array_equal(a.params[n].data, c.params[n].data) for n in a.params if n.endswith("weight"))


def test_init_ranges():
    model = init_params(ModelConfig(), seed=0)
    w = model.params["blocks.0.fc1.weight"].data  # fan_in 64
    assert np.abs(w).max() <= 0.125 and np.abs(w).max() > 0.12
    assert not model.params["head.bias"].data.any()
    pos = model.params["pos_table"].data
    assert pos.shape == (196, 64) and abs(pos.std() - 0.02) < 0.001


def test_symmetry_collapse():
    cfg = dataclasses.replace(SMALL, gaze_enabled=False)
    model = init_params(cfg, seed=0)
    model.params["pos_table"].data[:] = 0.0
    g = build_graph(np.full((16, 16), 0.3), None, model)
    assert np.all(g.node_features.data == g.node_features.data[0])
    R = T.matmul(g.node_features, model.params["blocks.0.fc1.weight"])
    assert not graph_conv(R, g.edges, model.params["blocks.0.gconv.weight"]).data.any()


@pytest.mark.parametrize("name", ["default", "s14", "desk"])
def test_presets_run(name):
    model = init_params(PRESETS[name], seed=0)
    n = model.config.input_size
    p = model_forward(model, build_graph(np.zeros((n, n)), None, model)).data
    assert p.shape == (1, 3)


def test_checkpoint_roundtrip_preserves_output(tmp_path):
    model = init_params(SMALL, seed=7)
    path = tmp_path / "m.json"
    model.save(path, {"seed": 7})
    back = GazeGnnModel.load(path)
    assert back.config == model.config
    g = build_graph(*_sample(), model)
    assert model_forward(model, g).data.tobytes() == model_forward(back, build_graph(*_sample(), back)).data.tobytes()
