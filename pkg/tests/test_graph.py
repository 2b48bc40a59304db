import numpy as np
import pytest

from gazegnn import tensor as T
from gazegnn.gaze import FixationSet
from gazegnn.graph import (
    StemConfig, build_batch, build_graph, extract_patches, fuse, gaze_embed, knn_edges, patch_embed,
)
from gazegnn.model import ModelConfig, init_params
from gazegnn.tensor import ShapeError, Tensor


def knn_oracle(f, e, k, lam):
    """Score every ordered pair with plain loops, then pick k by (score, index)."""
    N = len(f)
    out = []
    for i in range(N):
        scored = []
        for j in range(N):
            if j == i:
                continue
            d = sum((f[i][t] - f[j][t]) ** 2 for t in range(len(f[i])))
            dot = sum(e[i][t] * e[j][t] for t in range(len(e[i])))
            scored.append((d - lam * dot, j))
        scored.sort()
        out.append([j for _, j in scored[:k]])
    return np.array(out)


def test_patch_embed_mean_example():
    img = np.zeros((8, 8))
    for idx, (r, c) in enumerate([(0, 0), (0, 4), (4, 0), (4, 4)]):
        img[r:r + 4, c:c + 4] = idx + 1
    cfg = StemConfig(patch_size=4, embed_dim=2)
    out = patch_embed(img, cfg, Tensor(np.full((16, 2), 1 / 16)), Tensor(np.zeros(2)))
    np.testing.assert_allclose(out.data, [[1, 1], [2, 2], [3, 3], [4, 4]], atol=1e-15)


@pytest.mark.parametrize("overlap", [False, True])
def test_constant_image_gives_identical_rows(overlap):
    cfg = StemConfig(patch_size=4, embed_dim=3, overlap=overlap)
    rng = np.random.default_rng(0)
    out = patch_embed(np.full((12, 16), 0.4), cfg, Tensor(rng.normal(size=(cfg.patch_dim, 3))), Tensor(rng.normal(size=3)))
    assert out.shape == (12, 3)
    assert np.all(out.data == out.data[0])


def test_overlap_window_shape():
    assert extract_patches(np.zeros((8, 8)), StemConfig(4, 2, overlap=True)).shape == (4, 64)


def test_patch_embed_rejects_indivisible():
    with pytest.raises(ValueError, match="resize"):
        extract_patches(np.zeros((10, 8)), StemConfig(4, 2))


def test_gaze_embed_examples():
    np.testing.assert_array_equal(gaze_embed([0.25, 0.75], 3).data, [[.25] * 3, [.75] * 3])
    assert not gaze_embed(np.zeros(5), 4).data.any()


def test_fuse_examples_and_linearity():
    out = fuse(Tensor([[1.0, 2.0]]), Tensor([[0.5, 0.5]]), Tensor([[0.0, 1.0]]))
    np.testing.assert_array_equal(out.data, [[1.5, 3.5]])
    rng = np.random.default_rng(1)
    a, b, c, d = (rng.integers(-8, 8, size=(4, 3)) / 8.0 for _ in range(4))
    delta = fuse(Tensor(a + d), Tensor(b), Tensor(c)).data - fuse(Tensor(a), Tensor(b), Tensor(c)).data
    np.testing.assert_array_equal(delta, d)
    with pytest.raises(ShapeError):
        fuse(Tensor(a), Tensor(b[:2]), Tensor(c))


def test_fuse_gradient_reaches_every_addend():
    rng = np.random.default_rng(2)
    xs = [Tensor(rng.normal(size=(3, 2)), requires_grad=True) for _ in range(3)]
    w = rng.normal(size=(3, 2))
    T.backward(T.sum(T.mul(fuse(*xs), Tensor(w))))
    for x in xs:
        np.testing.assert_array_equal(x.grad, w)


def test_knn_example():
    f = np.array([[0.0], [1.0], [10.0]])
    np.testing.assert_array_equal(knn_edges(f, None, 1, 0.0), [[1], [0], [1]])


def test_knn_complete_graph_and_k_too_large():
    f = np.random.default_rng(3).normal(size=(5, 2))
    e = knn_edges(f, None, 4, 0.0)
    for i in range(5):
        assert sorted(e[i]) == [j for j in range(5) if j != i]
    with pytest.raises(ValueError):
        knn_edges(f, None, 5, 0.0)


def test_knn_duplicate_rows_break_ties_by_index():
    f = np.array([[1.0, 1.0]] * 4)
    np.testing.assert_array_equal(knn_edges(f, None, 2, 0.0), [[1, 2], [0, 2], [0, 1], [0, 1]])


@pytest.mark.parametrize("trial", range(200))
def test_knn_matches_brute_force(trial):
    rng = np.random.default_rng([7, trial])
    N = int(rng.integers(2, 65))
    D = int(rng.integers(1, 9))
    k = int(rng.integers(1, N))
    lam = [0.0, 0.5, 1.0][trial % 3]
    # quantised values keep both computations exact, so ties are real ties
    f = rng.integers(-4, 5, size=(N, D)) / 4.0
    e = rng.integers(-4, 5, size=(N, D)) / 4.0
    np.testing.assert_array_equal(knn_edges(f, e, k, lam), knn_oracle(f.tolist(), e.tolist(), k, lam))


def test_knn_permutation_consistency():
    rng = np.random.default_rng(4)
    f, e = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    perm = rng.permutation(20)
    base = knn_edges(f, e, 5, 1.0)
    permuted = knn_edges(f[perm], e[perm], 5, 1.0)
    # row i of the permuted problem is node perm[i]; map its neighbours back
    np.testing.assert_array_equal(perm[permuted], base[perm])


def test_knn_batched_graphs_stay_separate():
    rng = np.random.default_rng(5)
    f = rng.normal(size=(30, 2))
    e = knn_edges(f, None, 3, 0.0, n_graphs=3)
    for b in range(3):
        sl = slice(10 * b, 10 * (b + 1))
        np.testing.assert_array_equal(e[sl], knn_edges(f[sl], None, 3, 0.0) + 10 * b)


TOY = ModelConfig(input_size=8, patch_size=4, embed_dim=4, k=2, n_blocks=1)


def _toy_sample(seed=0):
    rng = np.random.default_rng(seed)
    img = rng.uniform(size=(8, 8))
    fix = FixationSet.from_points([(1, 1, 0.3), (6, 2, 0.1), (5, 7, 0.6)], 8, 8)
    return img, fix


def test_toy_graph_reconstruction():
    model = init_params(TOY, seed=1)
    img, fix = _toy_sample()
    g = build_graph(img, fix, model)
    p = model.params
    patches = np.stack([img[r:r + 4, c:c + 4].reshape(-1) for r in (0, 4) for c in (0, 4)])
    patch = patches @ p["stem.weight"].data + p["stem.bias"].data
    gaze = np.repeat(np.array([0.3, 0.0, 0.1, 0.6])[:, None], 4, axis=1)
    np.testing.assert_allclose(g.node_features.data, patch + gaze + p["pos_table"].data, atol=1e-15)
    assert g.edges.shape == (4, 2)
    assert not np.any(g.edges == np.arange(4)[:, None])


def test_gaze_off_equals_empty_fixations():
    img, fix = _toy_sample()
    on = init_params(TOY, seed=2)
    off = init_params(ModelConfig(**{**TOY.to_dict(), "gaze_enabled": False}), seed=2)
    a = build_graph(img, fix, off)
    b = build_graph(img, FixationSet.empty(8, 8), on)
    assert a.node_features.data.tobytes() == b.node_features.data.tobytes()
    np.testing.assert_array_equal(a.edges, b.edges)


def test_build_graph_is_deterministic():
    img, fix = _toy_sample(3)
    a = build_graph(img, fix, init_params(TOY, seed=5)).dumps()
    b = build_graph(img, fix, init_params(TOY, seed=5)).dumps()
    assert a == b


def test_fixations_at_source_resolution_are_rescaled():
    model = init_params(TOY, seed=0)
    img, _ = _toy_sample()
    big = FixationSet.from_points([(70, 10, 1.0)], 80, 80)
    g = build_graph(img, big, model)
    assert g.gaze_features.data[2, 0] == 1.0 and g.gaze_features.data.sum() == 4.0


def test_batch_matches_single_graphs():
    model = init_params(TOY, seed=0)
    samples = [_toy_sample(s) for s in range(3)]
    batch = build_batch([s[0] for s in samples], [s[1] for s in samples], model)
    for b, (img, fix) in enumerate(samples):
        single = build_graph(img, fix, model)
        np.testing.assert_array_equal(batch.node_features.data[4 * b:4 * b + 4], single.node_features.data)
        np.testing.assert_array_equal(batch.edges[4 * b:4 * b + 4], single.edges + 4 * b)


def test_graph_json_layout():
    g = build_graph(*_toy_sample(), init_params(TOY, seed=0))
    d = g.to_json()
    assert (d["N"], d["D"], d["k"]) == (4, 4, 2)
    assert len(d["nodes"]) == 4 and len(d["edges"][0]) == 2


def test_wrong_image_size_rejected():
    with pytest.raises(ValueError):
        build_graph(np.zeros((16, 16)), None, init_params(TOY))
