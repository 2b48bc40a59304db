import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gazegnn import tensor as T
from gazegnn.data import (
    AugmentConfig, Transform, add_noise, augment, make_sample, make_synthetic,
    random_transform, read_dataset, split_indices, write_dataset,
)
from gazegnn.gaze import FixationSet, PatchGrid
from gazegnn.metrics import DROP_COLUMNS, binary_auc, evaluate_predictions, format_table
from gazegnn.model import PRESETS, init_params
from gazegnn.tensor import Tensor
from gazegnn.train import AdamW, TrainConfig, adamw_update, cross_entropy, robustness_eval, train

DESK = PRESETS["desk"]


def auc_oracle(scores, positive):
    """Fraction of (positive, negative) pairs ordered correctly, ties worth one half."""
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


# -- loss and optimiser ---------------------------------------------------------
def test_cross_entropy_uniform():
    loss = cross_entropy(Tensor(np.zeros((1, 3))), [2])
    assert abs(loss.item() - math.log(3)) < 1e-15


def test_cross_entropy_confident_limit():
    assert cross_entropy(Tensor([[50.0, 0.0, 0.0]]), [0]).item() < 1e-20


def test_cross_entropy_rejects_bad_label():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((1, 3))), [3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3), st.integers(0, 2))
def test_cross_entropy_gradient_identity(z, label):
    logits = Tensor(np.array([z]), requires_grad=True)
    T.backward(cross_entropy(logits, [label]))
    p = np.exp(np.array(z) - max(z))
    p /= p.sum()
    onehot = np.eye(3)[label]
    assert np.abs(logits.grad[0] - (p - onehot)).max() < 1e-10


def test_adamw_examples():
    w, _, _ = adamw_update(np.array(1.0), np.array(1.0), 0.0, 0.0, 1, lr=0.1)
    assert abs(w - 0.9) < 1e-6
    w, _, _ = adamw_update(np.array(1.0), np.array(1.0), 0.0, 0.0, 1, lr=0.1, weight_decay=0.01)
    assert abs(w - 0.899) < 1e-6
    w, _, _ = adamw_update(np.array(1.0), np.array(0.0), 0.0, 0.0, 1, lr=0.1)
    assert w == 1.0


def test_adamw_matches_hand_rolled_two_steps():
    p = {"w": Tensor(np.array([0.5, -1.0]), requires_grad=True)}
    opt = AdamW(lr=0.01, weight_decay=0.1)
    w, m, v = p["w"].data.copy(), 0.0, 0.0
    for step, g in enumerate([np.array([0.2, -0.4]), np.array([1.0, 0.5])], start=1):
        p["w"].grad = g
        opt.step(p)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9 ** step)) / (np.sqrt(v / (1 - 0.999 ** step)) + 1e-8) - 0.01 * 0.1 * w
        np.testing.assert_allclose(p["w"].data, w, rtol=1e-14)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)


# -- metrics --------------------------------------------------------------------
def test_auc_example():
    assert binary_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


@pytest.mark.parametrize("trial", range(100))
def test_auc_matches_all_pairs_oracle(trial):
    rng = np.random.default_rng([13, trial])
    n = int(rng.integers(2, 201))
    # coarse scores produce many ties
    scores = rng.integers(0, 12, n) / 11.0 if trial % 2 else rng.uniform(size=n)
    positive = rng.random(n) < rng.uniform(0.1, 0.9)
    if positive.all() or not positive.any():
        positive[0] = not positive[0]
    assert binary_auc(scores, positive) == pytest.approx(auc_oracle(scores.tolist(), positive.tolist()), abs=1e-12)


def test_perfect_predictions():
    r = evaluate_predictions(np.eye(3)[[0, 1, 2, 1]], [0, 1, 2, 1])
    assert (r.accuracy, r.auc_average, r.f1, r.precision, r.recall) == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_accuracy_count_and_confusion():
    r = evaluate_predictions(np.eye(3)[[0, 1, 2]], [0, 1, 1])
    assert r.accuracy == pytest.approx(2 / 3)
    assert r.accuracy == np.trace(r.confusion) / np.sum(r.confusion)


def test_absent_class_excluded_from_auc(caplog):
    probs = np.array([[0.8, 0.1, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1]])
    r = evaluate_predictions(probs, [0, 1, 0])
    assert r.auc_per_class[2] is None
    assert r.auc_average == pytest.approx(np.mean([a for a in r.auc_per_class if a is not None]))
    assert "class 2" in caplog.text


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_metrics_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    probs = rng.dirichlet(np.ones(3), size=n)
    r = evaluate_predictions(probs, rng.integers(0, 3, n), 3)
    for v in (r.accuracy, r.precision, r.recall, r.f1):
        assert 0.0 <= v <= 1.0
    assert math.isnan(r.auc_average) or 0.0 <= r.auc_average <= 1.0


def test_format_table_aligns():
    out = format_table(["model", "acc"], [["a", 0.5], ["bbbb", 0.25]]).splitlines()
    assert len({len(line) for line in out}) == 1 and out[1].startswith("-----")


# -- synthetic data ----------------------------------------------------------------
def test_sample_is_pure_function_of_seed_and_index():
    a, b = make_sample(3, 17), make_sample(3, 17)
    assert a.image.tobytes() == b.image.tobytes() and a.fixations.points.tobytes() == b.fixations.points.tobytes()
    assert a.label == b.label
    assert make_sample(3, 18).image.tobytes() != a.image.tobytes()


def test_label_histogram_near_uniform():
    counts = np.bincount([s.label for s in make_synthetic(0, 300)], minlength=3)
    assert np.all(np.abs(counts - 100) <= 20), counts


def test_fixation_mass_inside_target_box():
    for s in make_synthetic(1, 60):
        r0, c0, r1, c1 = s.target_box
        f = s.fixations
        inside = (f.rows >= r0) & (f.rows < r1) & (f.cols >= c0) & (f.cols < c1)
        assert f.durations[inside].sum() >= 0.6 * f.total_duration()


def test_images_in_unit_range_and_split_disjoint():
    ds = make_synthetic(2, 12)
    assert all(0.0 <= s.image.min() and s.image.max() <= 1.0 for s in ds)
    tr, va, te = split_indices(300, 0)
    assert len(set(tr) | set(va) | set(te)) == 300 and len(te) == 60 and len(va) == 30
    with pytest.raises(ValueError):
        make_synthetic(0, 5)


def test_manifest_roundtrip(tmp_path):
    ds = make_synthetic(4, 6, 32)
    manifest = write_dataset(ds, tmp_path)
    back = read_dataset(manifest)
    for a, b in zip(ds, back):
        assert a.image.tobytes() == b.image.tobytes() and a.label == b.label
        np.testing.assert_allclose(a.fixations.points, b.fixations.points, rtol=1e-12)


def test_manifest_missing_file(tmp_path):
    manifest = write_dataset(make_synthetic(4, 6, 32), tmp_path)
    (tmp_path / "images" / "00002.npy").unlink()
    with pytest.raises(FileNotFoundError, match="00002.npy"):
        read_dataset(manifest)


# -- augmentation -------------------------------------------------------------------
def test_identity_transform():
    s = make_sample(0, 0)
    out = augment(s, np.random.default_rng(0), 64, AugmentConfig(crop=False, flip=False, rotate=False))
    np.testing.assert_allclose(out.image, s.image, atol=1e-12)
    np.testing.assert_allclose(out.fixations.points, s.fixations.points, atol=1e-12)


def test_flip_mirrors_columns():
    tf = Transform(0.0, 0.0, 10.0, 10.0, 10, flip=True)
    np.testing.assert_allclose(tf.apply_points([3.0], [2.0]), [[3.0, 7.0]])
    img = np.arange(100.0).reshape(10, 10)
    np.testing.assert_allclose(tf.apply_image(img), img[:, ::-1], atol=1e-12)


def _bump(size, r, c, sigma=1.5):
    y, x = np.mgrid[:size, :size]
    return np.exp(-((y - r) ** 2 + (x - c) ** 2) / (2 * sigma ** 2))


@pytest.mark.parametrize("trial", range(100))
def test_augment_moves_pixels_and_fixations_together(trial):
    rng = np.random.default_rng([17, trial])
    src, out = 64, 32
    r, c = rng.uniform(8, 56, size=2)
    tf = random_transform(rng, src, src, out)
    (pr, pc), = tf.apply_points([r], [c])
    kept = tf.apply_fixations(FixationSet.from_points([(r, c, 1.0)], src, src))
    inside = 0 <= pr < out and 0 <= pc < out
    assert len(kept) == int(inside)
    if not inside:
        return
    img = tf.apply_image(_bump(src, r, c))
    ar, ac = np.unravel_index(img.argmax(), img.shape)
    assert abs(ar - pr) <= 1.0 and abs(ac - pc) <= 1.0
    grid = PatchGrid(out, out, 4)
    near_edge = min(pr % 4, 4 - pr % 4, pc % 4, 4 - pc % 4) < 1.0
    if not near_edge:
        assert grid.patch_index(ar, ac) == grid.patch_index(pr, pc)


def test_augment_keeps_label():
    rng = np.random.default_rng(0)
    for i in range(20):
        s = make_sample(0, i)
        a = augment(s, rng, 32)
        assert a.label == s.label and a.image.shape == (32, 32)


def test_noise_zero_is_identity_and_noise_clips():
    img = np.random.default_rng(0).uniform(size=(8, 8))
    np.testing.assert_array_equal(add_noise(img, 0.0, np.random.default_rng(1)), img)
    noisy = add_noise(img, 0.5, np.random.default_rng(1))
    assert noisy.min() >= 0 and noisy.max() <= 1 and not np.array_equal(noisy, img)


# -- training ----------------------------------------------------------------------
def _small_sets(n=30, seed=0):
    ds = make_synthetic(seed, n, 32)
    tr, _, te = split_indices(n, seed)
    return [ds[i] for i in tr], [ds[i] for i in te]


def test_memorises_one_sample():
    s = make_synthetic(0, 6, 32)[:1]
    r = train(s, s, DESK, TrainConfig(lr=3e-3, epochs=50, batch_size=1, augment=False))
    assert r.history[-1]["train_loss"] < 0.05


def test_lr_zero_leaves_params_and_history_flat():
    tr, te = _small_sets()
    before = init_params(DESK, seed=0).state()
    r = train(tr, te, DESK, TrainConfig(lr=0.0, epochs=3, augment=True))
    for k, v in r.model.state().items():
        assert v.tobytes() == before[k].tobytes()
    assert len({h["train_loss"] for h in r.history}) == 1


def test_training_is_deterministic(tmp_path):
    tr, te = _small_sets()
    cfg = TrainConfig(lr=3e-3, epochs=2, batch_size=8)
    a = train(tr, te, DESK, cfg)
    b = train(tr, te, DESK, cfg)
    assert a.history == b.history
    a.model.save(tmp_path / "a.json", {"seed": 0})
    b.model.save(tmp_path / "b.json", {"seed": 0})
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_best_checkpoint_and_val_variant():
    tr, te = _small_sets(40)
    ds = make_synthetic(9, 10, 32)
    r = train(tr, te, DESK, TrainConfig(lr=3e-3, epochs=3, batch_size=8), val_set=ds)
    best = max(h["test_acc"] for h in r.history)
    assert r.history[r.best_epoch]["test_acc"] == best
    assert r.best_val_state is not None and 0 <= r.best_val_epoch < 3


def test_divergence_is_reported():
    tr, te = _small_sets()
    model = init_params(DESK, seed=0)
    model.params["head.weight"].data[:] = np.nan
    with pytest.raises(Exception, match="non-finite"):
        train(tr, te, DESK, TrainConfig(epochs=1), model=model)


def test_robustness_zero_noise_and_columns():
    tr, te = _small_sets()
    model = init_params(DESK, seed=0)
    clean, noisy, drops = robustness_eval(model, te, 0.0)
    assert tuple(drops) == DROP_COLUMNS
    assert all(v == 0.0 for v in drops.values())
    with pytest.raises(ValueError):
        robustness_eval(model, te, -0.1)


def test_robustness_leaves_fixations_alone():
    _, te = _small_sets()
    before = [s.fixations.points.copy() for s in te]
    robustness_eval(init_params(DESK, seed=0), te, 0.3)
    for s, b in zip(te, before):
        assert s.fixations.points.tobytes() == b.tobytes()
