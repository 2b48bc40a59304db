"""Training loop, AdamW, evaluation, robustness and gaze-ablation drivers."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import AugmentConfig, SyntheticSample, add_noise, augment, resize
from .graph import build_batch
from .metrics import ABLATION_COLUMNS, DROP_COLUMNS, MetricsReport, evaluate_predictions, metric_drops
from .model import GazeGnnModel, ModelConfig, init_params, model_logits
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    epochs: int = 30
    seed: int = 0
    augment: bool = True
    aug_crop: bool = True
    aug_flip: bool = True
    aug_rotate: bool = True
    noise_sigma: float = 0.1

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.betas = tuple(self.betas)

    @property
    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(crop=self.aug_crop, flip=self.aug_flip, rotate=self.aug_rotate)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_hash(*dicts: dict) -> str:
    blob = json.dumps(list(dicts), sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- loss / optimiser -------------------------------------------------------------
def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of logsumexp(z) - z[label] over the batch."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    B, C = logits.shape
    if len(labels) != B:
        raise ValueError(f"{len(labels)} labels for {B} rows of logits")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"label out of range [0, {C})")
    onehot = np.zeros((B, C))
    onehot[np.arange(B), labels] = 1.0
    picked = T.sum(T.mul(logits, Tensor(onehot)), axis=1)
    return T.mean(T.sub(T.logsumexp(logits, axis=1), picked))


def adamw_update(w, g, m, v, step: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
    """One AdamW step on arrays; returns (w, m, v). ``step`` counts from 1."""
    b1, b2 = betas
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** step)
    v_hat = v / (1 - b2 ** step)
    w = w - lr * (m_hat / (np.sqrt(v_hat) + eps)) - lr * weight_decay * w
    return w, m, v


@dataclass
class AdamW:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, Tensor]) -> None:
        self.step_count += 1
        for name, p in sorted(params.items()):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m.get(name, np.zeros_like(p.data))
            v = self.v.get(name, np.zeros_like(p.data))
            p.data, self.m[name], self.v[name] = adamw_update(
                p.data, g, m, v, self.step_count, self.lr, self.betas, self.eps, self.weight_decay
            )


# -- batching -------------------------------------------------------------------
def _at_input(samples, size: int) -> list[SyntheticSample]:
    return [resize(s, size) for s in samples]


def predict_proba(model: GazeGnnModel, samples: list[SyntheticSample], batch_size: int = 64) -> np.ndarray:
    """Class probabilities for samples already at the model input size."""
    out = []
    with T.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            g = build_batch([s.image for s in chunk], [s.fixations for s in chunk], model)
            out.append(T.softmax(model_logits(model, g), axis=-1).data)
    return np.concatenate(out) if out else np.zeros((0, model.config.n_classes))


def _loss_and_acc(model, samples) -> tuple[float, float, np.ndarray]:
    probs = predict_proba(model, samples)
    labels = np.array([s.label for s in samples])
    nll = -np.log(np.clip(probs[np.arange(len(labels)), labels], 1e-300, None))
    return float(nll.mean()), float((probs.argmax(1) == labels).mean()), probs


def evaluate(model: GazeGnnModel, samples: list[SyntheticSample]) -> MetricsReport:
    ready = _at_input(samples, model.config.input_size)
    probs = predict_proba(model, ready)
    return evaluate_predictions(probs, [s.label for s in ready], model.config.n_classes)


@dataclass
class TrainResult:
    model: GazeGnnModel  # parameters at the best test accuracy
    history: list[dict]
    best_epoch: int
    best_val_state: dict | None = None  # selection on the validation split instead
    best_val_epoch: int | None = None


def train(
    train_set: list[SyntheticSample],
    test_set: list[SyntheticSample],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    val_set: list[SyntheticSample] | None = None,
    model: GazeGnnModel | None = None,
) -> TrainResult:
    """Mini-batch AdamW on cross-entropy, keeping the best-test-accuracy parameters."""
    if not train_set:
        raise ValueError("empty training set")
    model = model or init_params(model_cfg, cfg.seed)
    size = model.config.input_size
    opt = AdamW(cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    aug_cfg = cfg.augment_config

    train_eval = _at_input(train_set, size)
    test_eval = _at_input(test_set, size)
    val_eval = _at_input(val_set, size) if val_set else None

    history: list[dict] = []
    best_acc, best_epoch, best_state = -1.0, -1, None
    best_val, best_val_epoch, best_val_state = -1.0, None, None
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_set))
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            if cfg.augment:
                batch = [augment(train_set[j], rng, size, aug_cfg) for j in idx]
            else:
                batch = [train_eval[j] for j in idx]
            model.zero_grad()
            g = build_batch([s.image for s in batch], [s.fixations for s in batch], model)
            loss = cross_entropy(model_logits(model, g), [s.label for s in batch])
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss {loss.item()} at epoch {epoch}, batch {i // cfg.batch_size}")
            T.backward(loss)
            opt.step(model.params)

        tr_loss, tr_acc, _ = _loss_and_acc(model, train_eval)
        te_loss, te_acc, _ = _loss_and_acc(model, test_eval)
        rec = {"epoch": epoch, "train_loss": tr_loss, "train_acc": tr_acc, "test_loss": te_loss, "test_acc": te_acc}
        if val_eval:
            rec["val_loss"], rec["val_acc"], _ = _loss_and_acc(model, val_eval)
            if rec["val_acc"] > best_val:
                best_val, best_val_epoch, best_val_state = rec["val_acc"], epoch, model.state()
        history.append(rec)
        log.info("epoch %d  train_loss %.4f  train_acc %.3f  test_acc %.3f", epoch, tr_loss, tr_acc, te_acc)
        if te_acc > best_acc:
            best_acc, best_epoch, best_state = te_acc, epoch, model.state()

    if best_state is not None:
        model.load_state(best_state)
    return TrainResult(model, history, best_epoch, best_val_state, best_val_epoch)


def robustness_eval(model: GazeGnnModel, samples: list[SyntheticSample], noise_sigma: float, seed: int = 0):
    """Clean vs noisy-image metrics. Fixations are left untouched."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    ready = _at_input(samples, model.config.input_size)
    rng = np.random.default_rng([seed, 3])
    noisy = [SyntheticSample(add_noise(s.image, noise_sigma, rng), s.fixations, s.label) for s in ready]
    labels = [s.label for s in ready]
    C = model.config.n_classes
    clean_r = evaluate_predictions(predict_proba(model, ready), labels, C)
    noisy_r = evaluate_predictions(predict_proba(model, noisy), labels, C)
    return clean_r, noisy_r, metric_drops(clean_r, noisy_r)


def run_ablation(train_set, test_set, model_cfg: ModelConfig, cfg: TrainConfig) -> dict[str, TrainResult]:
    """Train with and without the gaze term on identical seeds and data."""
    out = {}
    for name, enabled in (("gaze=on", True), ("gaze=off", False)):
        mc = dataclasses.replace(model_cfg, gaze_enabled=enabled)
        out[name] = train(train_set, test_set, mc, cfg)
    return out


__all__ = [
    "ABLATION_COLUMNS", "DROP_COLUMNS", "AdamW", "TrainConfig", "TrainResult", "TrainingDiverged",
    "adamw_update", "config_hash", "cross_entropy", "evaluate", "predict_proba", "robustness_eval",
    "run_ablation", "train",
]
