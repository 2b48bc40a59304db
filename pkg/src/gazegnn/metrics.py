"""Classification metrics: accuracy, one-vs-rest AUC, macro precision/recall/F1."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)

CLASS_NAMES = ("class0", "class1", "class2")
DROP_COLUMNS = ("accuracy", "precision", "recall", "f1", "auc_average")
ABLATION_COLUMNS = ("accuracy", "auc_average", "precision", "recall", "f1")


def binary_auc(scores, positive) -> float | None:
    """Mann-Whitney AUC from mid-ranks; None when one side is empty."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion_matrix(labels, preds, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
    return cm


@dataclass
class MetricsReport:
    accuracy: float
    auc_per_class: list  # float or None for classes absent from the labels
    auc_average: float
    precision: float
    recall: float
    f1: float
    confusion: list
    n: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def row(self, columns=ABLATION_COLUMNS) -> list[float]:
        return [getattr(self, c) for c in columns]


def evaluate_predictions(probs, labels, n_classes: int | None = None) -> MetricsReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    C = probs.shape[1] if n_classes is None else n_classes
    preds = probs.argmax(axis=1)
    cm = confusion_matrix(labels, preds, C)
    acc = float(np.trace(cm) / cm.sum()) if cm.sum() else 0.0

    aucs = []
    for c in range(C):
        a = binary_auc(probs[:, c], labels == c)
        if a is None:
            log.warning("class %d has no positive or no negative samples; AUC excluded from average", c)
        aucs.append(a)
    present = [a for a in aucs if a is not None]
    auc_avg = float(np.mean(present)) if present else float("nan")

    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(axis=0).astype(np.float64)
    true_tot = cm.sum(axis=1).astype(np.float64)
    # zero denominators count as 0 (sklearn's zero_division=0 convention)
    prec = np.divide(tp, pred_tot, out=np.zeros(C), where=pred_tot > 0)
    rec = np.divide(tp, true_tot, out=np.zeros(C), where=true_tot > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros(C), where=denom > 0)
    return MetricsReport(
        accuracy=acc,
        auc_per_class=aucs,
        auc_average=auc_avg,
        precision=float(prec.mean()),
        recall=float(rec.mean()),
        f1=float(f1.mean()),
        confusion=cm.tolist(),
        n=int(len(labels)),
    )


def metric_drops(clean: MetricsReport, noisy: MetricsReport) -> dict[str, float]:
    return {c: getattr(clean, c) - getattr(noisy, c) for c in DROP_COLUMNS}


def format_table(header: list[str], rows: list[list]) -> str:
    """Aligned plain-text table."""
    cells = [[str(h) for h in header]]
    for r in rows:
        cells.append([f"{v:.4f}" if isinstance(v, float) else str(v) for v in r])
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(row, widths))) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
