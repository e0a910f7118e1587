"""Test-set evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data.tiles import CLASSES
from ..tensor import no_grad


def format_accuracy(value: float) -> str:
    return f"{value:.5f}"


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    precision: list
    recall: list
    fingerprint: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "accuracy_str": format_accuracy(self.accuracy),
            "confusion": self.confusion.tolist(),
            "precision": self.precision,
            "recall": self.recall,
            "classes": list(CLASSES[: self.confusion.shape[0]]),
            "fingerprint": self.fingerprint,
        }


def report_from_predictions(y_true, y_pred, num_classes: int = 3, fingerprint: dict | None = None) -> EvalReport:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.size == 0:
        raise ValueError("cannot evaluate on an empty split")
    confusion = np.zeros((num_classes, num_classes), dtype=int)
    np.add.at(confusion, (y_true, y_pred), 1)
    diag = np.diag(confusion).astype(float)
    col, row = confusion.sum(axis=0), confusion.sum(axis=1)
    precision = [float(d / c) if c else 0.0 for d, c in zip(diag, col)]
    recall = [float(d / r) if r else 0.0 for d, r in zip(diag, row)]
    accuracy = float(diag.sum() / confusion.sum())
    return EvalReport(accuracy, confusion, precision, recall, dict(fingerprint or {}))


def predict_scores(model, x: np.ndarray, batch: int = 64) -> np.ndarray:
    with no_grad():
        return np.concatenate([model.scores(x[i:i + batch]) for i in range(0, len(x), batch)])


def evaluate(model, x: np.ndarray, y, fingerprint: dict | None = None, batch: int = 64) -> EvalReport:
    """Accuracy, confusion matrix and per-class precision/recall; no parameter mutation."""
    if len(x) == 0:
        raise ValueError("cannot evaluate on an empty split")
    if x.shape[1] != model.input_size:
        raise ValueError(f"model expects {model.input_size}px tiles, got {x.shape[1]}px")
    pred = predict_scores(model, x, batch).argmax(axis=1)
    return report_from_predictions(y, pred, model.config.num_classes, fingerprint)
