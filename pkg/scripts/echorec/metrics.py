"""Accuracy, per-class accuracy and confusion matrices, plus their reports."""

from __future__ import annotations

import csv
import math
from collections.abc import Callable
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from .echonet.train import TrainingSet
from .errors import EmptyTestSetError

Predictor = Callable[[TrainingSet], np.ndarray]


class Metrics(NamedTuple):
    """Classification results for one task.

    ``confusion[i, j]`` counts examples of true class ``i`` predicted as ``j``.
    ``per_class`` is NaN for classes absent from the test set.
    """

    task: str
    class_names: list[str]
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray
    predictions: np.ndarray

    @property
    def total(self) -> int:
        """Number of evaluated examples."""
        return int(self.confusion.sum())


def confusion_matrix(truth: np.ndarray, predicted: np.ndarray, n_classes: int) -> np.ndarray:
    """Count matrix with true classes as rows."""
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (np.asarray(truth, dtype=np.int64), np.asarray(predicted, dtype=np.int64)), 1)
    return matrix


def metrics_from_predictions(
    truth: np.ndarray, predicted: np.ndarray, task: str, class_names: list[str]
) -> Metrics:
    """Build :class:`Metrics` from label vectors.

    Args:
        truth: True class indices.
        predicted: Predicted class indices, same length.
        task: Task name recorded in the result.
        class_names: Names in index order.

    Returns:
        Metrics whose accuracy equals trace / total.

    Raises:
        EmptyTestSetError: No examples to score.
    """
    if len(truth) == 0:
        raise EmptyTestSetError(f"no test examples for task {task}")
    if len(truth) != len(predicted):
        raise ValueError("truth and predictions differ in length")
    matrix = confusion_matrix(truth, predicted, len(class_names))
    counts = matrix.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(counts > 0, np.diag(matrix) / counts, np.nan)
    accuracy = float(np.trace(matrix) / matrix.sum())
    return Metrics(
        task, list(class_names), accuracy, per_class, matrix, np.asarray(predicted, dtype=np.int64)
    )


def evaluate(
    predictor: Predictor, test_set: TrainingSet, task: str, class_names: list[str]
) -> Metrics:
    """Score a predictor on a labeled set."""
    if len(test_set.labels) == 0:
        raise EmptyTestSetError(f"no test examples for task {task}")
    return metrics_from_predictions(test_set.labels, predictor(test_set), task, class_names)


def format_report(metrics: Metrics, title: str = "") -> str:
    """Aligned text table: per-class accuracy and confusion rows, then the total."""
    names = metrics.class_names
    width = max(8, *(len(n) for n in names))
    lines = [title or f"Task: {metrics.task}", "=" * 70]
    columns = " ".join(f"{n:>{width}}" for n in names)
    header = f"  {'class':<{width}} {'n':>6} {'acc':>7}  {columns}"
    lines.append(header)
    for i, name in enumerate(names):
        row = metrics.confusion[i]
        acc = metrics.per_class[i]
        acc_text = "   -  " if math.isnan(acc) else f"{acc:>7.3f}"
        cells = " ".join(f"{int(c):>{width}}" for c in row)
        lines.append(f"  {name:<{width}} {int(row.sum()):>6} {acc_text}  {cells}")
    lines.append("=" * 70)
    lines.append(f"Total: {metrics.accuracy:.3f} accuracy across {metrics.total} examples")
    return "\n".join(lines)


def metrics_record(metrics: Metrics, **extra: Any) -> dict[str, Any]:
    """JSON-ready record of a result (NaN per-class entries become null)."""
    record: dict[str, Any] = {
        "task": metrics.task,
        "accuracy": metrics.accuracy,
        "total": metrics.total,
        "class_names": metrics.class_names,
        "per_class": [None if math.isnan(a) else float(a) for a in metrics.per_class],
        "confusion": metrics.confusion.tolist(),
    }
    record.update(extra)
    return record


def write_confusion_csv(metrics: Metrics, path: Path) -> None:
    """Confusion matrix with a header row and a label column."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["true\\predicted", *metrics.class_names])
        for name, row in zip(metrics.class_names, metrics.confusion):
            writer.writerow([name, *(int(c) for c in row)])
