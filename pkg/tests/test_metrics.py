"""Tests for accuracy, confusion matrices and evaluation reports."""

import csv
import math

import numpy as np
import pytest

NAMES = ["open", "closed", "ajar"]


def _metrics():
    from scripts.echorec.metrics import metrics_from_predictions

    return metrics_from_predictions(
        np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]), "open_closed", NAMES
    )


def test_confusion_matrix_rows_are_truth():
    """Rows count true classes and columns predictions."""
    from scripts.echorec.metrics import confusion_matrix

    matrix = confusion_matrix(np.array([0, 0, 1, 2]), np.array([0, 2, 1, 2]), 3)
    assert matrix.tolist() == [[1, 0, 1], [0, 1, 0], [0, 0, 1]]


def test_accuracy_and_per_class():
    """Accuracy is trace over total; absent classes have no per-class value."""
    metrics = _metrics()

    assert metrics.accuracy == pytest.approx(0.75)
    assert metrics.total == 4
    assert metrics.per_class[:2].tolist() == [0.5, 1.0]
    assert math.isnan(metrics.per_class[2])
    assert metrics.accuracy == pytest.approx(np.trace(metrics.confusion) / metrics.total)


def test_empty_and_mismatched_inputs():
    """No examples and differing lengths are rejected."""
    from scripts.echorec.echonet.train import TrainingSet
    from scripts.echorec.errors import EmptyTestSetError
    from scripts.echorec.metrics import evaluate, metrics_from_predictions

    with pytest.raises(EmptyTestSetError):
        metrics_from_predictions(np.array([]), np.array([]), "depth", NAMES)
    with pytest.raises(ValueError):
        metrics_from_predictions(np.array([0, 1]), np.array([0]), "depth", NAMES)
    empty = TrainingSet(np.zeros((0, 2)), None, np.zeros(0, dtype=np.int64))
    with pytest.raises(EmptyTestSetError):
        evaluate(lambda data: data.labels, empty, "depth", NAMES)


def test_evaluate_uses_predictor():
    """The predictor sees the whole test set."""
    from scripts.echorec.echonet.train import TrainingSet
    from scripts.echorec.metrics import evaluate

    data = TrainingSet(np.zeros((3, 2)), None, np.array([0, 1, 2]))
    metrics = evaluate(lambda d: np.zeros(len(d.labels), dtype=np.int64), data, "material", NAMES)

    assert metrics.confusion[:, 0].tolist() == [1, 1, 1]
    assert metrics.accuracy == pytest.approx(1 / 3)


def test_format_report():
    """The report lists each class then a total line."""
    from scripts.echorec.metrics import format_report

    report = format_report(_metrics(), title="Window state")
    lines = report.splitlines()

    assert lines[0] == "Window state"
    assert lines[1] == "=" * 70
    assert lines[-1] == "Total: 0.750 accuracy across 4 examples"
    assert "0.500" in lines[3]
    assert lines[5].split()[:3] == ["ajar", "0", "-"]


def test_metrics_record_is_json_ready():
    """NaN per-class entries become None and extra keys are merged."""
    import json

    from scripts.echorec.metrics import metrics_record

    record = metrics_record(_metrics(), baseline="knn")

    assert record["per_class"] == [0.5, 1.0, None]
    assert record["confusion"] == [[1, 1, 0], [0, 2, 0], [0, 0, 0]]
    assert record["baseline"] == "knn"
    json.dumps(record)


def test_confusion_csv(tmp_path):
    """The CSV has a header row and one labeled row per class."""
    from scripts.echorec.metrics import write_confusion_csv

    path = tmp_path / "confusion.csv"
    write_confusion_csv(_metrics(), path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))

    assert rows[0] == ["true\\predicted", "open", "closed", "ajar"]
    assert rows[1] == ["open", "1", "1", "0"]
    assert len(rows) == 4
