"""Non-neural baselines on flattened spectrograms: k-nearest neighbors and a linear SVM."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.exceptions import ConvergenceWarning as SklearnConvergenceWarning
from sklearn.linear_model import SGDClassifier

from .errors import ConvergenceWarning, EmptyTrainSetError

logger = logging.getLogger(__name__)


def _flatten(x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr.reshape(arr.shape[0], -1)


def knn_classify(
    train_x: np.ndarray, train_y: np.ndarray, query: np.ndarray, k: int = 5
) -> np.ndarray:
    """Majority vote of the ``k`` Euclidean nearest neighbors for each query row.

    A tied vote goes to the tied class whose member is nearest to the query.
    """
    if len(train_x) == 0:
        raise EmptyTrainSetError("kNN needs at least one training point")
    if k < 1:
        raise ValueError("k must be at least 1")
    train = _flatten(train_x)
    labels = np.asarray(train_y, dtype=np.int64)
    queries = _flatten(query)
    k = min(k, len(train))

    distances = cdist(queries, train)
    predictions = np.empty(len(queries), dtype=np.int64)
    for row, dist in enumerate(distances):
        nearest = np.argsort(dist, kind="stable")[:k]
        votes = np.bincount(labels[nearest])
        tied = np.flatnonzero(votes == votes.max())
        # nearest is distance-ordered, so the first tied label seen is the closest one
        predictions[row] = next(labels[i] for i in nearest if labels[i] in tied)
    return predictions


@dataclass
class KnnClassifier:
    """Stored training set plus ``k``."""

    k: int = 5

    def fit(self, x: np.ndarray, y: np.ndarray) -> KnnClassifier:
        """Remember the training points."""
        if len(x) == 0:
            raise EmptyTrainSetError("kNN needs at least one training point")
        self.train_x, self.train_y = _flatten(x), np.asarray(y, dtype=np.int64)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Class index per row."""
        return knn_classify(self.train_x, self.train_y, x, self.k)


class LinearSvmModel(NamedTuple):
    """One-vs-rest linear scores ``x @ weights.T + bias``, one row per class."""

    weights: np.ndarray
    bias: np.ndarray

    @property
    def n_classes(self) -> int:
        """Number of classes."""
        return len(self.bias)


@dataclass(frozen=True)
class SvmConfig:
    """Hinge-loss SGD settings."""

    alpha: float = 1e-4
    max_iter: int = 1000
    tol: float = 1e-3
    seed: int = 0


def svm_train(
    x: np.ndarray, y: np.ndarray, n_classes: int, cfg: SvmConfig | None = None
) -> LinearSvmModel:
    """Fit one-vs-rest linear SVMs by stochastic subgradient descent on hinge loss + L2.

    Hitting ``max_iter`` emits a :class:`ConvergenceWarning`; the model is still returned.
    """
    cfg = cfg or SvmConfig()
    if len(x) == 0:
        raise EmptyTrainSetError("SVM needs at least one training point")
    if n_classes < 2:
        raise ValueError("SVM needs at least two classes")
    features = _flatten(x)
    labels = np.asarray(y, dtype=np.int64)
    present = np.unique(labels)
    if present.size < 2:
        raise ValueError("SVM training set must contain at least two classes")

    clf = SGDClassifier(
        loss="hinge",
        penalty="l2",
        alpha=cfg.alpha,
        max_iter=cfg.max_iter,
        tol=cfg.tol,
        random_state=cfg.seed,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SklearnConvergenceWarning)
        clf.fit(features, labels)
    if any(issubclass(w.category, SklearnConvergenceWarning) for w in caught):
        logger.warning("linear SVM stopped after %d epochs without converging", cfg.max_iter)
        warnings.warn(
            f"linear SVM did not converge in {cfg.max_iter} epochs",
            ConvergenceWarning,
            stacklevel=2,
        )

    coef = np.asarray(clf.coef_, dtype=np.float64)
    intercept = np.asarray(clf.intercept_, dtype=np.float64)
    if coef.shape[0] == 1:
        # Binary fit has a single decision function for the second class.
        coef = np.vstack([-coef, coef])
        intercept = np.concatenate([-intercept, intercept])

    weights = np.zeros((n_classes, features.shape[1]))
    bias = np.full(n_classes, -np.inf)
    weights[present] = coef
    bias[present] = intercept
    return LinearSvmModel(weights, bias)


def svm_classify(model: LinearSvmModel, x: np.ndarray) -> np.ndarray:
    """Class with the largest margin; ties go to the lower class index."""
    scores = _flatten(x) @ model.weights.T + model.bias
    return np.argmax(scores, axis=1)
