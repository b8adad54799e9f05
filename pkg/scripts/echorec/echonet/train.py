"""Loss, ADAM training loop and activation maximization."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any, NamedTuple

import numpy as np

from ..errors import EmptyDatasetError, InvalidDistributionError, LabelOutOfRangeError
from .checkpoint import Checkpoint
from .model import EchoModel, ModelConfig

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """Categorical cross entropy of one distribution against a class index."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidDistributionError("probabilities must be a finite non-negative vector")
    if abs(p.sum() - 1.0) > 1e-6:
        raise InvalidDistributionError(f"probabilities sum to {p.sum():.8f}")
    if not 0 <= label < p.size:
        raise LabelOutOfRangeError(f"label {label} outside [0, {p.size})")
    return float(-np.log(max(p[label], PROB_FLOOR)))


def mean_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Batch mean of :func:`cross_entropy`."""
    picked = probs[np.arange(len(labels)), labels].astype(np.float64)
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def loss_and_gradients(
    model: EchoModel, audio: Any, image: Any, labels: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Mean cross entropy of a batch and its gradient for every parameter."""
    probs = np.atleast_2d(model.forward(audio, image))
    labels = np.asarray(labels, dtype=np.int64)
    loss = mean_cross_entropy(probs, labels)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    model.backward(dlogits / len(labels))
    return loss, model.gradients()


@dataclass(frozen=True)
class TrainConfig:
    """ADAM hyperparameters and batching."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    val_fraction: float = 0.0

    def __post_init__(self) -> None:
        """Validate batching and split."""
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.epochs < 0 or self.lr < 0:
            raise ValueError("epochs and lr must be non-negative")

    @classmethod
    def from_section(cls, values: dict[str, Any], seed: int = 0) -> TrainConfig:
        """Build from a ``[train]`` config-file section; the seed always comes from the caller."""
        known = {k: v for k, v in values.items() if k in cls.__dataclass_fields__}
        known["seed"] = seed
        return cls(**known)


class TrainingSet(NamedTuple):
    """Inputs and integer labels; either input may be absent."""

    audio: np.ndarray | None
    images: np.ndarray | None
    labels: np.ndarray

    def take(self, index: np.ndarray) -> TrainingSet:
        """Subset by row indices."""
        return TrainingSet(
            None if self.audio is None else self.audio[index],
            None if self.images is None else self.images[index],
            self.labels[index],
        )


class Adam:
    """ADAM optimizer over a fixed list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        """Zero moment estimates."""
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        """Apply one bias-corrected update in place."""
        cfg = self.cfg
        self.t += 1
        correction1 = 1.0 - cfg.beta1**self.t
        correction2 = 1.0 - cfg.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = cfg.lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
            p -= update.astype(p.dtype)


def _check_dataset(config: ModelConfig, data: TrainingSet) -> None:
    n = len(data.labels)
    if n == 0:
        raise EmptyDatasetError("training set is empty")
    if np.any(data.labels < 0) or np.any(data.labels >= config.n_classes):
        raise LabelOutOfRangeError(f"labels must lie in [0, {config.n_classes})")
    if config.uses_audio and (data.audio is None or len(data.audio) != n):
        raise EmptyDatasetError("spectrogram count does not match labels")
    if config.uses_image and (data.images is None or len(data.images) != n):
        raise EmptyDatasetError("image count does not match labels")


def train(
    config: ModelConfig,
    data: TrainingSet,
    cfg: TrainConfig,
    metadata: dict[str, Any] | None = None,
) -> Checkpoint:
    """Train a fresh model; every random draw comes from ``cfg.seed``."""
    labels = np.asarray(data.labels, dtype=np.int64)
    data = TrainingSet(data.audio, data.images, labels)
    _check_dataset(config, data)

    init_seq, split_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    model = EchoModel(config, seed=int(init_seq.generate_state(1)[0]))
    optimizer = Adam([p for _, p in model.parameters()], cfg)

    n = len(labels)
    order = np.random.default_rng(split_seq).permutation(n)
    n_val = min(int(round(n * cfg.val_fraction)), n - 1)
    val_set = data.take(np.sort(order[:n_val])) if n_val else None
    train_idx = np.sort(order[n_val:])
    shuffle_rng = np.random.default_rng(shuffle_seq)

    train_curve: list[float] = []
    val_curve: list[float] = []
    for epoch in range(cfg.epochs):
        permuted = train_idx[shuffle_rng.permutation(train_idx.size)]
        total = 0.0
        for start in range(0, permuted.size, cfg.batch_size):
            batch = data.take(permuted[start : start + cfg.batch_size])
            loss, grads = loss_and_gradients(model, batch.audio, batch.images, batch.labels)
            optimizer.step(grads)
            total += loss * len(batch.labels)
        train_curve.append(total / permuted.size)
        if val_set is not None:
            probs = np.atleast_2d(model.forward(val_set.audio, val_set.images))
            val_curve.append(mean_cross_entropy(probs, val_set.labels))
        logger.debug(
            "epoch %d: train %.5f%s",
            epoch + 1,
            train_curve[-1],
            f" val {val_curve[-1]:.5f}" if val_curve else "",
        )

    info = dict(metadata or {})
    info.update(
        {
            "seed": cfg.seed,
            "train_config": asdict(cfg),
            "train_loss": train_curve,
            "val_loss": val_curve,
            "n_train": int(train_idx.size),
            "n_val": int(n_val),
        }
    )
    return Checkpoint.from_model(model, info)


class ActivationTrace(NamedTuple):
    """Synthetic input and the class logit after each accepted step."""

    grid: np.ndarray
    trace: list[float]


def activation_maximization(
    model: EchoModel,
    class_index: int,
    iters: int = 200,
    step: float = 0.05,
    start: np.ndarray | None = None,
    fixed_input: np.ndarray | None = None,
    max_halvings: int = 10,
) -> ActivationTrace:
    """Gradient ascent on the primary input (audio, else image) toward one class logit.

    The input stays clamped to [0, 1]; a step that lowers the logit is halved until it
    does not, and the search stops when no halving helps.
    """
    config = model.config
    if not 0 <= class_index < config.n_classes:
        raise LabelOutOfRangeError(f"class {class_index} outside [0, {config.n_classes})")
    shape = config.audio_shape if config.uses_audio else config.image_shape
    other_shape = config.image_shape
    if start is None:
        x = np.zeros(shape, dtype=model.dtype)
    else:
        x = np.clip(start, 0, 1).astype(model.dtype)
    other = None
    if config.modality == "audiovisual":
        other = np.zeros(other_shape, dtype=model.dtype) if fixed_input is None else fixed_input

    def evaluate(candidate: np.ndarray) -> tuple[float, np.ndarray]:
        audio, image = (candidate, other) if config.uses_audio else (None, candidate)
        logit = float(model.logits(audio, image)[class_index])
        dlogits = np.zeros(config.n_classes, dtype=model.dtype)
        dlogits[class_index] = 1.0
        daudio, dimage = model.backward(dlogits)
        grad = daudio if config.uses_audio else dimage
        assert grad is not None
        return logit, grad[0]

    current, grad = evaluate(x)
    trace = [current]
    for _ in range(iters):
        scale = np.max(np.abs(grad))
        if scale == 0:
            break
        direction = grad / scale
        size = step
        for _ in range(max_halvings + 1):
            candidate = np.clip(x + size * direction, 0.0, 1.0)
            value, candidate_grad = evaluate(candidate)
            if value >= current:
                break
            size /= 2.0
        else:
            logger.debug("activation maximization stalled at logit %.6f", current)
            break
        x, current, grad = candidate, value, candidate_grad
        trace.append(current)
    return ActivationTrace(x, trace)
