"""Audio, visual and audio-visual echo classifiers built from :mod:`.layers`."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from ..errors import MissingModalityError, ShapeMismatchError
from .layers import Dense, Layer, LayerSpec, MfbFusion, build_layer, softmax

MERGE_MODES = ("none", "concat", "mfb")
MODALITIES = ("audio", "visual", "audiovisual")

AUDIO_SHAPE = (62, 25)
IMAGE_SHAPE = (64, 25)

DEFAULT_AUDIO_NET = (
    "conv2d:16:3, relu, maxpool:2, conv2d:32:3, relu, maxpool:2, dense:64, featurenorm"
)
DEFAULT_VISUAL_NET = DEFAULT_AUDIO_NET


def parse_layers(text: str | list[str] | tuple[str, ...]) -> tuple[LayerSpec, ...]:
    """Parse a comma separated layer list (or a list of tokens)."""
    tokens = text.split(",") if isinstance(text, str) else list(text)
    return tuple(LayerSpec.parse(token) for token in tokens if str(token).strip())


@dataclass(frozen=True)
class ModelConfig:
    """Subnets, merge mode and classification head of an echo model."""

    n_classes: int
    modality: str = "audio"
    audio_net: tuple[LayerSpec, ...] = field(
        default_factory=lambda: parse_layers(DEFAULT_AUDIO_NET)
    )
    visual_net: tuple[LayerSpec, ...] = ()
    merge: str = "none"
    mfb_factor: int = 5
    mfb_out: int = 64
    audio_shape: tuple[int, int] = AUDIO_SHAPE
    image_shape: tuple[int, int] = IMAGE_SHAPE
    precision: str = "float32"

    def __post_init__(self) -> None:
        """Check merge/modality consistency and head size."""
        if self.n_classes < 2:
            raise ValueError("a classifier needs at least two classes")
        if self.merge not in MERGE_MODES:
            raise ValueError(f"unknown merge mode {self.merge!r}")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if (self.merge == "none") != (self.modality != "audiovisual"):
            raise ValueError("merge 'none' is for single-modality models only")
        if self.modality == "audio" and self.visual_net:
            raise ValueError("an audio-only model has no visual subnet")
        if self.modality == "visual" and self.audio_net:
            raise ValueError("a visual-only model has no audio subnet")
        if any(spec.kind == "softmax" for spec in (*self.audio_net, *self.visual_net)):
            raise ValueError("softmax is only allowed as the terminal head layer")
        if self.merge == "mfb" and (self.mfb_factor < 1 or self.mfb_out < 1):
            raise ValueError("MFB needs a positive factor and output size")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    @property
    def uses_audio(self) -> bool:
        """Whether spectrograms are an input."""
        return self.modality in ("audio", "audiovisual")

    @property
    def uses_image(self) -> bool:
        """Whether proxy images are an input."""
        return self.modality in ("visual", "audiovisual")

    def to_dict(self) -> dict[str, Any]:
        """JSON-friendly representation."""
        return {
            "n_classes": self.n_classes,
            "modality": self.modality,
            "audio_net": [spec.token() for spec in self.audio_net],
            "visual_net": [spec.token() for spec in self.visual_net],
            "merge": self.merge,
            "mfb_factor": self.mfb_factor,
            "mfb_out": self.mfb_out,
            "audio_shape": list(self.audio_shape),
            "image_shape": list(self.image_shape),
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelConfig:
        """Inverse of :meth:`to_dict`."""
        return cls(
            n_classes=int(data["n_classes"]),
            modality=data.get("modality", "audio"),
            audio_net=parse_layers(data.get("audio_net", [])),
            visual_net=parse_layers(data.get("visual_net", [])),
            merge=data.get("merge", "none"),
            mfb_factor=int(data.get("mfb_factor", 5)),
            mfb_out=int(data.get("mfb_out", 64)),
            audio_shape=tuple(data.get("audio_shape", AUDIO_SHAPE)),  # type: ignore[arg-type]
            image_shape=tuple(data.get("image_shape", IMAGE_SHAPE)),  # type: ignore[arg-type]
            precision=data.get("precision", "float32"),
        )


def default_config(n_classes: int, merge: str = "none", modality: str | None = None) -> ModelConfig:
    """Default two-convolution network for the requested inputs."""
    modality = modality or ("audio" if merge == "none" else "audiovisual")
    audio = parse_layers(DEFAULT_AUDIO_NET) if modality != "visual" else ()
    visual = parse_layers(DEFAULT_VISUAL_NET) if modality != "audio" else ()
    return ModelConfig(n_classes, modality, audio, visual, merge)


def model_config_from_section(values: dict[str, Any], n_classes: int) -> ModelConfig:
    """Build a config from a ``[model]`` config-file section.

    Subnet lists for a modality the model does not use are ignored.
    """
    merge = str(values.get("merge", "none"))
    modality = values.get("modality")
    if merge != "none":
        modality = "audiovisual"
    base = default_config(n_classes, merge, modality)
    audio_net, visual_net = base.audio_net, base.visual_net
    if base.uses_audio and "audio_net" in values:
        audio_net = parse_layers(values["audio_net"])
    if base.uses_image and "visual_net" in values:
        visual_net = parse_layers(values["visual_net"])
    return ModelConfig(
        n_classes=n_classes,
        modality=base.modality,
        audio_net=audio_net,
        visual_net=visual_net,
        merge=merge,
        mfb_factor=int(values.get("mfb_factor", base.mfb_factor)),
        mfb_out=int(values.get("mfb_out", base.mfb_out)),
        precision=str(values.get("precision", base.precision)),
    )


def _as_batch(
    x: Any, shape: tuple[int, int], name: str, dtype: np.dtype
) -> tuple[np.ndarray, bool]:
    arr = np.asarray(getattr(x, "grid", x), dtype=dtype)
    if arr.shape == tuple(shape):
        return arr[None, :, :, None], True
    if arr.ndim == 3 and arr.shape[1:] == tuple(shape):
        return arr[..., None], False
    raise ShapeMismatchError(f"{name} input has shape {arr.shape}, expected {tuple(shape)}")


class EchoModel:
    """Parameter-owning network; forward caches activations for one backward pass."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        """Build every layer and draw initial weights from ``seed``."""
        self.config = config
        self.dtype = np.dtype(config.precision)
        rng = np.random.default_rng(seed)

        self.audio_layers: list[Layer] = []
        self.visual_layers: list[Layer] = []
        audio_dim = visual_dim = 0
        if config.uses_audio:
            self.audio_layers, audio_dim = self._build_branch(
                config.audio_net, config.audio_shape, rng
            )
        if config.uses_image:
            self.visual_layers, visual_dim = self._build_branch(
                config.visual_net, config.image_shape, rng
            )

        self.fusion: MfbFusion | None = None
        if config.merge == "mfb":
            self.fusion = MfbFusion(config.mfb_out, config.mfb_factor)
            feature_dim = self.fusion.build(audio_dim, visual_dim, rng, self.dtype)
        else:
            feature_dim = audio_dim + visual_dim
        self.audio_dim, self.visual_dim = audio_dim, visual_dim

        self.head = Dense(config.n_classes)
        self.head.build((feature_dim,), rng, self.dtype)

    def _build_branch(
        self, specs: tuple[LayerSpec, ...], shape: tuple[int, int], rng: np.random.Generator
    ) -> tuple[list[Layer], int]:
        layers = [build_layer(spec) for spec in specs]
        current: tuple[int, ...] = (*shape, 1)
        for layer in layers:
            current = layer.build(current, rng, self.dtype)
        return layers, int(np.prod(current))

    # -------------------------------------------------------------------------
    # Parameters
    # -------------------------------------------------------------------------

    def named_layers(self) -> list[tuple[str, Any]]:
        """Layers with their parameter prefixes, in declaration order."""
        named: list[tuple[str, Any]] = [
            (f"audio.{i}", layer) for i, layer in enumerate(self.audio_layers)
        ]
        named += [(f"visual.{i}", layer) for i, layer in enumerate(self.visual_layers)]
        if self.fusion is not None:
            named.append(("merge", self.fusion))
        named.append(("head", self.head))
        return named

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """All trainable arrays, in declaration order."""
        return [
            (f"{prefix}.{key}", value)
            for prefix, layer in self.named_layers()
            for key, value in layer.params.items()
        ]

    def gradients(self) -> list[np.ndarray]:
        """Gradients from the last backward pass, aligned with :meth:`parameters`."""
        return [layer.grads[key] for _, layer in self.named_layers() for key in layer.params]

    def load_parameters(self, arrays: list[np.ndarray]) -> None:
        """Overwrite parameters in place, in declaration order."""
        current = self.parameters()
        if len(arrays) != len(current):
            raise ShapeMismatchError(f"expected {len(current)} arrays, got {len(arrays)}")
        for (name, target), source in zip(current, arrays):
            if target.shape != np.shape(source):
                raise ShapeMismatchError(f"{name}: shape {np.shape(source)} != {target.shape}")
            target[...] = source

    @property
    def parameter_count(self) -> int:
        """Total number of scalar parameters."""
        return sum(value.size for _, value in self.parameters())

    # -------------------------------------------------------------------------
    # Passes
    # -------------------------------------------------------------------------

    def logits(self, audio: Any = None, image: Any = None) -> np.ndarray:
        """Pre-softmax scores; a single example yields a vector."""
        config = self.config
        features = []
        single = False
        if config.uses_audio:
            if audio is None:
                raise MissingModalityError("this model needs a spectrogram input")
            x, single = _as_batch(audio, config.audio_shape, "audio", self.dtype)
            features.append(self._branch_forward(self.audio_layers, x, "audio"))
        if config.uses_image:
            if image is None:
                raise MissingModalityError("this model needs an image input")
            v, single_image = _as_batch(image, config.image_shape, "image", self.dtype)
            single = single_image if not config.uses_audio else single
            features.append(self._branch_forward(self.visual_layers, v, "visual"))

        if len(features) == 2 and features[0].shape[0] != features[1].shape[0]:
            raise ShapeMismatchError("audio and image batches differ in size")
        if self.fusion is not None:
            merged = self.fusion.forward(features[0], features[1])
        else:
            merged = np.concatenate(features, axis=1)
        out = self.head.forward(merged)
        return out[0] if single else out

    def forward(self, audio: Any = None, image: Any = None) -> np.ndarray:
        """Class probabilities for one example or a batch."""
        return softmax(self.logits(audio, image))

    def _branch_forward(self, layers: list[Layer], x: np.ndarray, name: str) -> np.ndarray:
        for layer in layers:
            x = layer.forward(x)
        setattr(self, f"_{name}_shape", x.shape)
        return x.reshape(x.shape[0], -1)

    def backward(self, dlogits: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Backpropagate a logit gradient; returns input gradients ``(audio, image)``.

        Parameter gradients are left in each layer's ``grads``.
        """
        dlogits = np.atleast_2d(np.asarray(dlogits, dtype=self.dtype))
        dmerged = self.head.backward(dlogits)
        if self.fusion is not None:
            daudio_feat, dvisual_feat = self.fusion.backward(dmerged)
        else:
            daudio_feat = dmerged[:, : self.audio_dim]
            dvisual_feat = dmerged[:, self.audio_dim :]

        daudio = dimage = None
        if self.config.uses_audio:
            daudio = self._branch_backward(self.audio_layers, daudio_feat, "audio")
        if self.config.uses_image:
            dimage = self._branch_backward(self.visual_layers, dvisual_feat, "visual")
        return daudio, dimage

    def _branch_backward(self, layers: list[Layer], dy: np.ndarray, name: str) -> np.ndarray:
        dy = dy.reshape(getattr(self, f"_{name}_shape"))
        for layer in reversed(layers):
            dy = layer.backward(dy)
        return dy[..., 0]


class FramePrediction(NamedTuple):
    """Classifier output for one frame."""

    frame_id: str
    task: str
    label: str
    probability: float


def predict(
    model: EchoModel, audio: Any = None, image: Any = None, batch_size: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """Class indices and probability rows for a batch, evaluated in chunks."""
    count = len(audio) if audio is not None else len(image)
    probs = []
    for start in range(0, count, batch_size):
        stop = start + batch_size
        probs.append(
            np.atleast_2d(
                model.forward(
                    None if audio is None else audio[start:stop],
                    None if image is None else image[start:stop],
                )
            )
        )
    if not probs:
        return np.zeros(0, dtype=np.int64), np.zeros((0, model.config.n_classes))
    stacked = np.concatenate(probs, axis=0)
    return stacked.argmax(axis=1), stacked


def classify_frames(
    model: EchoModel,
    class_names: list[str],
    task: str,
    audio: Any = None,
    image: Any = None,
    frame_ids: list[str] | None = None,
) -> list[FramePrediction]:
    """Label every frame of a recording."""
    labels, probs = predict(model, audio, image)
    frame_ids = frame_ids or [f"frame{i}" for i in range(len(labels))]
    return [
        FramePrediction(frame_id, task, class_names[int(label)], float(row[int(label)]))
        for frame_id, label, row in zip(frame_ids, labels, probs)
    ]
