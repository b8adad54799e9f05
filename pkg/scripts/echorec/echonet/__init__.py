"""Small numpy CNN for echo classification: layers, model, training and checkpoints."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .layers import LayerSpec, MfbParams, concat_fuse, mfb_fuse, softmax
from .model import EchoModel, ModelConfig, classify_frames, default_config, predict
from .train import TrainConfig, TrainingSet, activation_maximization, cross_entropy, train

__all__ = [
    "Checkpoint",
    "EchoModel",
    "LayerSpec",
    "MfbParams",
    "ModelConfig",
    "TrainConfig",
    "TrainingSet",
    "activation_maximization",
    "classify_frames",
    "concat_fuse",
    "cross_entropy",
    "default_config",
    "load_checkpoint",
    "mfb_fuse",
    "predict",
    "save_checkpoint",
    "softmax",
    "train",
]
