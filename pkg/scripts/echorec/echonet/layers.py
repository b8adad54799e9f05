"""Layers with explicit forward and backward passes.

Activations are channels-last: images are ``(batch, height, width, channels)``, feature
vectors ``(batch, features)``. Every layer caches what its backward pass needs during
``forward`` and fills ``grads`` (same keys as ``params``) during ``backward``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatchError

Shape = tuple[int, ...]


@dataclass(frozen=True)
class LayerSpec:
    """Declarative layer description.

    Tokens: ``conv2d:<filters>:<kernel>[:<stride>]``, ``maxpool:<window>``,
    ``dense:<units>``, ``featurenorm``, ``relu``, ``softmax``.
    """

    kind: str
    filters: int = 0
    kernel: int = 3
    stride: int = 1
    window: int = 2
    units: int = 0

    def __post_init__(self) -> None:
        """Validate dimensions for the layer kind."""
        if self.kind not in ("conv2d", "maxpool", "dense", "featurenorm", "relu", "softmax"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d" and min(self.filters, self.kernel, self.stride) < 1:
            raise ValueError("conv2d needs positive filters, kernel and stride")
        if self.kind == "maxpool" and self.window < 1:
            raise ValueError("maxpool needs a positive window")
        if self.kind == "dense" and self.units < 1:
            raise ValueError("dense needs positive units")

    @classmethod
    def parse(cls, token: str) -> LayerSpec:
        """Parse a layer token."""
        kind, *args = token.strip().lower().split(":")
        values = [int(a) for a in args]
        if kind == "conv2d":
            stride = values[2] if len(values) > 2 else 1
            return cls(kind, filters=values[0], kernel=values[1], stride=stride)
        if kind == "maxpool":
            return cls(kind, window=values[0])
        if kind == "dense":
            return cls(kind, units=values[0])
        return cls(kind)

    def token(self) -> str:
        """Inverse of :meth:`parse`."""
        if self.kind == "conv2d":
            return f"conv2d:{self.filters}:{self.kernel}:{self.stride}"
        if self.kind == "maxpool":
            return f"maxpool:{self.window}"
        if self.kind == "dense":
            return f"dense:{self.units}"
        return self.kind


class Layer:
    """Base layer: no parameters, identity shape."""

    def __init__(self) -> None:
        """Start with empty parameter and gradient tables."""
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def build(self, input_shape: Shape, rng: np.random.Generator, dtype: np.dtype) -> Shape:
        """Allocate parameters for ``input_shape`` (no batch axis); return output shape."""
        return input_shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Compute the output and cache intermediates."""
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        """Fill ``grads`` and return the gradient with respect to the input."""
        raise NotImplementedError


class Conv2D(Layer):
    """Valid 2D convolution (cross-correlation) with bias."""

    def __init__(self, filters: int, kernel: int, stride: int = 1):
        """Create an unbuilt layer."""
        super().__init__()
        self.filters, self.kernel, self.stride = filters, kernel, stride

    def build(self, input_shape: Shape, rng: np.random.Generator, dtype: np.dtype) -> Shape:
        """Fan-in scaled uniform weights, zero bias."""
        height, width, channels = input_shape
        k, s = self.kernel, self.stride
        if height < k or width < k:
            raise ShapeMismatchError(f"kernel {k} larger than input {input_shape}")
        limit = np.sqrt(6.0 / (k * k * channels))
        self.params["W"] = rng.uniform(-limit, limit, (k, k, channels, self.filters)).astype(dtype)
        self.params["b"] = np.zeros(self.filters, dtype=dtype)
        return ((height - k) // s + 1, (width - k) // s + 1, self.filters)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Convolve every window."""
        s = self.stride
        windows = sliding_window_view(x, (self.kernel, self.kernel), axis=(1, 2))[:, ::s, ::s]
        self._x_shape = x.shape
        self._windows = windows
        return np.einsum("bhwcij,ijcf->bhwf", windows, self.params["W"]) + self.params["b"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        """Weight, bias and input gradients."""
        W, k, s = self.params["W"], self.kernel, self.stride
        self.grads["W"] = np.einsum("bhwcij,bhwf->ijcf", self._windows, dy)
        self.grads["b"] = dy.sum(axis=(0, 1, 2))
        dx = np.zeros(self._x_shape, dtype=dy.dtype)
        out_h, out_w = dy.shape[1], dy.shape[2]
        for i in range(k):
            for j in range(k):
                dx[:, i : i + s * out_h : s, j : j + s * out_w : s, :] += np.einsum(
                    "bhwf,cf->bhwc", dy, W[i, j]
                )
        return dx


class MaxPool2D(Layer):
    """Non-overlapping max pooling; trailing rows/columns are dropped."""

    def __init__(self, window: int):
        """Create the layer."""
        super().__init__()
        self.window = window

    def build(self, input_shape: Shape, rng: np.random.Generator, dtype: np.dtype) -> Shape:
        """Output shape after pooling."""
        height, width, channels = input_shape
        if height < self.window or width < self.window:
            raise ShapeMismatchError(f"pool window {self.window} larger than input {input_shape}")
        return (height // self.window, width // self.window, channels)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Maximum over each window."""
        p = self.window
        batch, height, width, channels = x.shape
        out_h, out_w = height // p, width // p
        blocks = x[:, : out_h * p, : out_w * p, :].reshape(batch, out_h, p, out_w, p, channels)
        blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(batch, out_h, out_w, channels, p * p)
        self._x_shape = x.shape
        self._argmax = blocks.argmax(axis=-1)
        return blocks.max(axis=-1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        """Route each gradient to the window's maximum."""
        p = self.window
        batch, out_h, out_w, channels = dy.shape
        routed = np.zeros((batch, out_h, out_w, channels, p * p), dtype=dy.dtype)
        np.put_along_axis(routed, self._argmax[..., None], dy[..., None], axis=-1)
        routed = routed.reshape(batch, out_h, out_w, channels, p, p).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros(self._x_shape, dtype=dy.dtype)
        dx[:, : out_h * p, : out_w * p, :] = routed.reshape(batch, out_h * p, out_w * p, channels)
        return dx


class Dense(Layer):
    """Fully connected layer; flattens its input."""

    def __init__(self, units: int):
        """Create an unbuilt layer."""
        super().__init__()
        self.units = units

    def build(self, input_shape: Shape, rng: np.random.Generator, dtype: np.dtype) -> Shape:
        """Fan-in scaled uniform weights, zero bias."""
        fan_in = int(np.prod(input_shape))
        limit = np.sqrt(6.0 / fan_in)
        self.params["W"] = rng.uniform(-limit, limit, (fan_in, self.units)).astype(dtype)
        self.params["b"] = np.zeros(self.units, dtype=dtype)
        return (self.units,)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Affine map of the flattened input."""
        self._x_shape = x.shape
        self._x = x.reshape(x.shape[0], -1)
        return self._x @ self.params["W"] + self.params["b"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        """Weight, bias and input gradients."""
        self.grads["W"] = self._x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return (dy @ self.params["W"].T).reshape(self._x_shape)


class FeatureNorm(Layer):
    """Standardize each example's features, then scale and shift per feature."""

    eps = 1e-5

    def build(self, input_shape: Shape, rng: np.random.Generator, dtype: np.dtype) -> Shape:
        """Unit scale, zero shift."""
        if len(input_shape) != 1:
            raise ShapeMismatchError(
                "featurenorm expects a feature vector; add a dense layer first"
            )
        self.params["gamma"] = np.ones(input_shape, dtype=dtype)
        self.params["beta"] = np.zeros(input_shape, dtype=dtype)
        return input_shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Normalize along the feature axis."""
        mean = x.mean(axis=1, keepdims=True)
        self._inv_std = 1.0 / np.sqrt(x.var(axis=1, keepdims=True) + self.eps)
        self._xhat = (x - mean) * self._inv_std
        return self.params["gamma"] * self._xhat + self.params["beta"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        """Standard normalization backward pass."""
        xhat = self._xhat
        self.grads["gamma"] = (dy * xhat).sum(axis=0)
        self.grads["beta"] = dy.sum(axis=0)
        dxhat = dy * self.params["gamma"]
        n = xhat.shape[1]
        return (
            self._inv_std
            / n
            * (
                n * dxhat
                - dxhat.sum(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
            )
        )


class ReLU(Layer):
    """Rectified linear unit."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        """``max(x, 0)``."""
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        """Pass gradient where the input was positive."""
        return np.where(self._mask, dy, 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted for stability."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


class Softmax(Layer):
    """Softmax over the last axis."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Probabilities."""
        self._p = softmax(x)
        return self._p

    def backward(self, dy: np.ndarray) -> np.ndarray:
        """Jacobian-vector product of softmax."""
        p = self._p
        return p * (dy - (dy * p).sum(axis=-1, keepdims=True))


def build_layer(spec: LayerSpec) -> Layer:
    """Instantiate a layer from its spec."""
    if spec.kind == "conv2d":
        return Conv2D(spec.filters, spec.kernel, spec.stride)
    if spec.kind == "maxpool":
        return MaxPool2D(spec.window)
    if spec.kind == "dense":
        return Dense(spec.units)
    if spec.kind == "featurenorm":
        return FeatureNorm()
    if spec.kind == "relu":
        return ReLU()
    return Softmax()


# =============================================================================
# Merge layers
# =============================================================================


class MfbParams(NamedTuple):
    """Stacked low-rank factors: ``U`` is ``(o, n, k)``, ``V`` is ``(o, n', k)``."""

    U: np.ndarray
    V: np.ndarray


def mfb_fuse(x: np.ndarray, y: np.ndarray, params: MfbParams) -> np.ndarray:
    """Factorized bilinear pooling ``z_i = 1ᵀ(U_iᵀx ∘ V_iᵀy)``.

    Accepts single vectors or ``(batch, n)`` / ``(batch, n')`` rows.
    """
    U, V = params
    if x.shape[-1] != U.shape[1] or y.shape[-1] != V.shape[1] or U.shape[2] != V.shape[2]:
        raise ShapeMismatchError(
            f"MFB factors {U.shape}/{V.shape} do not fit inputs {x.shape}/{y.shape}"
        )
    a = np.einsum("onk,...n->...ok", U, x)
    b = np.einsum("omk,...m->...ok", V, y)
    return (a * b).sum(axis=-1)


def concat_fuse(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Concatenate along the feature axis, ``x`` first."""
    return np.concatenate([x, y], axis=-1)


class MfbFusion:
    """Trainable MFB merge of an audio and a visual feature vector."""

    def __init__(self, out_dim: int, factor: int):
        """Create an unbuilt merge layer."""
        if factor < 1 or out_dim < 1:
            raise ValueError("MFB needs positive output size and factor")
        self.out_dim, self.factor = out_dim, factor
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def build(self, n: int, m: int, rng: np.random.Generator, dtype: np.dtype) -> int:
        """Uniform factors scaled by input sizes."""
        u = rng.uniform(-1, 1, (self.out_dim, n, self.factor)) / np.sqrt(n)
        v = rng.uniform(-1, 1, (self.out_dim, m, self.factor)) / np.sqrt(m)
        self.params["U"] = u.astype(dtype)
        self.params["V"] = v.astype(dtype)
        return self.out_dim

    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Fuse batched feature rows."""
        self._x, self._y = x, y
        self._a = np.einsum("onk,bn->bok", self.params["U"], x)
        self._b = np.einsum("omk,bm->bok", self.params["V"], y)
        return (self._a * self._b).sum(axis=-1)

    def backward(self, dz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradients for both factors and both inputs."""
        da = dz[:, :, None] * self._b
        db = dz[:, :, None] * self._a
        self.grads["U"] = np.einsum("bn,bok->onk", self._x, da)
        self.grads["V"] = np.einsum("bm,bok->omk", self._y, db)
        dx = np.einsum("onk,bok->bn", self.params["U"], da)
        dy = np.einsum("omk,bok->bm", self.params["V"], db)
        return dx, dy
