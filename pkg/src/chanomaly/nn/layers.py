"""Layers with explicit forward/backward passes on numpy arrays.

Data layout is NCHW. Each layer caches what its backward pass needs during
forward; parameters and gradients live in per-layer dicts keyed by short
names so the model can expose them under qualified names.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Layer",
    "Conv3x3",
    "BatchNorm2d",
    "LeakyReLU",
    "MaxPool2x2",
    "Flatten",
    "Dense",
]


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _windows3x3(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> strided view (N, C, H, W, 3, 3) over the padded input."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    n, c, h, w = x.shape
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, h, w, 3, 3), strides=(sn, sc, sh, sw, sh, sw)
    )


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1, He-initialised."""

    def __init__(self, in_channels, out_channels, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        fan_in = in_channels * 9
        scale = np.sqrt(2.0 / fan_in)
        self.params["w"] = (rng.standard_normal((out_channels, in_channels, 3, 3)) * scale).astype(dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)
        self._cache = None

    def forward(self, x, train):
        win = _windows3x3(x)
        out = np.einsum("nchwij,ocij->nohw", win, self.params["w"], optimize=True)
        out += self.params["b"][None, :, None, None]
        self._cache = win if train else None
        return out

    def backward(self, dout):
        win = self._cache
        self.grads["w"] = np.einsum("nchwij,nohw->ocij", win, dout, optimize=True)
        self.grads["b"] = dout.sum(axis=(0, 2, 3))
        w_flip = self.params["w"][:, :, ::-1, ::-1]
        dwin = _windows3x3(dout)
        return np.einsum("nohwij,ocij->nchw", dwin, w_flip, optimize=True)


class BatchNorm2d(Layer):
    """Per-channel batch normalisation with running statistics.

    Train mode normalises by batch statistics (biased variance) and updates
    the running estimates with momentum; eval mode uses the running ones.
    """

    def __init__(self, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def forward(self, x, train):
        g = self.params["gamma"][None, :, None, None]
        b = self.params["beta"][None, :, None, None]
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
            self.running_mean = ((1 - self.momentum) * self.running_mean + self.momentum * mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - self.momentum) * self.running_var + self.momentum * var).astype(self.running_var.dtype)
            self._cache = (xhat, inv_std)
            return g * xhat + b
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        xhat = (x - self.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        return g * xhat + b

    def backward(self, dout):
        xhat, inv_std = self._cache
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        self.grads["gamma"] = (dout * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = dout.sum(axis=(0, 2, 3))
        g = self.params["gamma"][None, :, None, None]
        sum_d = dout.sum(axis=(0, 2, 3), keepdims=True)
        sum_dx = (dout * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (g * inv_std[None, :, None, None] / m) * (m * dout - sum_d - xhat * sum_dx)


class LeakyReLU(Layer):
    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope
        self._mask = None

    def forward(self, x, train):
        mask = x >= 0
        if train:
            self._mask = mask
        return np.where(mask, x, self.slope * x)

    def backward(self, dout):
        return np.where(self._mask, dout, self.slope * dout)


class MaxPool2x2(Layer):
    """2x2 max pooling; backward routes to the first (row-major) maximum."""

    def __init__(self):
        super().__init__()
        self._cache = None

    @staticmethod
    def _tiles(x):
        n, c, h, w = x.shape
        return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h // 2, w // 2, 4
        )

    def forward(self, x, train):
        tiles = self._tiles(x)
        arg = tiles.argmax(axis=-1)  # argmax returns the first maximum
        if train:
            self._cache = (x.shape, arg)
        return np.take_along_axis(tiles, arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        shape, arg = self._cache
        n, c, h, w = shape
        dtiles = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
        np.put_along_axis(dtiles, arg[..., None], dout[..., None], axis=-1)
        return dtiles.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    def __init__(self, in_features, out_features, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        scale = np.sqrt(2.0 / in_features)
        self.params["w"] = (rng.standard_normal((in_features, out_features)) * scale).astype(dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)
        self._cache = None

    def forward(self, x, train):
        if train:
            self._cache = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        x = self._cache
        self.grads["w"] = x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["w"].T
