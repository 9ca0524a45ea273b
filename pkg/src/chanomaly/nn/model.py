"""The pretext classifier: five conv blocks (conv -> batchnorm -> LeakyReLU
-> 2x2 maxpool) followed by two dense layers, with a sigmoid head for the
binary tasks or a 4-way softmax head for rotation prediction.

Each pool halves the spatial side, so the input side must be divisible by
32; fc6 fan-in is (side/32)^2 * conv_widths[4]. The activations at conv5
(post-pool) and fc6 (post-activation) are exposed as feature layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .layers import BatchNorm2d, Conv3x3, Dense, Flatten, Layer, LeakyReLU, MaxPool2x2

__all__ = ["ClassifierConfig", "Classifier", "FULL_WIDTHS", "DESK_WIDTHS", "make_config"]

FULL_WIDTHS = ((64, 128, 256, 512, 512), 256)
DESK_WIDTHS = ((8, 16, 32, 64, 64), 64)


@dataclass(frozen=True)
class ClassifierConfig:
    input_side: int = 64
    conv_widths: tuple[int, ...] = FULL_WIDTHS[0]
    dense_width: int = FULL_WIDTHS[1]
    leaky_slope: float = 0.2
    head: str = "sigmoid1"  # or "softmax4"

    def __post_init__(self):
        if len(self.conv_widths) != 5:
            raise ValueError("exactly 5 conv widths are required")
        if self.input_side % 32 != 0 or self.input_side <= 0:
            raise ValueError("input side must be a positive multiple of 32")
        if self.head not in ("sigmoid1", "softmax4"):
            raise ValueError(f"unknown head {self.head!r}")
        object.__setattr__(self, "conv_widths", tuple(int(w) for w in self.conv_widths))

    @property
    def out_units(self) -> int:
        return 1 if self.head == "sigmoid1" else 4

    @property
    def fc6_fan_in(self) -> int:
        return (self.input_side // 32) ** 2 * self.conv_widths[4]


def make_config(input_side: int = 64, widths: str = "full", head: str = "sigmoid1") -> ClassifierConfig:
    """Config from a widths-profile name: 'full' or the reduced 'desk'."""
    conv, dense = {"full": FULL_WIDTHS, "desk": DESK_WIDTHS}[widths]
    return ClassifierConfig(input_side=input_side, conv_widths=conv, dense_width=dense, head=head)


class Classifier:
    """f: [-1,1] images -> head probabilities, with feature taps."""

    def __init__(self, config: ClassifierConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.layers: list[tuple[str, Layer]] = []
        in_c = 3
        for i, out_c in enumerate(config.conv_widths, start=1):
            self.layers.append((f"conv{i}", Conv3x3(in_c, out_c, rng, dtype)))
            self.layers.append((f"bn{i}", BatchNorm2d(out_c, dtype)))
            self.layers.append((f"act{i}", LeakyReLU(config.leaky_slope)))
            self.layers.append((f"pool{i}", MaxPool2x2()))
            in_c = out_c
        self.layers.append(("flatten", Flatten()))
        self.layers.append(("fc6", Dense(config.fc6_fan_in, config.dense_width, rng, dtype)))
        self.layers.append(("act6", LeakyReLU(config.leaky_slope)))
        self.layers.append(("fc7", Dense(config.dense_width, config.out_units, rng, dtype)))
        self._forward_was_train = False

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers:
            for pname, arr in layer.params.items():
                out[f"{name}.{pname}"] = arr
            if isinstance(layer, BatchNorm2d):
                out[f"{name}.running_mean"] = layer.running_mean
                out[f"{name}.running_var"] = layer.running_var
        return out

    def trainable(self) -> dict[str, np.ndarray]:
        return {
            f"{name}.{p}": arr
            for name, layer in self.layers
            for p, arr in layer.params.items()
        }

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            f"{name}.{p}": arr
            for name, layer in self.layers
            for p, arr in layer.grads.items()
        }

    def set_parameter(self, qualified: str, value: np.ndarray):
        name, pname = qualified.rsplit(".", 1)
        for lname, layer in self.layers:
            if lname != name:
                continue
            if pname in layer.params:
                if layer.params[pname].shape != value.shape:
                    raise ValueError(
                        f"shape mismatch for {qualified}: "
                        f"{layer.params[pname].shape} vs {value.shape}"
                    )
                layer.params[pname] = value.astype(layer.params[pname].dtype)
                return
            if isinstance(layer, BatchNorm2d) and pname in ("running_mean", "running_var"):
                current = getattr(layer, pname)
                if current.shape != value.shape:
                    raise ValueError(
                        f"shape mismatch for {qualified}: {current.shape} vs {value.shape}"
                    )
                setattr(layer, pname, value.astype(current.dtype))
                return
            raise KeyError(qualified)
        raise KeyError(qualified)

    # -- forward / backward -------------------------------------------------

    def forward(self, batch: np.ndarray, train: bool) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Run the network; returns head outputs and the feature taps.

        batch is (N, 3, side, side) in [-1, 1]. The sigmoid head returns
        (N, 1) probabilities; the softmax head (N, 4).
        """
        side = self.config.input_side
        if batch.ndim != 4 or batch.shape[1:] != (3, side, side):
            raise ValueError(f"expected (N, 3, {side}, {side}) batch, got {batch.shape}")
        x = batch.astype(self.dtype, copy=False)
        features = {}
        for name, layer in self.layers:
            x = layer.forward(x, train)
            if name == "pool5":
                features["conv5"] = x
            elif name == "act6":
                features["fc6"] = x
        z = x  # pre-head logits
        self._z = z
        if self.config.head == "sigmoid1":
            probs = 1.0 / (1.0 + np.exp(-z))
        else:
            shifted = z - z.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            probs = e / e.sum(axis=1, keepdims=True)
        self._forward_was_train = train
        return probs, features

    def backward(self, dlogits: np.ndarray):
        """Backpropagate a gradient w.r.t. the pre-head logits, filling
        parameter gradients layer by layer."""
        if not self._forward_was_train:
            raise RuntimeError("backward requires a preceding forward in train mode")
        d = dlogits.astype(self.dtype, copy=False)
        for _, layer in reversed(self.layers):
            d = layer.backward(d)
        self._forward_was_train = False

    # -- construction helpers ----------------------------------------------

    def clone_parameters(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_parameter_dict(self, params: dict[str, np.ndarray]):
        own = self.parameters()
        missing = set(own) - set(params)
        extra = set(params) - set(own)
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in params.items():
            self.set_parameter(name, arr)


def build_classifier(config: ClassifierConfig, rng: np.random.Generator, dtype=np.float32) -> Classifier:
    return Classifier(config, rng, dtype)
