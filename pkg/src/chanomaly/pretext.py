"""Self-supervised pretext training.

Binary tasks (channel randomisation variants and cut-and-paste) feed each
batch half augmented (label 1) and half untouched (label 0); the rotation
task labels each image with its quarter-turn index. Validation accuracy is
measured once per epoch with a frozen per-epoch seed, and training stops
when the mean of the last five measurements exceeds the target, else at the
epoch cap deploying the best-validation checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import PixelSelection, randomise_channels
from .imagecore import (
    Image,
    ImageError,
    JitterSpec,
    ValueRange,
    colour_jitter,
    flip,
    normalise,
    resize,
    rotate90,
)
from .nn import Adam, Classifier, ClassifierConfig, ModelCheckpoint, TrainingError, make_config
from .datasets import SeedPlan

__all__ = [
    "PretextSpec",
    "TrainRun",
    "make_batch",
    "pretext_loss",
    "cutpaste_augment",
    "validation_accuracy",
    "train",
    "should_stop",
    "best_epoch",
]

BINARY_TASKS = ("ch_rand", "ch_perm", "ch_split", "cutpaste")
CHANNEL_TASKS = ("ch_rand", "ch_perm", "ch_split")


@dataclass(frozen=True)
class PretextSpec:
    task: str = "ch_rand"
    selection: PixelSelection | None = None
    feature_layer: str = "fc6"
    input_side: int = 64
    widths: str = "full"
    epochs_max: int = 1500
    val_acc_target: float = 0.95
    val_window: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-4
    jitter: JitterSpec = field(default_factory=JitterSpec)

    def __post_init__(self):
        if self.task not in BINARY_TASKS + ("rot",):
            raise ValueError(f"unknown pretext task {self.task!r}")
        if self.task in CHANNEL_TASKS:
            if self.selection is None:
                object.__setattr__(self, "selection", PixelSelection("all"))
        elif self.selection is not None:
            raise ValueError(f"task {self.task!r} takes no pixel selection")
        if self.task in BINARY_TASKS and self.batch_size % 2:
            raise ValueError("binary tasks need an even batch size")
        if self.feature_layer not in ("conv5", "fc6"):
            raise ValueError(f"unknown feature layer {self.feature_layer!r}")

    @property
    def channel_mode(self) -> str:
        return {"ch_rand": "rand", "ch_perm": "perm", "ch_split": "split"}[self.task]

    def classifier_config(self) -> ClassifierConfig:
        head = "softmax4" if self.task == "rot" else "sigmoid1"
        return make_config(self.input_side, self.widths, head)


@dataclass
class TrainRun:
    seed: int
    losses: list[float]
    val_accuracies: list[float]
    stop_reason: str  # "target_reached" or "max_epochs"
    deployed_epoch: int
    checkpoint: ModelCheckpoint
    # Optional mid-training snapshots (epoch, checkpoint) for relevance
    # analysis between validation accuracy and final detection quality.
    snapshots: list[tuple[int, ModelCheckpoint]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Augmentation pipeline
# ---------------------------------------------------------------------------


def cutpaste_augment(img: Image, rng: np.random.Generator) -> Image:
    """Copy a random rectangle and paste it at a different location."""
    h, w = img.height, img.width
    if h < 8 or w < 8:
        raise ImageError("cut-and-paste needs at least an 8x8 image")
    area = rng.uniform(0.02, 0.15) * h * w
    aspect = rng.uniform(0.3, 3.3)
    ph = min(h - 1, max(1, int(round(math.sqrt(area * aspect)))))
    pw = min(w - 1, max(1, int(round(math.sqrt(area / aspect)))))
    sy = int(rng.integers(0, h - ph + 1))
    sx = int(rng.integers(0, w - pw + 1))
    while True:
        dy = int(rng.integers(0, h - ph + 1))
        dx = int(rng.integers(0, w - pw + 1))
        if (dy, dx) != (sy, sx):
            break
    out = img.data.copy()
    out[dy : dy + ph, dx : dx + pw] = img.data[sy : sy + ph, sx : sx + pw]
    return Image(out, img.range)


def _standard_pipeline(img: Image, spec: PretextSpec, rng: np.random.Generator) -> Image:
    img = resize(img, spec.input_side)
    if rng.random() < 0.5:
        img = flip(img, "horizontal")
    if rng.random() < 0.5:
        img = flip(img, "vertical")
    return colour_jitter(img, spec.jitter, rng)


def _task_augment(img: Image, spec: PretextSpec, rng: np.random.Generator) -> Image:
    if spec.task in CHANNEL_TASKS:
        return randomise_channels(img, spec.selection, spec.channel_mode, rng)[0]
    return cutpaste_augment(img, rng)


def make_batch(
    images: list[Image], spec: PretextSpec, rng: np.random.Generator, indices=None
) -> tuple[np.ndarray, np.ndarray]:
    """Assemble one (inputs, labels) batch.

    ``indices`` selects the images to use (defaults to sampling with
    replacement). Binary tasks augment exactly the second half; rotation
    labels each row with its quarter-turn count.
    """
    if not images:
        raise RuntimeError("empty training set")
    if indices is None:
        indices = rng.integers(0, len(images), size=spec.batch_size)
    rows, labels = [], []
    n = len(indices)
    for pos, idx in enumerate(indices):
        img = _standard_pipeline(images[idx], spec, rng)
        if spec.task == "rot":
            k = int(rng.integers(0, 4))
            img = rotate90(img, k)
            labels.append(k)
        else:
            augmented = pos >= n - n // 2
            if augmented:
                img = _task_augment(img, spec, rng)
            labels.append(int(augmented))
        rows.append(normalise(img).data.transpose(2, 0, 1))
    return np.stack(rows), np.array(labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

_EPS = 1e-7


def pretext_loss(probs: np.ndarray, labels: np.ndarray, task: str) -> float:
    """Mean cross entropy over the batch; logs are clamped away from 0."""
    if task == "rot":
        p = np.clip(probs[np.arange(len(labels)), labels], _EPS, 1.0)
        return float(-np.log(p).mean())
    p = np.clip(probs[:, 0], _EPS, 1.0 - _EPS)
    y = labels.astype(np.float64)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


def loss_gradient(probs: np.ndarray, labels: np.ndarray, task: str) -> np.ndarray:
    """Gradient of the mean loss w.r.t. the pre-head logits (composite with
    the sigmoid/softmax head for numerical stability)."""
    n = len(labels)
    if task == "rot":
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return d / n
    return (probs - labels.astype(probs.dtype)[:, None]) / n


# ---------------------------------------------------------------------------
# Validation and early stopping
# ---------------------------------------------------------------------------


def validation_accuracy(
    model: Classifier, val_images: list[Image], spec: PretextSpec, rng: np.random.Generator
) -> float:
    """Fraction of correct pretext predictions over the validation split.

    The caller passes an epoch-seeded rng so the measurement is frozen per
    epoch and comparable across runs.
    """
    if not val_images:
        raise RuntimeError("empty validation set")
    correct = 0
    total = 0
    bs = spec.batch_size
    order = np.arange(len(val_images))
    for start in range(0, len(order), bs):
        chunk = order[start : start + bs]
        if spec.task != "rot" and len(chunk) % 2:
            chunk = chunk[:-1]
        if len(chunk) == 0:
            continue
        inputs, labels = make_batch(val_images, spec, rng, indices=chunk)
        probs, _ = model.forward(inputs, train=False)
        if spec.task == "rot":
            pred = probs.argmax(axis=1)
        else:
            pred = (probs[:, 0] > 0.5).astype(np.int64)
        correct += int((pred == labels).sum())
        total += len(labels)
    return correct / total


def should_stop(history: list[float], target: float = 0.95, window: int = 5) -> bool:
    """True once the mean of the last ``window`` accuracies exceeds target.

    A history shorter than the window never triggers a stop."""
    if len(history) < window:
        return False
    return float(np.mean(history[-window:])) > target


def best_epoch(history: list[float]) -> int:
    """1-based epoch of the maximum validation accuracy; ties -> earliest."""
    return int(np.argmax(history)) + 1


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def train(
    spec: PretextSpec,
    train_images: list[Image],
    val_images: list[Image],
    seed: int = 0,
    progress=None,
    snapshot_every: int = 0,
) -> TrainRun:
    """Full training run with per-epoch validation and early stopping.

    ``snapshot_every`` > 0 additionally records a checkpoint every that many
    epochs for downstream correlation analysis."""
    if not train_images or not val_images:
        raise RuntimeError("train and validation splits must be non-empty")
    plan = SeedPlan(seed)
    model = Classifier(spec.classifier_config(), plan.rng("init"))
    optimiser = Adam(lr=spec.learning_rate)
    losses: list[float] = []
    history: list[float] = []
    snapshots: list[tuple[int, ModelCheckpoint]] = []
    best_acc = -1.0
    best_params = None
    best_at = 0

    n = len(train_images)
    bs = min(spec.batch_size, n if spec.task == "rot" else n - (n % 2))
    if bs < 2:
        raise RuntimeError("training set too small for a batch")

    for epoch in range(1, spec.epochs_max + 1):
        epoch_rng = plan.rng("epoch", epoch)
        order = epoch_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n - bs + 1, bs):
            chunk = order[start : start + bs]
            inputs, labels = make_batch(train_images, spec, epoch_rng, indices=chunk)
            probs, _ = model.forward(inputs, train=True)
            loss = pretext_loss(probs, labels, spec.task)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            model.backward(loss_gradient(probs, labels, spec.task))
            optimiser.step(model.trainable(), model.gradients())
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
        acc = validation_accuracy(model, val_images, spec, plan.rng("val", epoch))
        history.append(acc)
        if acc > best_acc:
            best_acc = acc
            best_params = model.clone_parameters()
            best_at = epoch
        if snapshot_every and epoch % snapshot_every == 0:
            snapshots.append((epoch, ModelCheckpoint.from_model(model, {"epoch": str(epoch), "val_acc": f"{acc:.6f}"})))
        if progress is not None:
            progress(epoch, losses[-1], acc)
        if should_stop(history, spec.val_acc_target, spec.val_window):
            return _finish(spec, model, seed, losses, history, "target_reached", epoch, snapshots)

    # Epoch cap reached: deploy the checkpoint with maximum validation
    # accuracy (earliest epoch on ties).
    model.load_parameter_dict(best_params)
    assert best_at == best_epoch(history)
    return _finish(spec, model, seed, losses, history, "max_epochs", best_at, snapshots)


def _finish(spec, model, seed, losses, history, reason, deployed_epoch, snapshots=None) -> TrainRun:
    meta = {
        "seed": str(seed),
        "task": spec.task,
        "selection": str(spec.selection) if spec.selection else "",
        "feature_layer": spec.feature_layer,
        "stop_reason": reason,
        "epoch": str(deployed_epoch),
        "val_acc_history": ",".join(f"{a:.6f}" for a in history),
    }
    return TrainRun(
        seed=seed,
        losses=losses,
        val_accuracies=history,
        stop_reason=reason,
        deployed_epoch=deployed_epoch,
        checkpoint=ModelCheckpoint.from_model(model, meta),
        snapshots=snapshots or [],
    )
