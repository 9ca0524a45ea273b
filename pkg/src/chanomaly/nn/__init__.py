from .layers import BatchNorm2d, Conv3x3, Dense, Flatten, LeakyReLU, MaxPool2x2
from .model import (
    DESK_WIDTHS,
    FULL_WIDTHS,
    Classifier,
    ClassifierConfig,
    build_classifier,
    make_config,
)
from .optim import Adam, TrainingError
from .checkpoint import (
    CheckpointError,
    ModelCheckpoint,
    load_checkpoint,
    load_model,
    save_checkpoint,
)

__all__ = [
    "BatchNorm2d",
    "Conv3x3",
    "Dense",
    "Flatten",
    "LeakyReLU",
    "MaxPool2x2",
    "Classifier",
    "ClassifierConfig",
    "build_classifier",
    "make_config",
    "FULL_WIDTHS",
    "DESK_WIDTHS",
    "Adam",
    "TrainingError",
    "ModelCheckpoint",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "load_model",
]
