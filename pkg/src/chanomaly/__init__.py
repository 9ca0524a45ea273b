"""chanomaly: one-class colour-anomaly detection.

A small convolutional classifier is trained to tell original images from
channel-randomised ones; unseen images are then scored by their mean
embedding-space distance to the normal training data.
"""

from . import augment, datasets, detector, imagecore, metrics, nn, pretext
from .augment import ChannelMap, PixelSelection, randomise_channels
from .datasets import (
    DatasetManifest,
    SeedPlan,
    SynthConfig,
    load_images,
    load_manifest,
    synth_generate,
)
from .detector import EmbeddingSet, embed, hist_embed, knn_score, knn_score_batch
from .imagecore import Image
from .metrics import LabelledScores, aggregate_runs, auc_pr, auc_roc, pearson
from .pretext import PretextSpec, TrainRun, train

__version__ = "0.1.0"

__all__ = [
    "augment",
    "datasets",
    "detector",
    "imagecore",
    "metrics",
    "nn",
    "pretext",
    "ChannelMap",
    "PixelSelection",
    "randomise_channels",
    "DatasetManifest",
    "SeedPlan",
    "SynthConfig",
    "load_images",
    "load_manifest",
    "synth_generate",
    "EmbeddingSet",
    "embed",
    "hist_embed",
    "knn_score",
    "knn_score_batch",
    "Image",
    "LabelledScores",
    "aggregate_runs",
    "auc_pr",
    "auc_roc",
    "pearson",
    "PretextSpec",
    "TrainRun",
    "train",
    "__version__",
]
