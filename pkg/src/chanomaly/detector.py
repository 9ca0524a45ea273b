"""Embedding extraction, reference sets and k-nearest-neighbour anomaly
scoring, plus the joint colour-histogram baseline features.

The anomaly score of a query is the mean Euclidean distance to its k
nearest reference embeddings; higher means more anomalous.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import Image, ValueRange, normalise, resize

__all__ = [
    "EmbeddingSet",
    "ScoreResult",
    "embed",
    "hist_embed",
    "knn_score",
    "knn_score_batch",
    "hist_features",
]


@dataclass(frozen=True)
class EmbeddingSet:
    """Immutable N x D matrix of embeddings with per-row identifiers."""

    vectors: np.ndarray
    ids: tuple[str, ...]
    source: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vectors, dtype=np.float64))
        if v.ndim != 2:
            raise ValueError(f"expected N x D matrix, got shape {v.shape}")
        if len(self.ids) != v.shape[0]:
            raise ValueError("one id per embedding row is required")
        if not np.isfinite(v).all():
            raise ValueError("embeddings contain non-finite values")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "ids", tuple(self.ids))

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class ScoreResult:
    image_id: str
    score: float
    neighbour_ids: tuple[str, ...]


def preprocess_for_inference(img: Image, side: int) -> Image:
    """Resize + normalise only; no flips, jitter or randomisation at test time."""
    return normalise(resize(img, side))


def embed(model, images, layer: str = "fc6", ids=None) -> EmbeddingSet:
    """Eval-mode forward of preprocessed images, flattening the requested
    intermediate activations row-major."""
    if layer not in ("conv5", "fc6"):
        raise ValueError(f"unknown feature layer {layer!r}")
    side = model.config.input_side
    if ids is None:
        ids = [str(i) for i in range(len(images))]
    rows = []
    for img in images:
        if img.range is ValueRange.BYTE255 or img.width != side:
            img = preprocess_for_inference(img, side)
        batch = img.data.transpose(2, 0, 1)[None].astype(model.dtype)
        _, features = model.forward(batch, train=False)
        rows.append(features[layer].reshape(-1).astype(np.float64))
    return EmbeddingSet(np.stack(rows), tuple(ids), source=f"model:{layer}")


def hist_embed(images, ids=None) -> EmbeddingSet:
    """Colour-histogram features for the same kNN detector."""
    if ids is None:
        ids = [str(i) for i in range(len(images))]
    rows = [hist_features(img).astype(np.float64) for img in images]
    return EmbeddingSet(np.stack(rows), tuple(ids), source="hist")


def knn_score(
    reference: EmbeddingSet,
    query: np.ndarray,
    k: int,
    query_id: str = "",
    exclude: str | None = None,
) -> ScoreResult:
    """Mean Euclidean distance to the k nearest reference vectors.

    Distance ties are broken by reference index order. ``exclude`` drops one
    reference id, for self-match-free diagnostics on training images.
    """
    ids = reference.ids
    vecs = reference.vectors
    if exclude is not None:
        keep = [i for i, rid in enumerate(ids) if rid != exclude]
        vecs = vecs[keep]
        ids = tuple(ids[i] for i in keep)
    if not 1 <= k <= len(ids):
        raise ValueError(f"k={k} out of range for {len(ids)} references")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    dists = np.sqrt(((vecs - q) ** 2).sum(axis=1))
    order = np.argsort(dists, kind="stable")[:k]
    return ScoreResult(
        image_id=query_id,
        score=float(dists[order].mean()),
        neighbour_ids=tuple(ids[i] for i in order),
    )


def knn_score_batch(reference: EmbeddingSet, queries: EmbeddingSet, k: int) -> list[ScoreResult]:
    return [
        knn_score(reference, queries.vectors[i], k, query_id=queries.ids[i])
        for i in range(len(queries))
    ]


def hist_features(img: Image) -> np.ndarray:
    """6 x 6 x 6 joint RGB histogram, flattened to 216 counts.

    Bin edges at multiples of 43; the last bin absorbs 215-255 so each
    channel has exactly six ranges.
    """
    if img.range is not ValueRange.BYTE255:
        raise ValueError("histogram features are defined on byte-range images")
    bins = np.minimum(img.data.astype(np.int64) // 43, 5)
    flat = (bins[..., 0] * 36 + bins[..., 1] * 6 + bins[..., 2]).ravel()
    return np.bincount(flat, minlength=216).astype(np.int64)
