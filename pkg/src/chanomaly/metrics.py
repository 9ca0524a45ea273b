"""Threshold-free evaluation: AUC-ROC, AUC-PR (average precision), Pearson
correlation and across-run aggregation.

Scores follow the convention higher = more anomalous; anomalous examples
carry label 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LabelledScores",
    "EvalReport",
    "MetricError",
    "auc_roc",
    "auc_pr",
    "pearson",
    "aggregate_runs",
]


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class LabelledScores:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if s.shape != y.shape or s.ndim != 1:
            raise MetricError("scores and labels must be 1-D of equal length")
        if not np.isin(y, (0, 1)).all():
            raise MetricError("labels must be 0 (normal) or 1 (anomalous)")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    def _require_both_classes(self):
        if self.labels.sum() == 0 or self.labels.sum() == len(self.labels):
            raise MetricError("AUC needs at least one example of each class")


def _threshold_counts(ls: LabelledScores) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative TP and FP after each distinct threshold, scores descending.

    Tied scores are grouped into one threshold so the trapezoidal ROC area
    equals the tie-aware Mann-Whitney statistic exactly.
    """
    order = np.argsort(-ls.scores, kind="stable")
    scores = ls.scores[order]
    labels = ls.labels[order]
    distinct = np.r_[np.nonzero(np.diff(scores))[0], len(scores) - 1]
    tp = np.cumsum(labels)[distinct].astype(np.float64)
    fp = (distinct + 1) - tp
    return tp, fp


def auc_roc(ls: LabelledScores) -> float:
    """Area under the ROC curve via grouped-threshold trapezoidal integration."""
    ls._require_both_classes()
    tp, fp = _threshold_counts(ls)
    tpr = np.r_[0.0, tp / tp[-1]]
    fpr = np.r_[0.0, fp / fp[-1]]
    return float(np.trapezoid(tpr, fpr))


def auc_pr(ls: LabelledScores) -> float:
    """Average precision: step integration of precision over recall
    increments, with tied scores grouped."""
    ls._require_both_classes()
    tp, fp = _threshold_counts(ls)
    precision = tp / (tp + fp)
    recall = tp / tp[-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise MetricError("pearson needs two equal-length sequences of length >= 2")
    xd = x - x.mean()
    yd = y - y.mean()
    denom = np.sqrt((xd * xd).sum() * (yd * yd).sum())
    if denom == 0.0:
        raise MetricError("pearson is undefined for a constant sequence")
    return float(np.clip((xd * yd).sum() / denom, -1.0, 1.0))


@dataclass
class EvalReport:
    """Per-run detection result: scores with labels plus the derived AUCs."""

    scores: LabelledScores
    metadata: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.metrics:
            self.metrics = {
                "auc_roc": auc_roc(self.scores),
                "auc_pr": auc_pr(self.scores),
            }


def aggregate_runs(runs: list[EvalReport] | list[dict]) -> dict[str, tuple[float, float]]:
    """Per-metric mean and population standard deviation across runs."""
    if not runs:
        raise MetricError("no runs to aggregate")
    dicts = [r.metrics if isinstance(r, EvalReport) else dict(r) for r in runs]
    keys = dicts[0].keys()
    summary = {}
    for key in keys:
        vals = np.array([d[key] for d in dicts], dtype=np.float64)
        summary[key] = (float(vals.mean()), float(vals.std()))
    return summary


def format_mean_std(summary: dict[str, tuple[float, float]], digits: int = 3) -> str:
    """Plain-text 'metric: mean +/- std' table in the usual .xxx layout."""
    lines = []
    for key, (mean, std) in summary.items():
        lines.append(f"{key}: {mean:.{digits}f} +/- {std:.{digits}f}")
    return "\n".join(lines)
