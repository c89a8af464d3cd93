"""Per-second evaluation metrics and reports."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from stepseq.data import NUM_STEPS, FeatureSequence
from stepseq.models import StepModel, predict_steps


@dataclass
class ConfusionMatrix:
    """counts[i, j] = seconds with true step i predicted as step j."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace_accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


@dataclass
class MetricsReport:
    per_video_accuracy: list[float]
    pooled_accuracy: float
    confusion: ConfusionMatrix
    metadata: dict = field(default_factory=dict)


def accuracy(preds, labels) -> float:
    """Fraction of matching seconds."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {labels.shape}")
    return float((preds == labels).mean())


def confusion(preds, labels, num_classes: int = NUM_STEPS) -> ConfusionMatrix:
    """Tally true-vs-predicted counts into a num_classes square matrix."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {labels.shape}")
    for name, arr in (("preds", preds), ("labels", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} contain classes outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def config_digest(model_config) -> str:
    from stepseq.configio import model_config_to_text

    text = model_config_to_text(model_config)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def evaluate(
    model: StepModel, dataset: list[FeatureSequence], metadata: dict | None = None
) -> MetricsReport:
    """Pooled per-second metrics over every sequence of a labeled dataset."""
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    per_video = []
    pooled = ConfusionMatrix(np.zeros((NUM_STEPS, NUM_STEPS), dtype=np.int64))
    for seq in dataset:
        if seq.labels is None:
            raise ValueError(f"sequence {seq.id!r} has no labels")
        preds = predict_steps(model, seq.features)
        per_video.append(accuracy(preds, seq.labels))
        pooled = pooled + confusion(preds, seq.labels)
    meta = {"config": config_digest(model.config)}
    meta.update(metadata or {})
    return MetricsReport(
        per_video_accuracy=per_video,
        pooled_accuracy=pooled.trace_accuracy,
        confusion=pooled,
        metadata=meta,
    )
