"""Step-model optimization: per-video SGD with relevance-removal
augmentation and best-validation snapshot selection.

The batch is one video: each training step runs a full forward/backward
over one (augmented) sequence and applies a plain SGD update. Default
learning rates depend on the backbone kind: 1e-3 for the convolutional
kinds, 1e-2 for the recurrent ones. Validation accuracy is measured
after every epoch with dropout and augmentation off.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from stepseq import models
from stepseq.data import FeatureSequence
from stepseq.models import ModelConfig, StepModel, build_model, step_log_probs
from stepseq.numerics import Parameter, backward, nll_loss, zero_grads

DEFAULT_LR = {"conv1d": 1e-3, "conv_ensemble": 1e-3, "lstm": 1e-2, "tsan": 1e-2}


class ArchitectureMismatchError(ValueError):
    """Checkpoint and requested model configuration disagree."""


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float | None = None  # None resolves per backbone kind
    dropout_rate: float = 0.5
    relevance_drop_prob: float = 0.5
    seed: int = 0
    select_best_on_val: bool = True
    clip_norm: float | None = None  # optional global-norm gradient clip

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("lr must be positive")
        for p in (self.dropout_rate, self.relevance_drop_prob):
            if not 0.0 <= p < 1.0:
                raise ValueError("probabilities must lie in [0, 1)")

    def resolve_lr(self, kind: str) -> float:
        return DEFAULT_LR[kind] if self.lr is None else self.lr


@dataclass
class History:
    """Per-epoch training record (one entry per completed epoch)."""

    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    @property
    def best_epoch(self) -> int:
        accs = self.val_accuracy
        return int(np.argmax(accs)) if accs else -1


def relevance_augment(
    seq: FeatureSequence, rng: np.random.Generator, drop_prob: float = 0.5
) -> FeatureSequence | None:
    """Drop each irrelevant second independently with probability drop_prob.

    Relevant seconds are always kept, and the surviving rows stay aligned
    with their labels and mask. Sequences without a relevance mask pass
    through untouched. Returns None when nothing survives (an entirely
    irrelevant video whose every second was dropped); callers skip those.
    """
    if seq.relevance is None or drop_prob == 0.0:
        return seq
    keep = seq.relevance | (rng.random(seq.length) >= drop_prob)
    if keep.all():
        return seq
    if not keep.any():
        return None
    return FeatureSequence(
        features=seq.features[keep],
        labels=None if seq.labels is None else seq.labels[keep],
        relevance=seq.relevance[keep],
        id=seq.id,
    )


def sgd_update(params: list[Parameter], lr: float) -> None:
    """value <- value - lr * grad, then zero the gradients."""
    for p in params:
        p.data -= lr * p.grad
        p.grad[...] = 0.0


def clip_gradients(params: list[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float((p.grad**2).sum()) for p in params))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= factor
    return total


def dataset_accuracy(model: StepModel, dataset: list[FeatureSequence]) -> float:
    """Pooled per-second argmax accuracy over every sequence."""
    hits = 0
    total = 0
    for seq in dataset:
        preds = models.predict_steps(model, seq.features)
        hits += int((preds == seq.labels).sum())
        total += seq.length
    return hits / total


def _check_dataset(dataset, width, name):
    if not dataset:
        raise ValueError(f"{name} dataset is empty")
    for seq in dataset:
        if seq.labels is None:
            raise ValueError(f"{name} sequence {seq.id!r} has no labels")
        if seq.n_features != width:
            raise ValueError(
                f"{name} sequence {seq.id!r} has width {seq.n_features}, expected {width}"
            )


def train_step_model(
    train: list[FeatureSequence],
    val: list[FeatureSequence],
    model_config: ModelConfig,
    train_config: TrainConfig,
    init_backbone: dict[str, np.ndarray] | None = None,
) -> tuple[StepModel, History]:
    """Run the full optimization protocol and return the selected model.

    Per epoch: shuffle the video order, augment each video, take one SGD
    step on its sequence-level loss, then measure validation accuracy.
    With select_best_on_val the returned parameters are the snapshot of
    the best-validation epoch (earliest on ties); otherwise the final
    epoch's.
    """
    _check_dataset(train, model_config.input_dim, "train")
    _check_dataset(val, model_config.input_dim, "val")

    model = build_model(model_config, train_config.seed)
    if init_backbone is not None:
        load_backbone(model.backbone, init_backbone)
    params = model.parameters()
    lr = train_config.resolve_lr(model_config.kind)

    root = np.random.SeedSequence(train_config.seed)
    order_rng, dropout_rng, augment_rng = (
        np.random.default_rng(s) for s in root.spawn(3)
    )

    history = History()
    best_acc = -1.0
    best_params: dict[str, np.ndarray] | None = None
    zero_grads(params)

    for _ in range(train_config.epochs):
        started = time.perf_counter()
        losses = []
        for idx in order_rng.permutation(len(train)):
            seq = relevance_augment(
                train[idx], augment_rng, train_config.relevance_drop_prob
            )
            if seq is None:
                continue  # every second was irrelevant and dropped
            log_probs = step_log_probs(
                model,
                seq.features,
                training=True,
                rng=dropout_rng,
                dropout_rate=train_config.dropout_rate,
            )
            loss = nll_loss(log_probs, seq.labels)
            backward(loss)
            if train_config.clip_norm is not None:
                clip_gradients(params, train_config.clip_norm)
            sgd_update(params, lr)
            losses.append(loss.data.item())

        val_acc = dataset_accuracy(model, val)
        history.train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        history.val_accuracy.append(val_acc)
        history.seconds.append(time.perf_counter() - started)

        if train_config.select_best_on_val and val_acc > best_acc:
            best_acc = val_acc
            best_params = {p.name: p.data.copy() for p in params}

    if train_config.select_best_on_val and best_params is not None:
        for p in params:
            p.data[...] = best_params[p.name]
    return model, history


def load_backbone(backbone, tensors: dict[str, np.ndarray]) -> None:
    """Copy a named tensor set into a backbone's parameters, strictly."""
    names = {p.name for p in backbone.parameters()}
    if names != set(tensors):
        missing = names - set(tensors)
        extra = set(tensors) - names
        raise ArchitectureMismatchError(
            f"backbone tensors do not line up (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})"
        )
    for p in backbone.parameters():
        src = tensors[p.name]
        if src.shape != p.data.shape:
            raise ArchitectureMismatchError(
                f"{p.name}: checkpoint shape {src.shape} != model shape {p.data.shape}"
            )
        p.data[...] = src


def finetune_from_seso(
    checkpoint,
    train: list[FeatureSequence],
    val: list[FeatureSequence],
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> tuple[StepModel, History]:
    """Initialize the backbone from a sorting-task checkpoint, attach a
    fresh classification head, and train everything on the step task."""
    from stepseq.seso import strip_to_backbone

    ckpt_cfg = checkpoint.config
    for field_name in ("kind", "input_dim", "hidden", "kernel_sizes", "lstm_layers"):
        if getattr(ckpt_cfg, field_name) != getattr(model_config, field_name):
            raise ArchitectureMismatchError(
                f"checkpoint {field_name}={getattr(ckpt_cfg, field_name)!r} does not "
                f"match requested {field_name}={getattr(model_config, field_name)!r}"
            )
    return train_step_model(
        train, val, model_config, train_config, init_backbone=strip_to_backbone(checkpoint)
    )
