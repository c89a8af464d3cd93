"""Scikit-learn style estimators wrapping the training pipelines.

These wrappers make the sequence labelers compose with the wider
ecosystem (get_params/set_params, clone, fit/predict/score). X is a
collection of variable-length sequences: either FeatureSequence objects
or plain L×N arrays with labels passed as y.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from stepseq.checkpoint import Checkpoint, backbone_tensors, checkpoint_from_seso, load_checkpoint
from stepseq.data import NUM_STEPS, FeatureSequence
from stepseq.harness import arch_config
from stepseq.metrics import evaluate
from stepseq.models import backbone_apply, predict_steps, rep_width, step_log_probs
from stepseq.seso import build_permutation_table, pretrain_seso
from stepseq.training import (
    ArchitectureMismatchError,
    TrainConfig,
    train_step_model,
)


def as_feature_sequences(X, y=None, relevance=None) -> list[FeatureSequence]:
    """Normalize estimator input into a list of FeatureSequence.

    X may already hold FeatureSequence objects (then y must be None), or
    L×N arrays with per-second labels in y and optional per-second
    relevance masks.
    """
    if len(X) == 0:
        raise ValueError("X is empty")
    if all(isinstance(item, FeatureSequence) for item in X):
        if y is not None:
            raise ValueError("pass labels inside FeatureSequence or as y, not both")
        seqs = list(X)
    else:
        if y is not None and len(y) != len(X):
            raise ValueError(f"{len(X)} sequences but {len(y)} label arrays")
        if relevance is not None and len(relevance) != len(X):
            raise ValueError(f"{len(X)} sequences but {len(relevance)} masks")
        seqs = [
            FeatureSequence(
                features=np.asarray(x),
                labels=None if y is None else np.asarray(y[i]),
                relevance=None if relevance is None else np.asarray(relevance[i]),
                id=f"seq-{i}",
            )
            for i, x in enumerate(X)
        ]
    widths = {s.n_features for s in seqs}
    if len(widths) != 1:
        raise ValueError(f"inconsistent feature widths: {sorted(widths)}")
    return seqs


def _require_labels(seqs: list[FeatureSequence]) -> None:
    for s in seqs:
        if s.labels is None:
            raise ValueError(f"sequence {s.id!r} has no labels")


def _holdout_split(seqs, fraction: float, seed: int):
    if len(seqs) < 2:
        return seqs, seqs  # too small to hold out; validate on train
    n_val = max(1, round(fraction * len(seqs)))
    order = np.random.default_rng(seed).permutation(len(seqs))
    val_idx = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(seqs) if i not in val_idx]
    val = [s for i, s in enumerate(seqs) if i in val_idx]
    return train, val


class StepRecognizer(ClassifierMixin, BaseEstimator):
    """Per-second workflow-step classifier over feature sequences.

    Parameters
    ----------
    arch : one of "conv1d-k5", "conv1d-k25", "conv1d-k39", "conv-ensemble",
        "lstm1", "lstm2", "tsan".
    hidden : channel/hidden width of every branch.
    epochs, lr, dropout_rate, relevance_drop_prob, select_best_on_val,
    clip_norm : the optimization protocol; lr=None picks the per-kind
        default (1e-3 convolutional, 1e-2 recurrent).
    val_fraction : internal holdout used for best-epoch selection when no
        explicit validation set is passed to fit.
    init : optional warm start; a fitted SequenceSorter, a Checkpoint, or
        a checkpoint path. The head is always re-initialized.
    seed : drives initialization, shuffling, dropout and augmentation.
    """

    def __init__(
        self,
        arch: str = "tsan",
        hidden: int = 128,
        epochs: int = 100,
        lr: float | None = None,
        dropout_rate: float = 0.5,
        relevance_drop_prob: float = 0.5,
        select_best_on_val: bool = True,
        clip_norm: float | None = None,
        val_fraction: float = 0.2,
        init=None,
        seed: int = 0,
    ):
        self.arch = arch
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.dropout_rate = dropout_rate
        self.relevance_drop_prob = relevance_drop_prob
        self.select_best_on_val = select_best_on_val
        self.clip_norm = clip_norm
        self.val_fraction = val_fraction
        self.init = init
        self.seed = seed

    def _resolve_init(self, config):
        if self.init is None:
            return None
        init = self.init
        if isinstance(init, SequenceSorter):
            check_is_fitted(init)
            init = init.checkpoint_
        if not isinstance(init, Checkpoint):
            init = load_checkpoint(init)
        for name in ("kind", "input_dim", "hidden", "kernel_sizes", "lstm_layers"):
            if getattr(init.config, name) != getattr(config, name):
                raise ArchitectureMismatchError(
                    f"init checkpoint {name}={getattr(init.config, name)!r} does not "
                    f"match arch={self.arch!r}"
                )
        return backbone_tensors(init)

    def fit(self, X, y=None, validation=None):
        """Train on sequences; validation may be (X_val, y_val) or None."""
        seqs = as_feature_sequences(X, y)
        _require_labels(seqs)
        if validation is not None:
            val = as_feature_sequences(*validation) if isinstance(validation, tuple) else as_feature_sequences(validation)
            _require_labels(val)
            train = seqs
        else:
            train, val = _holdout_split(seqs, self.val_fraction, self.seed)
        config = arch_config(self.arch, seqs[0].n_features, self.hidden)
        config.dropout_rate = self.dropout_rate
        tcfg = TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            dropout_rate=self.dropout_rate,
            relevance_drop_prob=self.relevance_drop_prob,
            seed=self.seed,
            select_best_on_val=self.select_best_on_val,
            clip_norm=self.clip_norm,
        )
        self.model_, self.history_ = train_step_model(
            train, val, config, tcfg, init_backbone=self._resolve_init(config)
        )
        self.classes_ = np.arange(NUM_STEPS)
        self.n_features_in_ = seqs[0].n_features
        return self

    def predict(self, X) -> list[np.ndarray]:
        check_is_fitted(self)
        return [predict_steps(self.model_, s.features) for s in as_feature_sequences(X)]

    def predict_log_proba(self, X) -> list[np.ndarray]:
        check_is_fitted(self)
        return [
            step_log_probs(self.model_, s.features, training=False).data
            for s in as_feature_sequences(X)
        ]

    def score(self, X, y=None) -> float:
        """Pooled per-second accuracy."""
        check_is_fitted(self)
        seqs = as_feature_sequences(X, y)
        _require_labels(seqs)
        return evaluate(self.model_, seqs).pooled_accuracy


class SequenceSorter(TransformerMixin, BaseEstimator):
    """Self-supervised sequence-sorting pretrainer / feature extractor.

    fit() needs no labels: each epoch shuffles nine-segment puzzles and
    trains the backbone to classify the applied permutation. A fitted
    sorter exposes checkpoint_ (feed it to StepRecognizer(init=...)) and
    transform(), which maps sequences to their L×rep_width backbone
    features.
    """

    def __init__(
        self,
        arch: str = "tsan",
        hidden: int = 128,
        permutations: int = 24,
        perm_seed: int = 0,
        epochs: int = 50,
        lr: float | None = None,
        dropout_rate: float = 0.5,
        val_fraction: float = 0.2,
        seed: int = 0,
    ):
        self.arch = arch
        self.hidden = hidden
        self.permutations = permutations
        self.perm_seed = perm_seed
        self.epochs = epochs
        self.lr = lr
        self.dropout_rate = dropout_rate
        self.val_fraction = val_fraction
        self.seed = seed

    def fit(self, X, y=None):
        seqs = as_feature_sequences(X, y)
        train, val = _holdout_split(seqs, self.val_fraction, self.seed)
        config = arch_config(self.arch, seqs[0].n_features, self.hidden)
        config.dropout_rate = self.dropout_rate
        table = build_permutation_table(self.permutations, self.perm_seed)
        tcfg = TrainConfig(
            epochs=self.epochs, lr=self.lr, dropout_rate=self.dropout_rate,
            seed=self.seed,
        )
        self.model_, self.history_ = pretrain_seso(train, val, config, tcfg, table)
        self.checkpoint_ = checkpoint_from_seso(self.model_, table)
        self.n_features_in_ = seqs[0].n_features
        self.backbone_dim_ = rep_width(config)
        return self

    def transform(self, X) -> list[np.ndarray]:
        """Backbone features for each sequence, one L×rep_width array each."""
        check_is_fitted(self)
        return [
            backbone_apply(self.model_.config, self.model_.backbone, s.features).data
            for s in as_feature_sequences(X)
        ]

    @property
    def sorting_accuracy_(self) -> float:
        check_is_fitted(self)
        return self.history_.val_accuracy[-1]
