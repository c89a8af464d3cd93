"""Sequence-sorting pretext task.

A sequence is cut into nine contiguous segments, the segments are
shuffled by a permutation drawn from a fixed codebook, and the model
must classify which codebook entry was applied. Each shuffled segment is
summarized independently (zeroed recurrent state, temporal mean of the
backbone's top-layer output); the nine summaries are concatenated and
classified by a dedicated head. Pretraining this task needs no labels;
the resulting backbone initializes step models.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from stepseq.data import FeatureSequence
from stepseq.layers import DenseParams, dense_forward, init_dense
from stepseq.models import Backbone, ModelConfig, backbone_apply, build_backbone, rep_width
from stepseq.numerics import (
    Parameter,
    Tensor,
    backward,
    concat_last_axis,
    log_softmax_rows,
    mean_over_time,
    nll_loss,
    reshape,
    zero_grads,
)
from stepseq.training import History, TrainConfig, clip_gradients, sgd_update

log = logging.getLogger(__name__)

NUM_SEGMENTS = 9
_CANDIDATES_PER_PICK = 100


@dataclass
class PermutationTable:
    """Codebook of segment orderings; entry 0 is always the identity."""

    perms: np.ndarray  # P × 9
    seed: int

    @property
    def size(self) -> int:
        return self.perms.shape[0]


@dataclass
class SortingExample:
    """One shuffled nine-segment puzzle and its codebook class."""

    segments: list[np.ndarray]
    target_class: int


@dataclass
class SesoModel:
    config: ModelConfig
    backbone: Backbone
    head: DenseParams  # 9 * rep_width -> P

    def parameters(self) -> list[Parameter]:
        return self.backbone.parameters() + self.head.parameters()


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    return int((a != b).sum())


def build_permutation_table(p: int, seed: int = 0) -> PermutationTable:
    """Greedy max-min-Hamming codebook of p permutations of nine items.

    Entry 0 is the identity. Each later entry is the best of 100 sampled
    candidates, scoring a candidate by its minimum Hamming distance to
    everything already chosen. Deterministic per seed.
    """
    if not 1 <= p <= math.factorial(NUM_SEGMENTS):
        raise ValueError(
            f"cannot build {p} distinct permutations of {NUM_SEGMENTS} items"
        )
    rng = np.random.default_rng(seed)
    chosen = [np.arange(NUM_SEGMENTS)]
    while len(chosen) < p:
        best, best_score = None, -1
        while best_score <= 0:  # resample if every candidate was a duplicate
            for _ in range(_CANDIDATES_PER_PICK):
                cand = rng.permutation(NUM_SEGMENTS)
                score = min(hamming(cand, c) for c in chosen)
                if score > best_score:
                    best, best_score = cand, score
        chosen.append(best)
    return PermutationTable(perms=np.array(chosen), seed=seed)


def split_nine(x: np.ndarray) -> list[np.ndarray]:
    """Partition the rows of x into nine contiguous segments.

    Base length is L // 9; the first L mod 9 segments carry one extra
    row, so concatenating the parts in order reconstructs x exactly.
    """
    x = np.asarray(x)
    length = x.shape[0]
    if length < NUM_SEGMENTS:
        raise ValueError(f"need at least {NUM_SEGMENTS} rows to split, got {length}")
    base, extra = divmod(length, NUM_SEGMENTS)
    sizes = [base + 1 if i < extra else base for i in range(NUM_SEGMENTS)]
    bounds = np.cumsum(sizes)[:-1]
    return np.split(x, bounds)


def make_sorting_example(
    x: np.ndarray, table: PermutationTable, rng: np.random.Generator
) -> SortingExample:
    """Draw a uniform codebook class and shuffle the segments accordingly."""
    target = int(rng.integers(0, table.size))
    parts = split_nine(x)
    perm = table.perms[target]
    return SortingExample(segments=[parts[j] for j in perm], target_class=target)


def invert_example(ex: SortingExample, table: PermutationTable) -> np.ndarray:
    """Undo the shuffle; returns the original row order."""
    perm = table.perms[ex.target_class]
    restored: list[np.ndarray | None] = [None] * NUM_SEGMENTS
    for position, source in enumerate(perm):
        restored[source] = ex.segments[position]
    return np.concatenate(restored, axis=0)


def build_seso_model(config: ModelConfig, p: int, seed: int) -> SesoModel:
    rng = np.random.default_rng(seed)
    backbone = build_backbone(config, rng)
    head = init_dense(NUM_SEGMENTS * rep_width(config), p, rng, "seso_head")
    return SesoModel(config=config, backbone=backbone, head=head)


def seso_log_probs(
    model: SesoModel,
    ex: SortingExample,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_rate: float | None = None,
) -> Tensor:
    """Class log-probabilities (1 × P) for one puzzle.

    Segments run through the backbone independently, so no state leaks
    across segment boundaries; each is summarized by its temporal mean.
    """
    width = rep_width(model.config)
    rows = []
    for seg in ex.segments:
        rep = backbone_apply(model.config, model.backbone, seg, training, rng, dropout_rate)
        rows.append(reshape(mean_over_time(rep), (1, width)))
    joined = concat_last_axis(rows)
    return log_softmax_rows(dense_forward(joined, model.head))


def sorting_accuracy(model: SesoModel, examples: list[SortingExample]) -> float:
    hits = 0
    for ex in examples:
        lp = seso_log_probs(model, ex, training=False)
        hits += int(np.argmax(lp.data) == ex.target_class)
    return hits / len(examples)


def pretrain_seso(
    train: list[FeatureSequence],
    val: list[FeatureSequence],
    model_config: ModelConfig,
    train_config: TrainConfig,
    table: PermutationTable,
    goal_accuracy: float | None = None,
) -> tuple[SesoModel, History]:
    """Self-supervised pretraining on freshly sampled puzzles.

    Labels are never read. Every epoch shuffles the video order and draws
    one new puzzle per video; validation sorting accuracy is measured on
    a fixed puzzle set after each epoch (the convergence curve). Training
    stops early once goal_accuracy is reached, when one is given. Returns
    the final-epoch model.
    """
    usable = []
    for seq in train:
        if seq.length < NUM_SEGMENTS:
            log.warning("skipping %r: %d rows is too short to split", seq.id, seq.length)
        else:
            usable.append(seq)
    if not usable:
        raise ValueError("no training sequence is long enough to split into nine")

    model = build_seso_model(model_config, table.size, train_config.seed)
    params = model.parameters()
    lr = train_config.resolve_lr(model_config.kind)

    root = np.random.SeedSequence(train_config.seed)
    order_rng, dropout_rng, puzzle_rng, val_rng = (
        np.random.default_rng(s) for s in root.spawn(4)
    )
    val_examples = [
        make_sorting_example(seq.features, table, val_rng)
        for seq in val
        if seq.length >= NUM_SEGMENTS
    ]

    history = History()
    zero_grads(params)
    for _ in range(train_config.epochs):
        started = time.perf_counter()
        losses = []
        for idx in order_rng.permutation(len(usable)):
            ex = make_sorting_example(usable[idx].features, table, puzzle_rng)
            log_probs = seso_log_probs(
                model,
                ex,
                training=True,
                rng=dropout_rng,
                dropout_rate=train_config.dropout_rate,
            )
            loss = nll_loss(log_probs, [ex.target_class])
            backward(loss)
            if train_config.clip_norm is not None:
                clip_gradients(params, train_config.clip_norm)
            sgd_update(params, lr)
            losses.append(loss.data.item())

        val_acc = sorting_accuracy(model, val_examples) if val_examples else float("nan")
        history.train_loss.append(float(np.mean(losses)))
        history.val_accuracy.append(val_acc)
        history.seconds.append(time.perf_counter() - started)
        if goal_accuracy is not None and val_acc >= goal_accuracy:
            break
    return model, history


def strip_to_backbone(checkpoint) -> dict[str, np.ndarray]:
    """Backbone tensors of a sorting-task checkpoint, head discarded."""
    head_keys = [k for k in checkpoint.tensors if k.startswith("seso_head.")]
    if not head_keys:
        raise ValueError("checkpoint has no sorting head; was it produced by pretraining?")
    return {k: v for k, v in checkpoint.tensors.items() if k not in head_keys}
