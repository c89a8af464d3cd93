"""Backbone assembly and per-second classification heads.

Four backbone kinds over an L×N feature sequence:

  conv1d         one temporal convolution branch           -> L × H
  conv_ensemble  three parallel convolutions, concatenated -> L × 3H
  lstm           one or two stacked bidirectional LSTMs    -> L × 2H
  tsan           three convolutions + a bidirectional LSTM in parallel,
                 concatenated (L × 5H) and fed to a second bidirectional
                 LSTM                                      -> L × 2H

The classification head is a dense layer shared across timesteps,
followed by a row-wise log-softmax. Dropout is applied to the input
matrix, to the concatenated branch output (tsan), and between stacked
LSTM layers, only while training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from stepseq import layers
from stepseq.numerics import ShapeError, Tensor, concat_last_axis, log_softmax_rows
from stepseq.layers import BiLstmParams, Conv1dParams, DenseParams, Parameter

KINDS = ("conv1d", "conv_ensemble", "lstm", "tsan")


@dataclass
class ModelConfig:
    """Architecture descriptor for a step model."""

    kind: str
    input_dim: int
    hidden: int = 128
    kernel_sizes: tuple[int, ...] = (5, 25, 39)
    lstm_layers: int = 1
    num_classes: int = 7
    dropout_rate: float = 0.5

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}, expected one of {KINDS}")
        if self.input_dim < 1 or self.hidden < 1 or self.num_classes < 1:
            raise ValueError("input_dim, hidden and num_classes must be positive")
        for k in self.kernel_sizes:
            if k < 1 or k % 2 == 0:
                raise ValueError(f"kernel sizes must be odd, got {self.kernel_sizes}")
        if self.kind == "conv1d" and len(self.kernel_sizes) != 1:
            raise ValueError("conv1d takes exactly one kernel size")
        if self.kind in ("conv_ensemble", "tsan") and len(self.kernel_sizes) != 3:
            raise ValueError(f"{self.kind} takes exactly three kernel sizes")
        if self.kind in ("lstm",) and self.lstm_layers not in (1, 2):
            raise ValueError("lstm_layers must be 1 or 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


def rep_width(config: ModelConfig) -> int:
    """Width of the backbone's output representation."""
    h = config.hidden
    return {
        "conv1d": h,
        "conv_ensemble": 3 * h,
        "lstm": 2 * h,
        "tsan": 2 * h,
    }[config.kind]


@dataclass
class Backbone:
    convs: list[Conv1dParams] = field(default_factory=list)
    lstms: list[BiLstmParams] = field(default_factory=list)

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for c in self.convs:
            out.extend(c.parameters())
        for l in self.lstms:
            out.extend(l.parameters())
        return out


@dataclass
class StepModel:
    config: ModelConfig
    backbone: Backbone
    head: DenseParams

    def parameters(self) -> list[Parameter]:
        return self.backbone.parameters() + self.head.parameters()


def build_backbone(config: ModelConfig, rng: np.random.Generator) -> Backbone:
    n, h = config.input_dim, config.hidden
    bb = Backbone()
    if config.kind in ("conv1d", "conv_ensemble", "tsan"):
        for k in config.kernel_sizes:
            bb.convs.append(layers.init_conv1d(n, h, k, rng, f"conv_k{k}"))
    if config.kind == "lstm":
        bb.lstms.append(layers.init_bilstm(n, h, rng, "bilstm1"))
        if config.lstm_layers == 2:
            bb.lstms.append(layers.init_bilstm(2 * h, h, rng, "bilstm2"))
    elif config.kind == "tsan":
        bb.lstms.append(layers.init_bilstm(n, h, rng, "bilstm1"))
        bb.lstms.append(layers.init_bilstm(3 * h + 2 * h, h, rng, "bilstm2"))
    return bb


def build_model(config: ModelConfig, seed: int) -> StepModel:
    """Initialize every layer of a step model, deterministically per seed."""
    rng = np.random.default_rng(seed)
    backbone = build_backbone(config, rng)
    head = layers.init_dense(rep_width(config), config.num_classes, rng, "head")
    model = StepModel(config=config, backbone=backbone, head=head)
    names = [p.name for p in model.parameters()]
    assert len(names) == len(set(names)), "parameter names must be unique"
    return model


def backbone_apply(
    config: ModelConfig,
    backbone: Backbone,
    x,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_rate: float | None = None,
) -> Tensor:
    """Run a backbone over an L×N input, returning L×rep_width features."""
    rate = config.dropout_rate if dropout_rate is None else dropout_rate
    h = layers.dropout(x, rate, rng, training)
    if h.data.ndim != 2 or h.shape[1] != config.input_dim:
        raise ShapeError(
            f"backbone expects L×{config.input_dim} input, got {h.shape}"
        )
    if config.kind == "conv1d":
        return layers.conv1d_same(h, backbone.convs[0])
    if config.kind == "conv_ensemble":
        return concat_last_axis([layers.conv1d_same(h, c) for c in backbone.convs])
    if config.kind == "lstm":
        out = layers.bilstm_forward(h, backbone.lstms[0])
        for deeper in backbone.lstms[1:]:
            out = layers.dropout(out, rate, rng, training)
            out = layers.bilstm_forward(out, deeper)
        return out
    # tsan: parallel branches, fuse, second recurrent pass
    branches = [layers.conv1d_same(h, c) for c in backbone.convs]
    branches.append(layers.bilstm_forward(h, backbone.lstms[0]))
    joined = concat_last_axis(branches)
    joined = layers.dropout(joined, rate, rng, training)
    return layers.bilstm_forward(joined, backbone.lstms[1])


def backbone_forward(
    model: StepModel,
    x,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_rate: float | None = None,
) -> Tensor:
    return backbone_apply(model.config, model.backbone, x, training, rng, dropout_rate)


def step_log_probs(
    model: StepModel,
    x,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_rate: float | None = None,
) -> Tensor:
    """Per-second class log-probabilities, L × num_classes."""
    rep = backbone_forward(model, x, training, rng, dropout_rate)
    return log_softmax_rows(layers.dense_forward(rep, model.head))


def predict_steps(model: StepModel, x) -> np.ndarray:
    """Most likely class per second; ties break toward the lowest index."""
    lp = step_log_probs(model, x, training=False)
    return np.argmax(lp.data, axis=1)
