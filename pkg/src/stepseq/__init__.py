"""Per-second workflow step recognition toolkit.

Temporal conv / bidirectional-LSTM sequence labelers with a fused
multi-branch variant, self-supervised sequence-sorting pretraining,
a synthetic multi-domain benchmark generator, and experiment harnesses.
"""

from stepseq.data import BenchmarkSpec, FeatureSequence, generate_benchmark
from stepseq.estimators import SequenceSorter, StepRecognizer, as_feature_sequences
from stepseq.models import ModelConfig, StepModel, build_model, predict_steps, step_log_probs
from stepseq.numerics import (
    GradientCheckError,
    Parameter,
    ShapeError,
    Tensor,
    backward,
    grad_check,
    zero_grads,
)
from stepseq.seso import PermutationTable, build_permutation_table, pretrain_seso
from stepseq.training import TrainConfig, finetune_from_seso, train_step_model

__all__ = [
    "BenchmarkSpec",
    "FeatureSequence",
    "GradientCheckError",
    "ModelConfig",
    "Parameter",
    "PermutationTable",
    "SequenceSorter",
    "ShapeError",
    "StepModel",
    "StepRecognizer",
    "Tensor",
    "as_feature_sequences",
    "backward",
    "build_model",
    "build_permutation_table",
    "finetune_from_seso",
    "generate_benchmark",
    "grad_check",
    "predict_steps",
    "pretrain_seso",
    "step_log_probs",
    "train_step_model",
    "zero_grads",
]

__version__ = "0.1.0"
