"""Annotation-free knowledge distillation against exported zero-shot teachers.

The engine trains a small student network using only a frozen teacher's
image features and prompt text embeddings, consumed from a self-contained
bundle directory. Supervision comes from prompt-confidence-weighted
zero-shot logits; a relational graph of sample nodes and class proxies is
aligned between teacher and student through Pearson-correlation edges.
"""

from .bundle import TeacherBundle, load_bundle, save_bundle, synth_bundle
from .errors import (BundleNotFoundError, FormatError, NumericError, PRGError,
                     ShapeError, StateError, ValidationError)
from .estimator import PRGDistiller
from .student import StudentConfig, StudentParams, init_student
from .trainer import TrainConfig, cosine_restart_lr, evaluate, heatmap_metrics, train

__version__ = "0.1.0"

__all__ = [
    "PRGDistiller",
    "TeacherBundle",
    "TrainConfig",
    "StudentConfig",
    "StudentParams",
    "load_bundle",
    "save_bundle",
    "synth_bundle",
    "init_student",
    "train",
    "evaluate",
    "heatmap_metrics",
    "cosine_restart_lr",
    "PRGError",
    "ShapeError",
    "ValidationError",
    "FormatError",
    "BundleNotFoundError",
    "NumericError",
    "StateError",
    "__version__",
]
