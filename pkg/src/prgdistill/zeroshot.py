"""Teacher-side zero-shot heads: per-prompt logits, prompt-confidence
weighting, soft labels, and class predictions.

All functions here are pure numpy: the teacher is frozen, so nothing on
this path ever needs a gradient. A prompt whose best class score is high
describes the sample well, so its logits get proportionally more weight;
the weighted combination replaces the classic averaged-prompt head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import softmax_rows_np
from .errors import ShapeError, ValidationError
from .validation import as_matrix, check_finite

DEFAULT_TAU = 100.0


@dataclass(frozen=True)
class PromptLogits:
    """Per-prompt logit stacks W_i, each batch x classes, at scale tau."""

    values: tuple[np.ndarray, ...]
    tau: float

    def __post_init__(self):
        if len(self.values) < 1:
            raise ValidationError("need at least one prompt")
        shape = self.values[0].shape
        for i, w in enumerate(self.values):
            if w.shape != shape:
                raise ShapeError(f"prompt {i} logits have shape {w.shape}, expected {shape}")
        if self.tau <= 0:
            raise ValidationError(f"tau must be positive, got {self.tau}")

    @property
    def n_prompts(self) -> int:
        return len(self.values)

    @property
    def batch_size(self) -> int:
        return self.values[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.values[0].shape[1]


@dataclass(frozen=True)
class WeightedLogits:
    """Prompt-weighted teacher logits plus the per-sample weights used."""

    logits: np.ndarray
    per_sample_weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = self.per_sample_weights
        if w.shape[0] != self.logits.shape[0]:
            raise ShapeError("weights and logits disagree on batch size")
        if np.any(w < 0):
            raise ValidationError("per-sample prompt weights must be nonnegative")
        if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-10):
            raise ValidationError("per-sample prompt weights must sum to 1")


def per_prompt_logits(features: np.ndarray, text_embeddings, tau: float = DEFAULT_TAU) -> PromptLogits:
    """Logit stack ``tau * features @ T_i^T`` for each prompt's class matrix T_i."""
    features = as_matrix(features, "features")
    if tau <= 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    mats = [as_matrix(t, f"text_embeddings[{i}]") for i, t in enumerate(text_embeddings)]
    if not mats:
        raise ValidationError("need at least one prompt embedding matrix")
    d = features.shape[1]
    c = mats[0].shape[0]
    for i, t in enumerate(mats):
        if t.shape != (c, d):
            raise ShapeError(
                f"text_embeddings[{i}] has shape {t.shape}, expected ({c}, {d})")
    return PromptLogits(tuple(tau * (features @ t.T) for t in mats), tau)


def prompt_weights(pl: PromptLogits) -> np.ndarray:
    """Per-sample prompt weights from each prompt's best class score.

    For a sample, weight_i = m_i / sum_j m_j where m_i is prompt i's max
    logit. If any m_i is nonpositive that ratio loses meaning, so the
    sample falls back to uniform weights.
    """
    maxes = np.stack([w.max(axis=1) for w in pl.values], axis=1)  # b x p
    p = pl.n_prompts
    weights = np.full_like(maxes, 1.0 / p)
    usable = np.all(maxes > 0.0, axis=1)
    if np.any(usable):
        weights[usable] = maxes[usable] / maxes[usable].sum(axis=1, keepdims=True)
    return weights


def weighted_logits(pl: PromptLogits, weights: np.ndarray) -> WeightedLogits:
    """Combine the per-prompt logit stacks with per-sample weights."""
    weights = as_matrix(weights, "weights")
    if weights.shape != (pl.batch_size, pl.n_prompts):
        raise ShapeError(
            f"weights have shape {weights.shape}, expected ({pl.batch_size}, {pl.n_prompts})")
    combined = np.zeros_like(pl.values[0])
    for i, w in enumerate(pl.values):
        combined += weights[:, i:i + 1] * w
    return WeightedLogits(combined, weights)


def weighted_zero_shot_logits(features: np.ndarray, text_embeddings,
                              tau: float = DEFAULT_TAU) -> WeightedLogits:
    """Full prompt-weighted head in one call."""
    pl = per_prompt_logits(features, text_embeddings, tau)
    return weighted_logits(pl, prompt_weights(pl))


def plain_zero_shot_logits(features: np.ndarray, text_embeddings,
                           tau: float = DEFAULT_TAU) -> np.ndarray:
    """Classic head: average the prompt embeddings per class, then project.

    The mean embedding is not re-normalized, so this generally differs
    from uniformly weighting the per-prompt logit stacks.
    """
    features = as_matrix(features, "features")
    if tau <= 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    mats = [as_matrix(t, f"text_embeddings[{i}]") for i, t in enumerate(text_embeddings)]
    if not mats:
        raise ValidationError("need at least one prompt embedding matrix")
    mean_t = np.mean(mats, axis=0)
    if mean_t.shape[1] != features.shape[1]:
        raise ShapeError(
            f"feature dim {features.shape[1]} does not match embedding dim {mean_t.shape[1]}")
    return tau * (features @ mean_t.T)


def soft_labels(logits: np.ndarray) -> np.ndarray:
    """Row-softmax the teacher logits into probability targets."""
    return softmax_rows_np(as_matrix(logits, "logits"))


def teacher_predictions(logits: np.ndarray) -> np.ndarray:
    """Per-row argmax class; ties go to the lowest class index."""
    logits = as_matrix(logits, "logits")
    if logits.shape[0] < 1:
        raise ValidationError("need at least one row of logits")
    check_finite(logits, "logits")
    return logits.argmax(axis=1)
