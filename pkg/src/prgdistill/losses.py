"""Training objectives.

The distillation objective is
``total = ce + lambda_node * node + lambda_edge * edge`` where ``ce`` is
soft cross-entropy against the teacher's soft labels, ``node`` drives the
teacher-student node cross-correlation matrix toward the identity, and
``edge`` matches the student's sample-proxy edge matrix to the teacher's.
A temperature-scaled KL term is included as the classic logit-matching
baseline. Teacher-side arguments are plain arrays (or get detached), so
no loss propagates gradient into the teacher or the proxy banks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Node, constant, log_softmax_rows, mean_all, mul,
                       softmax_rows_np, sqrt, sub, sum_all)
from .errors import ShapeError, ValidationError

REDUCTIONS = ("frobenius", "mean_square")


@dataclass(frozen=True)
class LossWeights:
    lambda_node: float = 0.4
    lambda_edge: float = 0.2
    reduction: str = "frobenius"

    def __post_init__(self):
        if self.lambda_node < 0 or self.lambda_edge < 0:
            raise ValidationError("loss weights must be nonnegative")
        if self.reduction not in REDUCTIONS:
            raise ValidationError(f"reduction must be one of {REDUCTIONS}")


def _reduce(diff: Node, reduction: str) -> Node:
    if reduction == "frobenius":
        return sqrt(sum_all(mul(diff, diff)))
    if reduction == "mean_square":
        return mean_all(mul(diff, diff))
    raise ValidationError(f"reduction must be one of {REDUCTIONS}")


def soft_cross_entropy(student_logits: Node, teacher_probs: np.ndarray) -> Node:
    """Mean over the batch of -sum_j t_j * log softmax(student)_j."""
    s = student_logits if isinstance(student_logits, Node) else constant(student_logits)
    t = np.asarray(teacher_probs, dtype=np.float64)
    if t.shape != s.shape:
        raise ShapeError(f"teacher targets {t.shape} do not match logits {s.shape}")
    if np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("teacher targets must be probability rows (sum 1)")
    b = s.shape[0]
    weighted = mul(constant(t), log_softmax_rows(s))
    return mul(sum_all(weighted), constant(-1.0 / b))


def node_alignment_loss(cross_correlation: Node, reduction: str = "frobenius") -> Node:
    """Distance of the node cross-correlation matrix from the identity."""
    c = cross_correlation if isinstance(cross_correlation, Node) else constant(cross_correlation)
    if c.shape[0] != c.shape[1]:
        raise ShapeError(f"cross-correlation matrix must be square, got {c.shape}")
    return _reduce(sub(c, constant(np.eye(c.shape[0]))), reduction)


def edge_alignment_loss(teacher_edges, student_edges: Node,
                        reduction: str = "frobenius") -> Node:
    """Distance between teacher and student edge matrices.

    The teacher matrix is detached; only the student side is trainable.
    """
    e_t = teacher_edges.value if isinstance(teacher_edges, Node) else np.asarray(teacher_edges, dtype=np.float64)
    e_s = student_edges if isinstance(student_edges, Node) else constant(student_edges)
    if e_t.shape != e_s.shape:
        raise ShapeError(f"edge matrices differ in shape: {e_t.shape} vs {e_s.shape}")
    return _reduce(sub(constant(e_t), e_s), reduction)


def prg_loss(node_loss, edge_loss, weights: LossWeights):
    """Weighted combination of the two alignment losses."""
    if isinstance(node_loss, Node) or isinstance(edge_loss, Node):
        n = node_loss if isinstance(node_loss, Node) else constant(node_loss)
        e = edge_loss if isinstance(edge_loss, Node) else constant(edge_loss)
        return weights.lambda_node * n + weights.lambda_edge * e
    return weights.lambda_node * node_loss + weights.lambda_edge * edge_loss


def total_loss(ce, prg):
    """Overall objective: soft cross-entropy plus the graph alignment term."""
    return ce + prg


def kd_baseline_loss(student_logits: Node, teacher_logits: np.ndarray,
                     temperature: float = 4.0) -> Node:
    """Temperature-scaled KL(teacher || student), mean over the batch,
    rescaled by temperature**2."""
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    s = student_logits if isinstance(student_logits, Node) else constant(student_logits)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if t.shape != s.shape:
        raise ShapeError(f"teacher logits {t.shape} do not match student logits {s.shape}")
    b = s.shape[0]
    p_t = softmax_rows_np(t / temperature)
    # sum p log p with the p->0 convention p log p = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p_t > 0.0, p_t * np.log(p_t), 0.0)
    student_ls = log_softmax_rows(mul(s, constant(1.0 / temperature)))
    cross = sum_all(mul(constant(p_t), student_ls))
    entropy_term = float(plogp.sum())
    kl_sum = constant(entropy_term) - cross
    return kl_sum * (temperature * temperature / b)
