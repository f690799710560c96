"""Relational-graph construction: integrated sample nodes, class-proxy
banks, and correlation edges.

A sample node is the concatenation of a sample's feature vector and its
raw logits (features first), so it lives in D = feature_dim + n_classes
dimensions. Class proxies live in the same space and drift toward the
mean of the nodes the teacher assigns to their class. Edges are Pearson
correlations; proxies and the teacher side never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Node, clamp_min, concat_cols, constant, mul, pcc_matrix,
                       sqrt, sub, sum_axis)
from .errors import ShapeError, ValidationError
from .validation import as_index_vector

STANDARDIZE_EPS = 1e-8


@dataclass(frozen=True)
class SampleNodeSet:
    """A batch of integrated embeddings for one side of the distillation."""

    nodes: Node
    side: str  # "teacher" | "student"

    def __post_init__(self):
        if self.side not in ("teacher", "student"):
            raise ValidationError(f"side must be 'teacher' or 'student', got {self.side!r}")

    @property
    def batch_size(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def values(self) -> np.ndarray:
        return self.nodes.value


def _standardize_rows(x: Node) -> Node:
    centered = sub(x, mul(sum_axis(x, 1), constant(1.0 / x.shape[1])))
    std = sqrt(mul(sum_axis(mul(centered, centered), 1), constant(1.0 / x.shape[1])))
    return centered / clamp_min(std, STANDARDIZE_EPS)


def build_nodes(features, logits, side: str = "student",
                standardize: bool = False) -> SampleNodeSet:
    """Concatenate feature rows with raw logit rows into sample nodes.

    ``standardize`` optionally row-standardizes each block before the
    concatenation to even out the feature-vs-logit scale gap; the default
    keeps the raw values.
    """
    f = features if isinstance(features, Node) else constant(features)
    w = logits if isinstance(logits, Node) else constant(logits)
    if f.shape[0] != w.shape[0]:
        raise ShapeError(
            f"features have {f.shape[0]} rows but logits have {w.shape[0]}")
    if standardize:
        f = _standardize_rows(f)
        w = _standardize_rows(w)
    return SampleNodeSet(nodes=concat_cols(f, w), side=side)


def feature_only_nodes(features, side: str = "student",
                       standardize: bool = False) -> SampleNodeSet:
    """Sample nodes from features alone (the logits-free ablation, D = d)."""
    f = features if isinstance(features, Node) else constant(features)
    if standardize:
        f = _standardize_rows(f)
    return SampleNodeSet(nodes=f, side=side)


@dataclass(frozen=True)
class ProxyBank:
    """One proxy vector per class, plus its update bookkeeping."""

    proxies: np.ndarray  # c x D
    alpha: float
    update_count: int
    init_seed: int

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not np.all(np.isfinite(self.proxies)):
            raise ValidationError("proxy bank contains non-finite entries")

    @property
    def n_classes(self) -> int:
        return self.proxies.shape[0]

    @property
    def dim(self) -> int:
        return self.proxies.shape[1]


def init_proxy_bank(c: int, dim: int, alpha: float, seed: int) -> ProxyBank:
    """Standard-normal c x D bank, deterministic per seed."""
    if c < 1 or dim < 1:
        raise ValidationError("bank needs at least one class and one dimension")
    rng = np.random.default_rng(seed)
    return ProxyBank(proxies=rng.standard_normal((c, dim)), alpha=alpha,
                     update_count=0, init_seed=seed)


def update_proxies(bank: ProxyBank, nodes, assignment) -> ProxyBank:
    """Pull each assigned class's proxy toward the mean of its batch nodes.

    For class i with assigned node set F_i (nonempty):
    ``P_i <- P_i + alpha * mean(f - P_i for f in F_i)``, all deltas taken
    against the pre-update proxies. Classes with no assigned samples are
    untouched.
    """
    values = nodes.values if isinstance(nodes, SampleNodeSet) else np.asarray(nodes, dtype=np.float64)
    assignment = as_index_vector(assignment, "assignment")
    if values.shape[0] != assignment.shape[0]:
        raise ShapeError(
            f"{values.shape[0]} nodes but {assignment.shape[0]} assignments")
    if values.ndim != 2 or values.shape[1] != bank.dim:
        raise ShapeError(
            f"nodes have dim {values.shape[-1]}, bank has dim {bank.dim}")
    if assignment.size and (assignment.min() < 0 or assignment.max() >= bank.n_classes):
        raise ValidationError(f"assignment classes must lie in [0, {bank.n_classes})")

    proxies = bank.proxies.copy()
    for cls in np.unique(assignment):
        members = values[assignment == cls]
        delta = members.mean(axis=0) - proxies[cls]
        proxies[cls] = proxies[cls] + bank.alpha * delta
    return ProxyBank(proxies=proxies, alpha=bank.alpha,
                     update_count=bank.update_count + 1, init_seed=bank.init_seed)


def edge_matrix(nodes: SampleNodeSet, bank: ProxyBank) -> Node:
    """b x c correlations between sample nodes and class proxies.

    Proxies enter as constants: edge-based losses never push gradient
    into the bank.
    """
    if nodes.dim != bank.dim:
        raise ShapeError(f"nodes have dim {nodes.dim}, bank has dim {bank.dim}")
    if nodes.dim < 2:
        raise ShapeError("correlation needs node dimension >= 2")
    return pcc_matrix(nodes.nodes, constant(bank.proxies))


def node_cross_correlation(teacher: SampleNodeSet, student: SampleNodeSet) -> Node:
    """b x b correlations between teacher and student sample nodes.

    Entry (i, j) correlates teacher node i with student node j; the
    teacher side is detached so gradient reaches only the student.
    """
    if teacher.batch_size != student.batch_size or teacher.dim != student.dim:
        raise ShapeError(
            f"teacher nodes {teacher.nodes.shape} and student nodes "
            f"{student.nodes.shape} must match")
    return pcc_matrix(constant(teacher.values), student.nodes)
