"""Dense 64-bit matrices with reverse-mode differentiation.

Every quantity on the training path is a 2-D float64 numpy array wrapped
in a :class:`Node`. Building an expression records the computation graph;
``backward()`` on a 1x1 result walks it once in reverse topological order
and accumulates gradients into every node created with ``needs_grad``.
Nodes wrapping teacher-side quantities are created as constants and never
receive gradient, which is how "teacher side does not backpropagate" is
enforced structurally.

One graph is built per training step and consumed by a single backward
pass; reusing a consumed graph raises :class:`~prgdistill.errors.StateError`.

Storage is always float64 so central finite differences (``h=1e-6``) can
resolve gradient bugs well below the 1e-5 acceptance threshold.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, StateError

PCC_EPS = 1e-8


def _as_value(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"node values must be 2-D matrices, got ndim={arr.ndim}")
    return arr


class Node:
    """One value in the computation graph.

    ``value`` and ``grad`` always share the same 2-D shape. ``_backprop``
    pushes ``self.grad`` into the parents; it is ``None`` for leaves and
    constants.
    """

    __slots__ = ("value", "grad", "needs_grad", "_parents", "_backprop", "_consumed")

    def __init__(self, value, parents: Sequence["Node"] = (), backprop=None,
                 needs_grad: bool | None = None):
        self.value = _as_value(value)
        self.grad = np.zeros_like(self.value)
        self._parents = tuple(parents)
        self._backprop = backprop
        self._consumed = False
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in self._parents)
        self.needs_grad = needs_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a 1x1 node, got shape {self.shape}")
        return float(self.value[0, 0])

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable gradient-carrying leaf.

        ``self`` must be 1x1. Each node in the graph is visited exactly once.
        """
        if self.shape != (1, 1):
            raise ShapeError(f"backward() requires a scalar (1x1) node, got {self.shape}")
        order = _toposort(self)
        self.grad = np.ones((1, 1))
        for node in order:
            if node._backprop is not None:
                node._backprop()
            if node._parents:
                # leaves stay reusable in fresh graphs; op nodes are spent
                node._consumed = True

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, constant(-1.0))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    @property
    def T(self) -> "Node":
        return transpose(self)

    def __repr__(self):
        tag = "leaf" if (self.needs_grad and not self._parents) else (
            "op" if self._parents else "const")
        return f"Node({tag}, shape={self.shape})"


def _toposort(root: Node) -> list[Node]:
    """Reverse topological order from root, visiting each node once."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._consumed:
            raise StateError("graph already consumed by a previous backward()")
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.needs_grad:
                stack.append((parent, False))
    order.reverse()
    return order


def leaf(value) -> Node:
    """A gradient-carrying input (a trainable parameter)."""
    return Node(value, needs_grad=True)


def constant(value) -> Node:
    """A fixed input; gradient never flows into it."""
    return Node(value, needs_grad=False)


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after a numpy broadcast."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and out.shape[0] > 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] > 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _broadcastable(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return all(x == y or x == 1 or y == 1 for x, y in zip(a, b))


def _elementwise(a: Node, b: Node, op_name: str) -> None:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"{op_name}: shapes {a.shape} and {b.shape} do not broadcast")


# -- primitives ----------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    _elementwise(a, b, "add")
    out = Node(a.value + b.value, (a, b))

    def backprop():
        if a.needs_grad:
            a.grad += _unbroadcast(out.grad, a.shape)
        if b.needs_grad:
            b.grad += _unbroadcast(out.grad, b.shape)

    out._backprop = backprop
    return out


def sub(a: Node, b: Node) -> Node:
    _elementwise(a, b, "sub")
    out = Node(a.value - b.value, (a, b))

    def backprop():
        if a.needs_grad:
            a.grad += _unbroadcast(out.grad, a.shape)
        if b.needs_grad:
            b.grad -= _unbroadcast(out.grad, b.shape)

    out._backprop = backprop
    return out


def mul(a: Node, b: Node) -> Node:
    _elementwise(a, b, "mul")
    out = Node(a.value * b.value, (a, b))

    def backprop():
        if a.needs_grad:
            a.grad += _unbroadcast(out.grad * b.value, a.shape)
        if b.needs_grad:
            b.grad += _unbroadcast(out.grad * a.value, b.shape)

    out._backprop = backprop
    return out


def div(a: Node, b: Node) -> Node:
    _elementwise(a, b, "div")
    out = Node(a.value / b.value, (a, b))

    def backprop():
        if a.needs_grad:
            a.grad += _unbroadcast(out.grad / b.value, a.shape)
        if b.needs_grad:
            b.grad -= _unbroadcast(out.grad * a.value / (b.value * b.value), b.shape)

    out._backprop = backprop
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    out = Node(a.value @ b.value, (a, b))

    def backprop():
        if a.needs_grad:
            a.grad += out.grad @ b.value.T
        if b.needs_grad:
            b.grad += a.value.T @ out.grad

    out._backprop = backprop
    return out


def transpose(a: Node) -> Node:
    out = Node(a.value.T, (a,))

    def backprop():
        if a.needs_grad:
            a.grad += out.grad.T

    out._backprop = backprop
    return out


def relu(a: Node) -> Node:
    out = Node(np.maximum(a.value, 0.0), (a,))

    def backprop():
        if a.needs_grad:
            a.grad += out.grad * (a.value > 0.0)

    out._backprop = backprop
    return out


def exp(a: Node) -> Node:
    out = Node(np.exp(a.value), (a,))

    def backprop():
        if a.needs_grad:
            a.grad += out.grad * out.value

    out._backprop = backprop
    return out


def log(a: Node) -> Node:
    out = Node(np.log(a.value), (a,))

    def backprop():
        if a.needs_grad:
            a.grad += out.grad / a.value

    out._backprop = backprop
    return out


def sqrt(a: Node) -> Node:
    out = Node(np.sqrt(a.value), (a,))

    def backprop():
        if a.needs_grad:
            # 0/0 at (value=0, grad=0) is defined as 0: a clamped branch
            # upstream has already cut gradient flow there.
            with np.errstate(divide="ignore", invalid="ignore"):
                d = 0.5 * out.grad / out.value
            if not np.all(np.isfinite(d)):
                d = np.where(out.grad == 0.0, 0.0, d)
            a.grad += d

    out._backprop = backprop
    return out


def square(a: Node) -> Node:
    return mul(a, a)


def clamp_min(a: Node, floor: float) -> Node:
    out = Node(np.maximum(a.value, floor), (a,))

    def backprop():
        if a.needs_grad:
            a.grad += out.grad * (a.value > floor)

    out._backprop = backprop
    return out


def sum_all(a: Node) -> Node:
    out = Node(np.array([[a.value.sum()]]), (a,))

    def backprop():
        if a.needs_grad:
            a.grad += out.grad  # (1,1) broadcasts over the full shape

    out._backprop = backprop
    return out


def sum_axis(a: Node, axis: int) -> Node:
    out = Node(a.value.sum(axis=axis, keepdims=True), (a,))

    def backprop():
        if a.needs_grad:
            a.grad += out.grad  # broadcasts back along the reduced axis

    out._backprop = backprop
    return out


def mean_all(a: Node) -> Node:
    return mul(sum_all(a), constant(1.0 / a.value.size))


def concat_cols(a: Node, b: Node) -> Node:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    out = Node(np.concatenate([a.value, b.value], axis=1), (a, b))
    split = a.shape[1]

    def backprop():
        if a.needs_grad:
            a.grad += out.grad[:, :split]
        if b.needs_grad:
            b.grad += out.grad[:, split:]

    out._backprop = backprop
    return out


def softmax_rows(a: Node) -> Node:
    """Row softmax with max-shift stabilization."""
    out = Node(softmax_rows_np(a.value), (a,))

    def backprop():
        if a.needs_grad:
            s = out.value
            gs = out.grad * s
            a.grad += gs - s * gs.sum(axis=1, keepdims=True)

    out._backprop = backprop
    return out


def log_softmax_rows(a: Node) -> Node:
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    ls = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = Node(ls, (a,))

    def backprop():
        if a.needs_grad:
            s = np.exp(out.value)
            a.grad += out.grad - s * out.grad.sum(axis=1, keepdims=True)

    out._backprop = backprop
    return out


# -- composites ------------------------------------------------------------

def center_rows(a: Node) -> Node:
    return sub(a, mul(sum_axis(a, 1), constant(1.0 / a.shape[1])))


def pcc_matrix(a: Node | np.ndarray, b: Node | np.ndarray, eps: float = PCC_EPS) -> Node:
    """Pairwise Pearson correlation between the rows of two matrices.

    Entry (i, j) correlates row i of ``a`` with row j of ``b``. The
    denominator is clamped at ``eps``, so a constant row (zero variance)
    correlates 0 with everything and contributes no gradient.
    """
    a = _wrap(a)
    b = _wrap(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"pcc_matrix: column counts differ, {a.shape} vs {b.shape}")
    if a.shape[1] < 2:
        raise ShapeError("pcc_matrix: rows must have at least 2 entries")
    ac = center_rows(a)
    bc = center_rows(b)
    num = matmul(ac, transpose(bc))
    na = sqrt(sum_axis(mul(ac, ac), 1))
    nb = sqrt(sum_axis(mul(bc, bc), 1))
    denom = clamp_min(matmul(na, transpose(nb)), eps)
    return div(num, denom)


def frobenius_norm(a: Node) -> Node:
    return sqrt(sum_all(mul(a, a)))


# -- plain-numpy counterparts (teacher path, evaluation, oracles) ----------

def softmax_rows_np(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def pcc_matrix_np(a: np.ndarray, b: np.ndarray, eps: float = PCC_EPS) -> np.ndarray:
    return pcc_matrix(constant(a), constant(b), eps=eps).value


def pcc(x, y, eps: float = PCC_EPS) -> float:
    """Pearson correlation of two vectors of length >= 2.

    Returns 0.0 when either vector is constant.
    """
    xv = np.asarray(x, dtype=np.float64).reshape(1, -1)
    yv = np.asarray(y, dtype=np.float64).reshape(1, -1)
    if xv.shape[1] != yv.shape[1]:
        raise ShapeError(f"pcc: lengths differ, {xv.shape[1]} vs {yv.shape[1]}")
    if xv.shape[1] < 2:
        raise ShapeError("pcc: vectors must have at least 2 entries")
    return float(pcc_matrix_np(xv, yv, eps=eps)[0, 0])


# -- gradient verification --------------------------------------------------

def finite_diff_gradcheck(f: Callable[[Node], Node], x: np.ndarray,
                          h: float = 1e-6) -> float:
    """Compare the reverse-mode gradient of ``f`` at ``x`` to central differences.

    Returns ``max_i |g_ad[i] - g_fd[i]| / max(1, |g_fd[i]|)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)  # private copy: perturbed in place below
    probe = leaf(x.copy())
    out = f(probe)
    if not isinstance(out, Node):
        raise TypeError("f must return a Node")
    if not np.isfinite(out.value).all():
        raise NumericError("f produced a non-finite value at x")
    out.backward()
    g_ad = probe.grad.reshape(x.shape).copy()

    g_fd = np.zeros_like(x)
    flat = x.ravel()
    fd_flat = g_fd.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(constant(x)).item()
        flat[i] = orig - h
        fm = f(constant(x)).item()
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"f produced a non-finite value near entry {i}")
        fd_flat[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(1.0, np.abs(g_fd))
    return float((np.abs(g_ad - g_fd) / denom).max())
