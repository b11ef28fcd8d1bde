"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array and records the operation that produced it; the
tape is the implicit graph of parent links. ``backward()`` walks a
deterministic topological order (iterative depth-first over parents in
creation order), so two backward passes over the same graph produce
bit-identical gradients.

Only the operations the classifier needs are implemented. Shapes are checked
strictly; broadcasting is limited to the dedicated ``add_bias`` op so that
gradient rules stay obvious.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, EvaluationError


class Tensor:
    """Dense float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not (self.requires_grad or self._parents):
            return  # constant leaf: gradient is never read
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed: float = 1.0) -> None:
        """Accumulate dL/dp into ``.grad`` of every reachable tensor.

        ``seed`` scales the root gradient; summing per-sample losses with
        seed 1/B is equivalent to differentiating their mean.
        """
        if self.data.ndim != 0:
            raise DimensionError(
                f"backward() needs a scalar root, got shape {self.data.shape}"
            )
        order = _toposort(self)
        for node in order:
            node.grad = None
        self.grad = np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; constants must already be wrapped in Tensor.
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative post-order over parent links; deterministic for a fixed graph."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    # requires_grad propagates transitively, so this records exactly the
    # subgraphs that touch a trainable parameter.
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: shapes {a.data.shape} and {b.data.shape} do not chain"
        )
    out_data = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _make(out_data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def backward(g: np.ndarray) -> None:
        a._accumulate(g)
        b._accumulate(g)

    return _make(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    _require_same_shape(a, b, "mul")

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _make(a.data * b.data, (a, b), backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-d bias row to every row of an (n, d) matrix."""
    if x.data.ndim != 2 or b.data.shape != (x.data.shape[1],):
        raise DimensionError(
            f"add_bias: matrix {x.data.shape} incompatible with bias {b.data.shape}"
        )

    def backward(g: np.ndarray) -> None:
        x._accumulate(g)
        b._accumulate(g.sum(axis=0))

    return _make(x.data + b.data, (x, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * c)

    return _make(x.data * c, (x,), backward)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose: needs a matrix, got shape {x.data.shape}")

    def backward(g: np.ndarray) -> None:
        x._accumulate(g.T)

    return _make(np.ascontiguousarray(x.data.T), (x,), backward)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two (n, *) matrices along the feature axis."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise DimensionError(
            f"concat_cols: shapes {a.data.shape} and {b.data.shape} do not align"
        )
    split = a.data.shape[1]

    def backward(g: np.ndarray) -> None:
        a._accumulate(g[:, :split])
        b._accumulate(g[:, split:])

    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    mask = np.where(x.data > 0.0, 1.0, slope)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * mask)

    return _make(x.data * mask, (x,), backward)


def softmax(x: Tensor, axis: int) -> Tensor:
    """Max-stabilized softmax along one axis; output sums to 1 there."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        inner = (g * y).sum(axis=axis, keepdims=True)
        x._accumulate(y * (g - inner))

    return _make(y, (x,), backward)


def log_softmax(x: Tensor, axis: int) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def backward(g: np.ndarray) -> None:
        x._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _make(y, (x,), backward)


def reciprocal(x: Tensor) -> Tensor:
    y = 1.0 / x.data

    def backward(g: np.ndarray) -> None:
        x._accumulate(-g * y * y)

    return _make(y, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    shape = x.data.shape

    def backward(g: np.ndarray) -> None:
        x._accumulate(np.full(shape, float(g)))

    return _make(np.asarray(x.data.sum()), (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


def mix(theta: Tensor, mats: Tensor) -> Tensor:
    """Weighted sum of a stack of matrices: out = sum_k theta[k] * mats[k]."""
    if theta.data.ndim != 1 or mats.data.ndim != 3 \
            or theta.data.shape[0] != mats.data.shape[0]:
        raise DimensionError(
            f"mix: weights {theta.data.shape} incompatible with stack {mats.data.shape}"
        )
    out_data = np.einsum("k,kij->ij", theta.data, mats.data)

    def backward(g: np.ndarray) -> None:
        theta._accumulate(np.einsum("ij,kij->k", g, mats.data))
        mats._accumulate(theta.data[:, None, None] * g[None, :, :])

    return _make(out_data, (theta, mats), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer class labels, stable."""
    labels = np.asarray(labels)
    n, n_classes = logits.data.shape
    if labels.shape != (n,):
        raise DimensionError(
            f"cross_entropy: logits {logits.data.shape} vs labels {labels.shape}"
        )
    if labels.min() < 0 or labels.max() >= n_classes:
        raise EvaluationError(
            f"cross_entropy: labels outside [0, {n_classes})"
        )
    ls = log_softmax(logits, axis=1)
    mask = np.zeros((n, n_classes))
    mask[np.arange(n), labels] = -1.0 / n
    return sum_all(mul(ls, Tensor(mask)))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[], Tensor],
               params: Sequence[Tensor] | Iterable[Tensor],
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` re-evaluates the scalar loss from the current parameter values. The
    relative error for one component is |analytic - numeric| divided by
    max(1, |analytic|, |numeric|).
    """
    params = list(params)
    loss = f()
    if not np.isfinite(loss.data):
        raise EvaluationError("grad_check: loss is not finite")
    for p in params:
        p.zero_grad()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = float(f().data)
            flat[idx] = orig - eps
            down = float(f().data)
            flat[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise EvaluationError("grad_check: perturbed loss is not finite")
            numeric = (up - down) / (2.0 * eps)
            a = ana.reshape(-1)[idx]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if rel > worst:
                worst = rel
    return worst
