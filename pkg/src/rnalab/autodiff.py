"""Small reverse-mode autodiff engine over dense float64 arrays.

Every op returns a new :class:`Tensor` that remembers its inputs and a
closure mapping the upstream gradient to one gradient per input. Tensors get
a monotonically increasing id at creation, so inputs always carry smaller ids
than outputs and reverse id order is a valid topological order for the
backward sweep.

Broadcasting is deliberately limited to scalar-with-tensor; every other op
insists on exact shapes.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyBatchError, LabelError, RankError, ShapeError

EPS = 1e-12

_ids = itertools.count()


class Tensor:
    """Dense array with an optional gradient slot.

    ``values`` is always a C-contiguous float64 ndarray; ``grad`` is either
    ``None`` or an array of the same shape.
    """

    __slots__ = ("values", "requires_grad", "grad", "op", "_parents", "_backward", "_id", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        # np.ascontiguousarray would promote 0-d scalars to shape (1,)
        self.values = np.asarray(values, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.values.size != 1:
            raise RankError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.values, requires_grad=False)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # operator sugar; all of these route through the named ops below
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return subtract(self, _wrap(other))

    def __rsub__(self, other):
        return subtract(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_multiply(self, other)
        return multiply(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        return divide(self, _wrap(other))

    def __neg__(self):
        return scalar_multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(values, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=requires_grad, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    out = Tensor(values)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _same_or_scalar(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.values.ndim != 0 and b.values.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unbroadcast(grad: np.ndarray, like: Tensor) -> np.ndarray:
    if like.values.ndim == 0 and grad.ndim != 0:
        return np.asarray(grad.sum())
    return grad


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_or_scalar(a, b, "add")
    return _make(
        a.values + b.values, (a, b), "add",
        lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
    )


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _same_or_scalar(a, b, "subtract")
    return _make(
        a.values - b.values, (a, b), "subtract",
        lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)),
    )


def multiply(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product (scalar operands broadcast)."""
    _same_or_scalar(a, b, "multiply")
    av, bv = a.values, b.values
    return _make(
        av * bv, (a, b), "multiply",
        lambda g: (_unbroadcast(g * bv, a), _unbroadcast(g * av, b)),
    )


def scalar_multiply(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.values * c, (x,), "scalar_multiply", lambda g: (g * c,))


def square(x: Tensor) -> Tensor:
    xv = x.values
    return _make(xv * xv, (x,), "square", lambda g: (2.0 * xv * g,))


def _guard(den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    small = np.abs(den) < EPS
    safe = np.where(small, np.where(den < 0, -EPS, EPS), den)
    return safe, small


def divide(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise ``a / b`` with denominators clamped to magnitude >= 1e-12.

    Inside the clamped region the denominator is a constant, so its gradient
    is zero there.
    """
    _same_or_scalar(a, b, "divide")
    safe, small = _guard(b.values)
    av = a.values
    out = av / safe

    def back(g):
        ga = g / safe
        gb = np.where(small, 0.0, -g * av / (safe * safe))
        return _unbroadcast(ga, a), _unbroadcast(gb, b)

    return _make(out, (a, b), "divide", back)


divide_scalars = divide


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return _make(np.where(mask, x.values, 0.0), (x,), "relu", lambda g: (g * mask,))


def grad_reverse(x: Tensor, weight: float) -> Tensor:
    """Identity forward; multiplies the incoming gradient by ``-weight``."""
    w = float(weight)
    return _make(x.values.copy(), (x,), "grad_reverse", lambda g: (-w * g,))


# ---------------------------------------------------------------- reductions


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _make(
        np.asarray(x.values.sum()), (x,), "sum",
        lambda g: (np.full(shape, float(g)),),
    )


def mean(x: Tensor) -> Tensor:
    n = x.size
    if n == 0:
        raise EmptyBatchError("mean of an empty tensor")
    shape = x.shape
    return _make(
        np.asarray(x.values.sum() / n), (x,), "mean",
        lambda g: (np.full(shape, float(g) / n),),
    )


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: needs equal-length vectors, got {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    return _make(
        np.asarray(av @ bv), (a, b), "dot",
        lambda g: (float(g) * bv, float(g) * av),
    )


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row inner products of two ``n x d`` tensors."""
    if a.values.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"row_dot: shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    return _make(
        np.einsum("ij,ij->i", av, bv), (a, b), "row_dot",
        lambda g: (g[:, None] * bv, g[:, None] * av),
    )


def row_l2_norm(x: Tensor) -> Tensor:
    if x.values.ndim != 2:
        raise ShapeError(f"row_l2_norm: expected a 2-D tensor, got shape {x.shape}")
    xv = x.values
    norms = np.sqrt(np.einsum("ij,ij->i", xv, xv))

    def back(g):
        return (g[:, None] * xv / np.maximum(norms, EPS)[:, None],)

    return _make(norms, (x,), "row_l2_norm", back)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values
    return _make(av @ bv, (a, b), "matmul", lambda g: (g @ bv.T, av.T @ g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add the vector ``b`` (length d) to every row of ``x`` (n x d)."""
    if x.values.ndim != 2 or b.values.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: cannot add {b.shape} to rows of {x.shape}")
    return _make(x.values + b.values, (x, b), "add_bias", lambda g: (g, g.sum(axis=0)))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors vertically."""
    if not parts:
        raise EmptyBatchError("concat_rows of nothing")
    width = parts[0].shape[1:]
    for p in parts:
        if p.values.ndim != 2 or p.shape[1:] != width:
            raise ShapeError(f"concat_rows: incompatible shapes {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.values for p in parts], axis=0), tuple(parts), "concat_rows", back)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Join 2-D tensors with equal row counts side by side."""
    if not parts:
        raise EmptyBatchError("concat_cols of nothing")
    n = parts[0].shape[0]
    for p in parts:
        if p.values.ndim != 2 or p.shape[0] != n:
            raise ShapeError(f"concat_cols: incompatible shapes {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.values for p in parts], axis=1), tuple(parts), "concat_cols", back)


# ---------------------------------------------------------------- losses


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    if logits.values.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be n x C, got {logits.shape}")
    n, c = logits.shape
    if n == 0:
        raise EmptyBatchError("cross-entropy over an empty batch")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: {y.shape[0] if y.ndim else 0} labels for {n} rows")
    if y.min() < 0 or y.max() >= c:
        raise LabelError(f"labels must lie in [0, {c}), got range [{y.min()}, {y.max()}]")
    z = logits.values - logits.values.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = (logsumexp - z[rows, y]).sum() / n

    def back(g):
        p = np.exp(z - logsumexp[:, None])
        p[rows, y] -= 1.0
        return (p * (float(g) / n),)

    return _make(np.asarray(loss), (logits,), "softmax_cross_entropy", back)


# ---------------------------------------------------------------- backward


def _graph(root: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen:
            continue
        seen[node._id] = node
        stack.extend(node._parents)
    return [seen[k] for k in sorted(seen, reverse=True)]


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every requires_grad leaf.

    Gradients add onto whatever is already stored, so call ``zero_grad`` (or
    let the optimizer clear them) between independent passes.
    """
    if root.size != 1:
        raise RankError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    pending: dict[int, np.ndarray] = {root._id: np.ones(root.shape)}
    for node in _graph(root):
        g = pending.pop(node._id, None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            if parent._id in pending:
                pending[parent._id] = pending[parent._id] + pg
            else:
                pending[parent._id] = pg
