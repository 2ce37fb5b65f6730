"""Dense 2-D matrices with a small reverse-mode differentiation engine.

Every value the model touches is a :class:`Matrix2`.  Operations are plain
functions that return a new node holding its parents and a closure that
pushes the output gradient back to them.  ``Matrix2.backward`` walks the
graph in reverse topological order.

>>> a = Matrix2([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
>>> loss = sum_all(matmul(a, Matrix2([[5.0], [6.0]])))
>>> loss.backward()
>>> a.grad.tolist()
[[5.0, 6.0], [5.0, 6.0]]
"""

from __future__ import annotations

import contextlib
import enum
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import DeterminismError, ParameterError, ShapeError

_GRAD_ENABLED = True


class ComputeMode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Build results without recording parents (inference only)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Matrix2:
    """A dense ``rows x cols`` real matrix with an optional gradient slot."""

    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(values, dtype=dtype if dtype is not None else np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise ShapeError(f"Matrix2 needs a 2-D array, got shape {arr.shape}")
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Matrix2, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @classmethod
    def derive(cls, values: np.ndarray, parents: Sequence["Matrix2"],
               backward: Callable[[np.ndarray], None]) -> "Matrix2":
        """Wrap the result of an operation; used by op implementations."""
        out = cls.__new__(cls)
        out.values = values
        out.grad = None
        out.name = None
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values[0, 0])

    def is_finite(self) -> bool:
        ok = bool(np.isfinite(self.values).all())
        if self.grad is not None:
            ok = ok and bool(np.isfinite(self.grad).all())
        return ok

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Matrix2{label}({self.rows}x{self.cols})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.shape != (1, 1):
                raise ShapeError(f"backward() without a seed needs a 1x1 result, got {self.shape}")
            grad = np.ones((1, 1), dtype=self.values.dtype)
        order = _topological_order(self)
        for node in order:
            if node._parents:
                node.grad = None
        _accumulate(self, np.asarray(grad, dtype=self.values.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _accumulate(node: Matrix2, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    node.grad = g if node.grad is None else node.grad + g


def _topological_order(root: Matrix2) -> list[Matrix2]:
    order: list[Matrix2] = []
    seen: set[int] = set()
    stack: list[tuple[Matrix2, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_matrix(x) -> Matrix2:
    return x if isinstance(x, Matrix2) else Matrix2(x)


def detach(a: Matrix2) -> Matrix2:
    return Matrix2.derive(a.values, (), lambda g: None)


def _same_shape(op: str, a: Matrix2, b: Matrix2) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementary operations


def matmul(a: Matrix2, b: Matrix2) -> Matrix2:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.values.T)
        if b.requires_grad:
            _accumulate(b, a.values.T @ g)

    return Matrix2.derive(a.values @ b.values, (a, b), backward)


def hadamard(a: Matrix2, b: Matrix2) -> Matrix2:
    _same_shape("hadamard", a, b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * b.values)
        if b.requires_grad:
            _accumulate(b, g * a.values)

    return Matrix2.derive(a.values * b.values, (a, b), backward)


def add(a: Matrix2, b: Matrix2) -> Matrix2:
    _same_shape("add", a, b)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return Matrix2.derive(a.values + b.values, (a, b), backward)


def sub(a: Matrix2, b: Matrix2) -> Matrix2:
    _same_shape("sub", a, b)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return Matrix2.derive(a.values - b.values, (a, b), backward)


def scale(a: Matrix2, c: float) -> Matrix2:
    return Matrix2.derive(a.values * c, (a,), lambda g: _accumulate(a, g * c))


def transpose(a: Matrix2) -> Matrix2:
    return Matrix2.derive(a.values.T.copy(), (a,), lambda g: _accumulate(a, g.T))


def add_row(a: Matrix2, row: Matrix2) -> Matrix2:
    """Broadcast-add a ``1 x cols`` row to every row of ``a``."""
    if row.rows != 1 or row.cols != a.cols:
        raise ShapeError(f"add_row: row {row.shape} does not broadcast over {a.shape}")

    def backward(g):
        _accumulate(a, g)
        if row.requires_grad:
            _accumulate(row, g.sum(axis=0, keepdims=True))

    return Matrix2.derive(a.values + row.values, (a, row), backward)


def sum_all(a: Matrix2) -> Matrix2:
    def backward(g):
        _accumulate(a, np.full(a.shape, g[0, 0], dtype=a.values.dtype))

    return Matrix2.derive(np.array([[a.values.sum()]], dtype=a.values.dtype), (a,), backward)


def relu(a: Matrix2) -> Matrix2:
    # subgradient at exactly 0 is 0
    positive = a.values > 0
    return Matrix2.derive(np.maximum(a.values, 0), (a,), lambda g: _accumulate(a, g * positive))


def tile_rows(a: Matrix2, reps: int) -> Matrix2:
    """Stack ``reps`` copies of ``a`` vertically; the gradient sums the copies."""
    if reps == 1:
        return a
    r, c = a.shape

    def backward(g):
        _accumulate(a, g.reshape(reps, r, c).sum(axis=0))

    return Matrix2.derive(np.tile(a.values, (reps, 1)), (a,), backward)


def _blocks(a: Matrix2, n: int, op: str) -> np.ndarray:
    if n < 1 or a.rows % n:
        raise ShapeError(f"{op}: {a.rows} rows do not split into blocks of {n}")
    return a.values.reshape(a.rows // n, n, a.cols)


def block_matmul(a: Matrix2, b: Matrix2) -> Matrix2:
    """Multiply per-sample blocks: ``a`` stacks ``B`` square ``n x n`` blocks,
    ``b`` stacks ``B`` blocks of ``n`` rows; block ``k`` of the result is
    ``a_k @ b_k``.  This is the block-diagonal product without the zeros.
    """
    n = a.cols
    if a.rows != b.rows:
        raise ShapeError(f"block_matmul: cannot multiply blocks of {a.shape} by {b.shape}")
    ab = _blocks(a, n, "block_matmul")
    bb = _blocks(b, n, "block_matmul")

    def backward(g):
        gb = g.reshape(bb.shape)
        if a.requires_grad:
            _accumulate(a, np.matmul(gb, bb.transpose(0, 2, 1)).reshape(a.shape))
        if b.requires_grad:
            _accumulate(b, np.matmul(ab.transpose(0, 2, 1), gb).reshape(b.shape))

    return Matrix2.derive(np.matmul(ab, bb).reshape(b.rows, b.cols), (a, b), backward)


def block_gram(a: Matrix2, n: int) -> Matrix2:
    """Stacked ``a_k a_k^T`` for every block of ``n`` rows (a ``(B*n) x n`` result)."""
    ab = _blocks(a, n, "block_gram")

    def backward(g):
        gb = g.reshape(ab.shape[0], n, n)
        _accumulate(a, np.matmul(gb + gb.transpose(0, 2, 1), ab).reshape(a.shape))

    return Matrix2.derive(np.matmul(ab, ab.transpose(0, 2, 1)).reshape(a.rows, n), (a,), backward)


def frobenius_norm(a: Matrix2) -> Matrix2:
    norm = float(np.sqrt(np.sum(a.values * a.values)))

    def backward(g):
        if norm > 0.0:
            _accumulate(a, a.values * (g[0, 0] / norm))

    return Matrix2.derive(np.array([[norm]], dtype=a.values.dtype), (a,), backward)


def group_frobenius_norms(a: Matrix2, group_rows: int) -> Matrix2:
    """Frobenius norm of each consecutive block of ``group_rows`` rows (a ``B x 1`` column)."""
    if group_rows < 1 or a.rows % group_rows:
        raise ShapeError(f"group_frobenius_norms: {a.rows} rows do not split into groups of {group_rows}")
    groups = a.rows // group_rows
    blocks = a.values.reshape(groups, group_rows * a.cols)
    norms = np.sqrt(np.einsum("ij,ij->i", blocks, blocks))

    def backward(g):
        safe = np.where(norms > 0.0, norms, 1.0)
        coef = np.where(norms > 0.0, g[:, 0] / safe, 0.0)
        _accumulate(a, (blocks * coef[:, None]).reshape(a.shape))

    return Matrix2.derive(norms.reshape(groups, 1), (a,), backward)


# ---------------------------------------------------------------------------
# network layers


@dataclass
class BatchNormStats:
    """Running statistics for one batch-norm layer (per feature column)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def fresh(cls, width: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float64):
        return cls(np.zeros(width, dtype=dtype), np.ones(width, dtype=dtype), momentum, eps)


def batch_norm(a: Matrix2, gamma: Matrix2, beta: Matrix2, stats: BatchNormStats,
               mode: ComputeMode) -> Matrix2:
    """Normalize every column over the rows, then apply ``gamma * x + beta``.

    Train mode uses the batch statistics (biased variance) and folds them into
    ``stats``; Eval mode reads ``stats`` only.
    """
    width = a.cols
    if gamma.shape != (1, width) or beta.shape != (1, width):
        raise ShapeError(f"batch_norm: gamma {gamma.shape} / beta {beta.shape} vs input {a.shape}")
    x = a.values
    if mode is ComputeMode.TRAIN:
        mean = x.mean(axis=0)
        centered = x - mean
        var = (centered * centered).mean(axis=0)
        m = stats.momentum
        stats.running_mean = m * stats.running_mean + (1.0 - m) * mean
        stats.running_var = m * stats.running_var + (1.0 - m) * var
    else:
        mean = stats.running_mean
        var = stats.running_var
        centered = x - mean
    inv_std = 1.0 / np.sqrt(var + stats.eps)
    xhat = centered * inv_std
    out = xhat * gamma.values + beta.values
    rows = x.shape[0]

    def backward(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=0, keepdims=True))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=0, keepdims=True))
        if not a.requires_grad:
            return
        dxhat = g * gamma.values
        if mode is ComputeMode.TRAIN:
            dx = (inv_std / rows) * (rows * dxhat - dxhat.sum(axis=0)
                                     - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        _accumulate(a, dx)

    return Matrix2.derive(out.astype(x.dtype, copy=False), (a, gamma, beta), backward)


def dropout(a: Matrix2, p: float, mode: ComputeMode, rng: np.random.Generator | None) -> Matrix2:
    """Inverted dropout: survivors are scaled by ``1/(1-p)`` so Eval is the identity."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if mode is ComputeMode.EVAL or p == 0.0:
        return a
    if rng is None:
        raise ParameterError("dropout in Train mode needs a random generator")
    keep = (rng.random(a.shape) >= p).astype(a.values.dtype) / (1.0 - p)
    return Matrix2.derive(a.values * keep, (a,), lambda g: _accumulate(a, g * keep))


def softmax_rows(a: Matrix2) -> Matrix2:
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        _accumulate(a, s * (g - (g * s).sum(axis=1, keepdims=True)))

    return Matrix2.derive(s, (a,), backward)


def cross_entropy_rows(scores: Matrix2, labels: np.ndarray) -> Matrix2:
    """Sum over rows of ``-log softmax(scores)[row, labels[row]]`` as a 1x1 matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (scores.rows,):
        raise ShapeError(f"cross_entropy_rows: {labels.shape[0]} labels for {scores.rows} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= scores.cols):
        raise ParameterError(f"label out of range for {scores.cols} classes")
    shifted = scores.values - scores.values.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(scores.rows)
    loss = -log_p[rows, labels].sum()

    def backward(g):
        d = np.exp(log_p)
        d[rows, labels] -= 1.0
        _accumulate(scores, d * g[0, 0])

    return Matrix2.derive(np.array([[loss]], dtype=scores.values.dtype), (scores,), backward)


# ---------------------------------------------------------------------------
# verification oracle


def grad_check(loss_fn: Callable[[], Matrix2], params: Sequence[Matrix2], eps: float = 1e-6) -> float:
    """Compare reverse-mode gradients against central finite differences.

    ``loss_fn`` must rebuild the whole graph from ``params`` on every call and
    be deterministic (reseed any dropout inside it).  Parameters are promoted
    to float64 in place.  Returns the largest relative error over every entry,
    using ``max(|analytic|, |numeric|, 1e-8)`` as the denominator.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    for p in params:
        p.values = p.values.astype(np.float64)
        p.grad = None
    first = loss_fn()
    second = loss_fn()
    if first.values.tobytes() != second.values.tobytes():
        raise DeterminismError(
            f"loss_fn is not deterministic: {first.item()!r} then {second.item()!r}")
    first.backward()
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.values.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + eps
            plus = loss_fn().item()
            flat[k] = saved - eps
            minus = loss_fn().item()
            flat[k] = saved
            numeric = (plus - minus) / (2.0 * eps)
            exact = grad.reshape(-1)[k]
            denom = max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, abs(exact - numeric) / denom)
    for p in params:
        p.grad = None
    return worst
