"""Adjacency construction over progress-level nodes.

An adjacency is the entrywise product of a fixed binary mask, a learnable
matrix and a cosine-similarity matrix recomputed from the layer input.
Batches are stacked row-wise (``B*N`` rows).  A batched adjacency is the
block-diagonal matrix of the per-sample ones, stored without its zero
blocks as a ``(B*N) x N`` stack so samples never exchange information.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .numerics import Matrix2, _accumulate, hadamard, tile_rows

ZERO_NORM = 1e-12


class MaskKind(enum.Enum):
    TEACHER_BIDIRECTIONAL = "TeacherBidirectional"
    STUDENT_CAUSAL = "StudentCausal"
    DIAGONAL = "Diagonal"


def make_mask(kind: MaskKind, n: int, dtype=np.float64) -> Matrix2:
    """``n x n`` binary mask: all ones, lower-triangular (``i >= j``) or identity."""
    if n < 1:
        raise ParameterError(f"mask size must be >= 1, got {n}")
    if kind is MaskKind.TEACHER_BIDIRECTIONAL:
        m = np.ones((n, n), dtype=dtype)
    elif kind is MaskKind.STUDENT_CAUSAL:
        m = np.tril(np.ones((n, n), dtype=dtype))
    elif kind is MaskKind.DIAGONAL:
        m = np.eye(n, dtype=dtype)
    else:
        raise ParameterError(f"unknown mask kind {kind!r}")
    return Matrix2(m, dtype=dtype)


def cosine_similarity_matrix(f: Matrix2, group: int | None = None,
                             stop_gradient: bool = False) -> Matrix2:
    """Pairwise cosine similarity of the rows of ``f``.

    With ``group`` set, ``f`` is a stack of ``group``-row samples and the
    result stacks one ``group x group`` similarity block per sample.  Rows
    with norm below ``ZERO_NORM`` get similarity 0 with everything,
    including themselves; every other diagonal entry is exactly 1.
    """
    if f.rows < 1 or f.cols < 1:
        raise ShapeError(f"cosine_similarity_matrix needs a non-empty matrix, got {f.shape}")
    n = f.rows if group is None else group
    if n < 1 or f.rows % n:
        raise ShapeError(f"{f.rows} feature rows do not split into groups of {n}")
    x = f.values.reshape(-1, n, f.cols)
    norms = np.sqrt(np.einsum("bij,bij->bi", x, x))
    live = norms >= ZERO_NORM
    inv = np.where(live, 1.0 / np.where(live, norms, 1.0), 0.0).astype(x.dtype, copy=False)
    unit = x * inv[..., None]
    s = np.matmul(unit, unit.transpose(0, 2, 1))
    diag = np.arange(n)
    s[:, diag, diag] = live
    out = s.reshape(f.rows, n)
    if stop_gradient:
        return Matrix2(out, dtype=x.dtype)

    def backward(g):
        gb = g.reshape(s.shape)
        d_unit = np.matmul(gb + gb.transpose(0, 2, 1), unit)
        radial = np.einsum("bij,bij->bi", d_unit, unit)
        _accumulate(f, ((d_unit - radial[..., None] * unit) * inv[..., None]).reshape(f.shape))

    return Matrix2.derive(out, (f,), backward)


@dataclass
class AdjacencySpec:
    """Mask, learnable weights and mask kind for one graph-convolution layer."""

    kind: MaskKind
    mask: Matrix2
    learnable: Matrix2
    stop_similarity_gradient: bool = False

    @classmethod
    def create(cls, kind: MaskKind, n: int, rng: np.random.Generator | None = None,
               dtype=np.float64, stop_similarity_gradient: bool = False,
               learnable: Matrix2 | None = None) -> "AdjacencySpec":
        """Fresh spec; the learnable matrix starts at ones plus U(-0.01, 0.01) noise."""
        if learnable is None:
            noise = rng.uniform(-0.01, 0.01, size=(n, n)) if rng is not None else 0.0
            learnable = Matrix2(np.ones((n, n)) + noise, requires_grad=True, dtype=dtype)
        elif learnable.shape != (n, n):
            raise ShapeError(f"learnable adjacency {learnable.shape} does not match n={n}")
        return cls(kind, make_mask(kind, n, dtype), learnable, stop_similarity_gradient)

    @property
    def n(self) -> int:
        return self.mask.rows


def compose_adjacency(spec: AdjacencySpec, f: Matrix2) -> Matrix2:
    """``mask * learnable * cosine(f)`` for one sample or a stacked batch.

    ``f`` holds ``B*N`` rows; the result stacks the ``B`` per-sample
    ``N x N`` adjacencies into a ``(B*N) x N`` matrix (use
    :func:`block_matmul` to apply it).
    """
    n = spec.n
    if spec.learnable.shape != (n, n):
        raise ShapeError(f"learnable {spec.learnable.shape} does not match mask {spec.mask.shape}")
    if f.rows == 0 or f.rows % n:
        raise ShapeError(f"feature rows {f.rows} are not a multiple of the graph size {n}")
    batch = f.rows // n
    sim = cosine_similarity_matrix(f, n, stop_gradient=spec.stop_similarity_gradient)
    weights = hadamard(spec.mask, spec.learnable)
    return hadamard(tile_rows(weights, batch), sim)
