"""Graph convolution, the GC-BN-ReLU-dropout unit and the dense DGC block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .graph import AdjacencySpec, compose_adjacency
from .numerics import (BatchNormStats, ComputeMode, Matrix2, add, batch_norm, block_matmul,
                       dropout, matmul, relu)


def uniform_fan_in(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> Matrix2:
    bound = np.sqrt(1.0 / fan_in)
    return Matrix2(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, dtype=dtype)


@dataclass
class GcLayer:
    weight: Matrix2
    adjacency: AdjacencySpec

    @property
    def in_width(self) -> int:
        return self.weight.rows

    @property
    def out_width(self) -> int:
        return self.weight.cols


def gc_forward(layer: GcLayer, f: Matrix2) -> Matrix2:
    """``A f W`` where ``A`` is composed from ``f`` itself."""
    if f.cols != layer.weight.rows:
        raise ShapeError(f"gc_forward: features {f.shape} do not match weight {layer.weight.shape}")
    adjacency = compose_adjacency(layer.adjacency, f)
    return block_matmul(adjacency, matmul(f, layer.weight))


@dataclass
class GUnit:
    gc: GcLayer
    gamma: Matrix2
    beta: Matrix2
    stats: BatchNormStats
    dropout_p: float = 0.5

    @classmethod
    def create(cls, gc: GcLayer, dropout_p: float, bn_momentum: float = 0.9,
               bn_eps: float = 1e-5) -> "GUnit":
        width = gc.out_width
        dtype = gc.weight.values.dtype
        return cls(gc,
                   Matrix2(np.ones((1, width)), requires_grad=True, dtype=dtype),
                   Matrix2(np.zeros((1, width)), requires_grad=True, dtype=dtype),
                   BatchNormStats.fresh(width, bn_momentum, bn_eps, dtype),
                   dropout_p)


def g_forward(unit: GUnit, f: Matrix2, mode: ComputeMode,
              rng: np.random.Generator | None = None) -> Matrix2:
    h = gc_forward(unit.gc, f)
    h = batch_norm(h, unit.gamma, unit.beta, unit.stats, mode)
    return dropout(relu(h), unit.dropout_p, mode, rng)


@dataclass
class DgcBlock:
    g1: GUnit
    g2: GUnit

    @property
    def width(self) -> int:
        return self.g1.gc.in_width


def dgc_forward(block: DgcBlock, f: Matrix2, mode: ComputeMode,
                rng: np.random.Generator | None = None, dense: bool = True) -> Matrix2:
    """``g2(g1(F) + F) + (g1(F) + F) + F``; with ``dense=False`` just ``g2(g1(F))``.

    The trailing ``+ F`` is kept as written even though it repeats the
    residual already inside the middle term.
    """
    for unit in (block.g1, block.g2):
        if unit.gc.in_width != f.cols or unit.gc.out_width != f.cols:
            raise ShapeError(
                f"dgc_forward: unit weight {unit.gc.weight.shape} must be square in width {f.cols}")
    inner = g_forward(block.g1, f, mode, rng)
    if not dense:
        return g_forward(block.g2, inner, mode, rng)
    middle = add(inner, f)
    outer = g_forward(block.g2, middle, mode, rng)
    return add(add(outer, middle), f)
