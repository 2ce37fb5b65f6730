"""Finite-difference check of the complete objective on a tiny network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loss import LossFlags, total_loss
from .model import AscNet, ModelConfig, build, forward
from .numerics import ComputeMode, grad_check

TINY = ModelConfig(n_levels=4, feat_dim=8, hidden=6, n_classes=3, precision="float64")
TOLERANCE = 1e-4


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_params: int
    n_entries: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def tiny_loss_fn(net: AscNet, x: np.ndarray, labels: np.ndarray, dropout_seed: int,
                 flags: LossFlags = LossFlags()):
    """Closure computing the total loss in Train mode with the same dropout masks every call."""

    def loss():
        trace = forward(net, x, ComputeMode.TRAIN, np.random.default_rng(dropout_seed))
        return total_loss(trace, labels, flags).node

    return loss


def run_gradcheck(seed: int = 0, batch: int = 3, eps: float = 1e-6,
                  config: ModelConfig = TINY) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    net = build(config, rng)
    x = rng.standard_normal((batch * config.n_levels, config.feat_dim))
    labels = rng.integers(0, config.n_classes, size=batch)
    params = list(net.parameters().values())
    err = grad_check(tiny_loss_fn(net, x, labels, dropout_seed=seed + 1), params, eps)
    return GradCheckResult(err, len(params), sum(p.values.size for p in params))
