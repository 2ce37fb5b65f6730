"""SGD with momentum, the step learning-rate schedule and the epoch loop.

Randomness comes from one seed split into three named streams, consumed in
this order: ``init`` (parameter initialization, drawn by the caller through
:func:`rng_streams`), ``shuffle`` (one permutation per epoch) and ``dropout``
(masks for every training step, teacher before student).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .checkpoint import decode_checkpoint, encode_checkpoint
from .data import Dataset
from .errors import ParameterError, ShapeError, TrainingAborted
from .evaluation import evaluate
from .loss import LossFlags, total_loss
from .model import AscNet, forward
from .numerics import ComputeMode, Matrix2

STREAMS = ("init", "shuffle", "dropout")
LOG_FIELDS = ("epoch", "lr", "l_mse", "l_mmd", "l_ct", "l_cs", "total", "eval_auc")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr_init: float = 1e-4
    lr_decay: float = 0.95
    lr_milestones: tuple[int, ...] = (100, 150, 250, 350)
    momentum: float = 0.9
    seed: int = 0
    eval_every: int = 10

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ParameterError(f"eval_every must be >= 1, got {self.eval_every}")
        if any(b <= a for a, b in zip(self.lr_milestones, self.lr_milestones[1:])):
            raise ParameterError(f"lr_milestones must be strictly increasing: {self.lr_milestones}")
        if self.lr_init <= 0 or not 0 < self.lr_decay <= 1 or not 0 <= self.momentum < 1:
            raise ParameterError("need lr_init > 0, 0 < lr_decay <= 1 and 0 <= momentum < 1")
        return self


def lr_at(epoch: int, config: TrainConfig = TrainConfig()) -> float:
    """``lr_init * lr_decay ** k`` with ``k`` the number of milestones ``<= epoch``."""
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    passed = sum(1 for m in config.lr_milestones if m <= epoch)
    return config.lr_init * config.lr_decay ** passed


@dataclass
class OptimizerState:
    lr: float
    momentum: float
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params: dict[str, Matrix2], state: OptimizerState) -> None:
    """Heavy-ball update in place: ``v = momentum * v + g``; ``p -= lr * v``.

    Parameters without a gradient are treated as having gradient zero.
    """
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.values)
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.values)
        elif v.shape != p.shape:
            raise ShapeError(f"{name}: velocity {v.shape} vs parameter {p.shape}")
        v = state.momentum * v + g
        state.velocity[name] = v
        p.values = p.values - state.lr * v


@dataclass
class LogRow:
    epoch: int
    lr: float
    l_mse: float
    l_mmd: float
    l_ct: float
    l_cs: float
    total: float
    eval_auc: float | None = None


@dataclass
class TrainResult:
    net: AscNet
    best_checkpoint: bytes
    best_epoch: int | None
    best_auc: float | None
    log: list[LogRow]

    def best_net(self) -> AscNet:
        return decode_checkpoint(self.best_checkpoint)[0]


def train(net: AscNet, dataset: Dataset, config: TrainConfig = TrainConfig(),
          flags: LossFlags = LossFlags(), test_set: Dataset | None = None,
          on_epoch: Callable[[LogRow], None] | None = None) -> TrainResult:
    """Train ``net`` in place and keep the checkpoint with the best test AUC.

    The test split is evaluated every ``eval_every`` epochs and after the
    last one; without a test split the final state is returned as best.
    """
    config.validate()
    if len(dataset) == 0:
        raise ParameterError("training set is empty")
    if dataset.feat_dim != net.config.feat_dim or dataset.n_levels != net.config.n_levels \
            or dataset.n_classes != net.config.n_classes:
        raise ShapeError(
            f"dataset (N={dataset.n_levels}, D={dataset.feat_dim}, C={dataset.n_classes}) does not "
            f"match model (N={net.config.n_levels}, D={net.config.feat_dim}, C={net.config.n_classes})")
    streams = rng_streams(config.seed)
    shuffle_rng, dropout_rng = streams["shuffle"], streams["dropout"]
    params = net.parameters()
    state = OptimizerState(config.lr_init, config.momentum)
    best = encode_checkpoint(net, state.velocity)
    best_epoch = best_auc = None
    log: list[LogRow] = []
    step = 0
    for epoch in range(config.epochs):
        state.lr = lr_at(epoch, config)
        order = shuffle_rng.permutation(len(dataset))
        sums = np.zeros(5)
        batches = 0
        for start in range(0, len(order), config.batch_size):
            x, y = dataset.batch(order[start:start + config.batch_size])
            trace = forward(net, x, ComputeMode.TRAIN, dropout_rng)
            report = total_loss(trace, y, flags)
            for name, value in report.components().items():
                if not math.isfinite(value):
                    raise TrainingAborted(name, step, value)
            net.zero_grad()
            report.node.backward()
            sgd_step(params, state)
            sums += list(report.components().values())
            batches += 1
            step += 1
        for name, p in params.items():
            if not np.isfinite(p.values).all():
                raise TrainingAborted(f"parameter {name}", step, float("nan"))
        row = LogRow(epoch, state.lr, *(sums / batches))
        last = epoch == config.epochs - 1
        if test_set is not None and ((epoch + 1) % config.eval_every == 0 or last):
            row.eval_auc = evaluate(net, test_set).auc
            if best_auc is None or row.eval_auc > best_auc:
                best_auc, best_epoch = row.eval_auc, epoch
                best = encode_checkpoint(net, state.velocity)
        elif test_set is None and last:
            best, best_epoch = encode_checkpoint(net, state.velocity), epoch
        log.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return TrainResult(net, best, best_epoch, best_auc, log)


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def log_to_csv(log: list[LogRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_FIELDS)
    for row in log:
        writer.writerow([row.epoch, _fmt(row.lr), _fmt(row.l_mse), _fmt(row.l_mmd), _fmt(row.l_ct),
                         _fmt(row.l_cs), _fmt(row.total), _fmt(row.eval_auc)])
    return buf.getvalue()
