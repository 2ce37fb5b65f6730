"""Distillation and classification objective.

Every component is computed per sample and averaged over the batch:

* ``l_mse``: sum over distilled layers of ``||F_s - F_t||_F``
* ``l_mmd``: sum over distilled layers of ``||F_s F_s^T - F_t F_t^T||_F``
* ``l_ct`` / ``l_cs``: cross-entropy of every progress-level row against the
  video label, summed over the rows, for teacher / student.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError
from .model import ForwardTrace
from .numerics import (Matrix2, add, block_gram, cross_entropy_rows, detach,
                       group_frobenius_norms, scale, sub, sum_all)


@dataclass(frozen=True)
class LossFlags:
    use_mse: bool = True
    use_mmd: bool = True
    detach_teacher_in_distill: bool = False

    @property
    def use_distill(self) -> bool:
        return self.use_mse or self.use_mmd


@dataclass
class LossReport:
    l_mse: float
    l_mmd: float
    l_ct: float
    l_cs: float
    total: float
    node: Matrix2 | None = field(default=None, repr=False, compare=False)

    def components(self) -> dict[str, float]:
        return {"l_mse": self.l_mse, "l_mmd": self.l_mmd, "l_ct": self.l_ct,
                "l_cs": self.l_cs, "total": self.total}


def _check_layers(trace: ForwardTrace) -> None:
    if len(trace.f_s) != len(trace.f_t):
        raise ShapeError(f"trace has {len(trace.f_s)} student layers but {len(trace.f_t)} teacher layers")


def _teacher(f: Matrix2, detach_teacher: bool) -> Matrix2:
    return detach(f) if detach_teacher else f


def _batch_mean(per_sample: Matrix2) -> Matrix2:
    return scale(sum_all(per_sample), 1.0 / per_sample.rows)


def mse_distill_node(trace: ForwardTrace, detach_teacher: bool = False) -> Matrix2:
    _check_layers(trace)
    terms = []
    for fs, ft in zip(trace.f_s, trace.f_t):
        if fs.shape != ft.shape:
            raise ShapeError(f"mse_distill: student {fs.shape} vs teacher {ft.shape}")
        diff = sub(fs, _teacher(ft, detach_teacher))
        terms.append(_batch_mean(group_frobenius_norms(diff, trace.n_levels)))
    return _sum(terms)


def mmd_distill_node(trace: ForwardTrace, detach_teacher: bool = False) -> Matrix2:
    _check_layers(trace)
    n = trace.n_levels
    terms = []
    for fs, ft in zip(trace.f_s, trace.f_t):
        if fs.rows != ft.rows:
            raise ShapeError(f"mmd_distill: student rows {fs.rows} vs teacher rows {ft.rows}")
        diff = sub(block_gram(fs, n), block_gram(_teacher(ft, detach_teacher), n))
        terms.append(_batch_mean(group_frobenius_norms(diff, n)))
    return _sum(terms)


def _sum(terms: list[Matrix2]) -> Matrix2:
    if not terms:
        return Matrix2(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total


def mse_distill(trace: ForwardTrace) -> float:
    return mse_distill_node(trace).item()


def mmd_distill(trace: ForwardTrace) -> float:
    return mmd_distill_node(trace).item()


def _row_labels(trace: ForwardTrace, labels, n_classes: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (trace.batch,):
        raise ShapeError(f"{labels.size} labels for a batch of {trace.batch}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ParameterError(f"label out of range for {n_classes} classes: {labels.tolist()}")
    return np.repeat(labels, trace.n_levels)


def classification_nodes(trace: ForwardTrace, labels) -> tuple[Matrix2 | None, Matrix2]:
    rows = _row_labels(trace, labels, trace.scores_s.cols)
    batch = trace.batch
    l_cs = scale(cross_entropy_rows(trace.scores_s, rows), 1.0 / batch)
    l_ct = None
    if trace.scores_t is not None:
        l_ct = scale(cross_entropy_rows(trace.scores_t, rows), 1.0 / batch)
    return l_ct, l_cs


def classification(trace: ForwardTrace, labels) -> tuple[float, float]:
    """``(l_ct, l_cs)``; ``l_ct`` is 0 when the trace has no teacher."""
    l_ct, l_cs = classification_nodes(trace, labels)
    return (l_ct.item() if l_ct is not None else 0.0), l_cs.item()


def total_loss(trace: ForwardTrace, labels, flags: LossFlags = LossFlags()) -> LossReport:
    """Sum the active components; disabled ones are reported as 0.

    ``report.node`` is the differentiable total.
    """
    l_ct, l_cs = classification_nodes(trace, labels)
    parts = [l_cs]
    values = {"l_mse": 0.0, "l_mmd": 0.0, "l_ct": 0.0, "l_cs": l_cs.item()}
    if l_ct is not None:
        parts.append(l_ct)
        values["l_ct"] = l_ct.item()
        if flags.use_mse:
            node = mse_distill_node(trace, flags.detach_teacher_in_distill)
            parts.append(node)
            values["l_mse"] = node.item()
        if flags.use_mmd:
            node = mmd_distill_node(trace, flags.detach_teacher_in_distill)
            parts.append(node)
            values["l_mmd"] = node.item()
    total = _sum(parts)
    return LossReport(values["l_mse"], values["l_mmd"], values["l_ct"], values["l_cs"],
                      total.item(), total)
