"""Per-level accuracy, AUC and the ablation harness.

AUC here is the unweighted mean of the per-level accuracies over the ``N``
progress levels, not an ROC integral.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, progress_ratio
from .errors import ParameterError
from .graph import MaskKind
from .loss import LossFlags
from .model import AscNet, ModelConfig, student_probabilities


class AblationVariant(enum.Enum):
    FULL = "Full"
    WITHOUT_BIDIR_TEACHER = "WithoutBidirTeacher"
    DIAG_STUDENT_ADJ = "DiagStudentAdj"
    DIAG_TEACHER_ADJ = "DiagTeacherAdj"
    DIAG_BOTH_ADJ = "DiagBothAdj"
    STUDENT_ONLY = "StudentOnly"
    WITHOUT_LD = "WithoutLD"
    WITHOUT_LMMD = "WithoutLMMD"
    WITHOUT_LMSE = "WithoutLMSE"
    WITHOUT_DENSE_CONNECTIONS = "WithoutDenseConnections"

    @classmethod
    def parse(cls, name: str) -> "AblationVariant":
        try:
            return cls(name)
        except ValueError:
            raise ParameterError(
                f"unknown ablation variant {name!r}; choose from {[v.value for v in cls]}") from None


# row order of the published ablation table, the full model last
TABLE_ORDER = (
    AblationVariant.WITHOUT_BIDIR_TEACHER,
    AblationVariant.DIAG_STUDENT_ADJ,
    AblationVariant.DIAG_TEACHER_ADJ,
    AblationVariant.DIAG_BOTH_ADJ,
    AblationVariant.STUDENT_ONLY,
    AblationVariant.WITHOUT_LD,
    AblationVariant.WITHOUT_LMMD,
    AblationVariant.WITHOUT_LMSE,
    AblationVariant.WITHOUT_DENSE_CONNECTIONS,
    AblationVariant.FULL,
)


def apply_ablation(variant: AblationVariant | str, config: ModelConfig,
                   flags: LossFlags = LossFlags()) -> tuple[ModelConfig, LossFlags]:
    """Model config and loss flags for one ablation run, starting from the full model."""
    if isinstance(variant, str):
        variant = AblationVariant.parse(variant)
    if not isinstance(variant, AblationVariant):
        raise ParameterError(f"unknown ablation variant {variant!r}")
    V = AblationVariant
    if variant is V.WITHOUT_BIDIR_TEACHER:
        config = replace(config, teacher_mask=MaskKind.STUDENT_CAUSAL)
    elif variant is V.DIAG_STUDENT_ADJ:
        config = replace(config, student_mask=MaskKind.DIAGONAL)
    elif variant is V.DIAG_TEACHER_ADJ:
        config = replace(config, teacher_mask=MaskKind.DIAGONAL)
    elif variant is V.DIAG_BOTH_ADJ:
        config = replace(config, teacher_mask=MaskKind.DIAGONAL, student_mask=MaskKind.DIAGONAL)
    elif variant is V.STUDENT_ONLY:
        config = replace(config, use_teacher=False)
        flags = replace(flags, use_mse=False, use_mmd=False)
    elif variant is V.WITHOUT_LD:
        flags = replace(flags, use_mse=False, use_mmd=False)
    elif variant is V.WITHOUT_LMMD:
        flags = replace(flags, use_mmd=False)
    elif variant is V.WITHOUT_LMSE:
        flags = replace(flags, use_mse=False)
    elif variant is V.WITHOUT_DENSE_CONNECTIONS:
        config = replace(config, dense=False)
    return config, flags


@dataclass
class EvalReport:
    per_level_acc: np.ndarray
    auc: float
    variant: AblationVariant = AblationVariant.FULL
    n_test: int = 0
    seed: int | None = None

    def curve_rows(self) -> list[tuple[int, float, float]]:
        n = len(self.per_level_acc)
        return [(k + 1, progress_ratio(k + 1, n), float(a)) for k, a in enumerate(self.per_level_acc)]


Predictor = Callable[[np.ndarray], np.ndarray]


def evaluate(model: AscNet | Predictor, dataset: Dataset,
             variant: AblationVariant = AblationVariant.FULL, seed: int | None = None,
             chunk: int = 64) -> EvalReport:
    """Accuracy of the student's row-``n`` prediction at every progress level.

    ``model`` may also be any callable mapping an ``N x D`` sample to an
    ``N x C`` array of class scores.  Network predictions are computed in
    stacked chunks; every sample's graph is still processed on its own.
    """
    if len(dataset) == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    n = dataset.n_levels
    labels = dataset.labels
    correct = np.zeros(n, dtype=np.int64)
    if isinstance(model, AscNet):
        for start in range(0, len(dataset), chunk):
            x, y = dataset.batch(np.arange(start, min(start + chunk, len(dataset))))
            probs = student_probabilities(model, x)
            hits = np.argmax(probs, axis=1).reshape(-1, n) == y[:, None]
            correct += hits.sum(axis=0)
    else:
        for sample, label in zip(dataset.samples, labels):
            correct += np.argmax(np.asarray(model(sample.features)), axis=1) == label
    per_level = correct / len(dataset)
    return EvalReport(per_level, float(np.mean(per_level)), variant, len(dataset), seed)


def curve_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("level", "ratio", "accuracy"))
    for level, ratio, acc in report.curve_rows():
        writer.writerow((level, repr(ratio), repr(acc)))
    return buf.getvalue()


def _run_one(args) -> EvalReport:
    from .model import build
    from .training import rng_streams, train

    variant, seed, train_set, test_set, model_config, train_config, flags = args
    cfg, run_flags = apply_ablation(variant, model_config, flags)
    net = build(cfg, rng_streams(seed)["init"])
    result = train(net, train_set, replace(train_config, seed=seed), run_flags, test_set)
    return evaluate(result.best_net(), test_set, variant, seed)


def ablation_suite(train_set: Dataset, test_set: Dataset, model_config: ModelConfig,
                   train_config, seeds: Sequence[int],
                   variants: Sequence[AblationVariant] = TABLE_ORDER,
                   flags: LossFlags = LossFlags(), jobs: int = 1) -> list[EvalReport]:
    """Train from scratch and evaluate every ``(variant, seed)`` pair.

    Reports come back variant-major in the order given, whatever ``jobs`` is.
    """
    if not seeds:
        raise ParameterError("ablation_suite needs at least one seed")
    variants = [AblationVariant.parse(v) if isinstance(v, str) else v for v in variants]
    tasks = [(v, s, train_set, test_set, model_config, train_config, flags)
             for v in variants for s in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_one, tasks))
    return [_run_one(t) for t in tasks]


def ablation_csv(reports: Sequence[EvalReport]) -> str:
    n = len(reports[0].per_level_acc) if reports else 0
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "seed", "auc"] + [f"acc_{k}" for k in range(1, n + 1)])
    for r in reports:
        writer.writerow([r.variant.value, r.seed, repr(r.auc)] + [repr(float(a)) for a in r.per_level_acc])
    return buf.getvalue()


def summarize(reports: Sequence[EvalReport]) -> list[tuple[AblationVariant, float, float, int]]:
    """``(variant, mean AUC, sample std, runs)`` per variant, in first-seen order."""
    groups: dict[AblationVariant, list[float]] = {}
    for r in reports:
        groups.setdefault(r.variant, []).append(r.auc)
    out = []
    for variant, aucs in groups.items():
        arr = np.array(aucs)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out.append((variant, float(arr.mean()), std, arr.size))
    return out


def summary_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("variant", "mean_auc", "std_auc", "runs"))
    for variant, mean, std, runs in summarize(reports):
        writer.writerow((variant.value, repr(mean), repr(std), runs))
    return buf.getvalue()
