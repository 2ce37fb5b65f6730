"""Teacher/student network assembly, forward traces and student-only prediction."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from .errors import ParameterError, ShapeError
from .graph import AdjacencySpec, MaskKind
from .layers import DgcBlock, GcLayer, GUnit, dgc_forward, gc_forward, uniform_fan_in
from .numerics import ComputeMode, Matrix2, add_row, matmul, no_grad, softmax_rows

PRECISIONS = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class ModelConfig:
    """Network shape plus the structural switches used by the ablations.

    Defaults follow the full-scale setting: ten progress levels, 1024-d
    input features, 512 channels in the graph layers.
    """

    n_levels: int = 10
    feat_dim: int = 1024
    hidden: int = 512
    n_classes: int = 101
    dropout_p: float = 0.5
    precision: str = "float64"
    teacher_mask: MaskKind = MaskKind.TEACHER_BIDIRECTIONAL
    student_mask: MaskKind = MaskKind.STUDENT_CAUSAL
    use_teacher: bool = True
    dense: bool = True
    similarity_stop_gradient: bool = False
    share_aprime: bool = False
    dgc_share_weights: bool = False
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def validate(self) -> "ModelConfig":
        for name in ("n_levels", "feat_dim", "hidden", "n_classes"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ParameterError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.precision not in PRECISIONS:
            raise ParameterError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")
        if self.bn_eps <= 0:
            raise ParameterError("bn_eps must be positive")
        return self

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_items(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, MaskKind):
                value = value.value
            elif isinstance(value, bool):
                value = "true" if value else "false"
            out.append((f.name, str(value)))
        return out

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name]
            default = f.default
            if isinstance(default, MaskKind):
                kwargs[f.name] = MaskKind(raw)
            elif isinstance(default, bool):
                kwargs[f.name] = raw == "true"
            else:
                kwargs[f.name] = type(default)(raw)
        return cls(**kwargs).validate()


@dataclass
class Branch:
    gc: GcLayer
    dgc: DgcBlock


@dataclass
class AscNet:
    config: ModelConfig
    teacher: Branch | None
    student: Branch
    fc_weight: Matrix2
    fc_bias: Matrix2

    def named_units(self) -> Iterator[tuple[str, GUnit]]:
        seen: set[int] = set()
        for prefix, branch in self._branches():
            for slot in ("g1", "g2"):
                unit = getattr(branch.dgc, slot)
                if id(unit) not in seen:
                    seen.add(id(unit))
                    yield f"{prefix}.dgc.{slot}", unit

    def parameters(self) -> dict[str, Matrix2]:
        """Every trainable matrix once, in a fixed order (shared ones under their first name)."""
        named: dict[str, Matrix2] = {}
        seen: set[int] = set()

        def put(name, param):
            if id(param) not in seen:
                seen.add(id(param))
                named[name] = param

        for prefix, branch in self._branches():
            put(f"{prefix}.gc.weight", branch.gc.weight)
            put(f"{prefix}.gc.aprime", branch.gc.adjacency.learnable)
            for slot in ("g1", "g2"):
                unit = getattr(branch.dgc, slot)
                put(f"{prefix}.dgc.{slot}.weight", unit.gc.weight)
                put(f"{prefix}.dgc.{slot}.aprime", unit.gc.adjacency.learnable)
                put(f"{prefix}.dgc.{slot}.gamma", unit.gamma)
                put(f"{prefix}.dgc.{slot}.beta", unit.beta)
        put("head.weight", self.fc_weight)
        put("head.bias", self.fc_bias)
        return named

    def adjacencies(self) -> Iterator[tuple[str, AdjacencySpec]]:
        for prefix, branch in self._branches():
            yield f"{prefix}.gc", branch.gc.adjacency
            yield f"{prefix}.dgc.g1", branch.dgc.g1.gc.adjacency
            yield f"{prefix}.dgc.g2", branch.dgc.g2.gc.adjacency

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def _branches(self):
        if self.teacher is not None:
            yield "teacher", self.teacher
        yield "student", self.student


def _build_branch(config: ModelConfig, kind: MaskKind, rng: np.random.Generator,
                  share_from: Branch | None) -> Branch:
    n, dtype = config.n_levels, config.dtype

    def adjacency(shared: AdjacencySpec | None) -> AdjacencySpec:
        learnable = shared.learnable if shared is not None else None
        return AdjacencySpec.create(kind, n, rng, dtype, config.similarity_stop_gradient, learnable)

    def shared(pick):
        return pick(share_from) if share_from is not None else None

    gc = GcLayer(uniform_fan_in(rng, config.feat_dim, config.hidden, dtype),
                 adjacency(shared(lambda b: b.gc.adjacency)))

    def unit(slot: str) -> GUnit:
        layer = GcLayer(uniform_fan_in(rng, config.hidden, config.hidden, dtype),
                        adjacency(shared(lambda b: getattr(b.dgc, slot).gc.adjacency)))
        return GUnit.create(layer, config.dropout_p, config.bn_momentum, config.bn_eps)

    g1 = unit("g1")
    g2 = g1 if config.dgc_share_weights else unit("g2")
    return Branch(gc, DgcBlock(g1, g2))


def build(config: ModelConfig, rng: np.random.Generator) -> AscNet:
    """Initialize every parameter from ``rng`` (teacher first, then student, then head)."""
    config.validate()
    teacher = _build_branch(config, config.teacher_mask, rng, None) if config.use_teacher else None
    share = teacher if config.share_aprime else None
    student = _build_branch(config, config.student_mask, rng, share)
    fc_weight = uniform_fan_in(rng, config.hidden, config.n_classes, config.dtype)
    fc_bias = Matrix2(np.zeros((1, config.n_classes)), requires_grad=True, dtype=config.dtype)
    return AscNet(config, teacher, student, fc_weight, fc_bias)


@dataclass
class ForwardTrace:
    """Per-layer features and class scores of both branches.

    ``f_t``/``f_s`` hold the GC output and the DGC output.  ``logits_*`` are
    the SoftMax rows; ``scores_*`` the pre-SoftMax values the loss consumes.
    Teacher fields are empty/None when the network has no teacher.
    """

    f_t: list[Matrix2]
    f_s: list[Matrix2]
    scores_t: Matrix2 | None
    scores_s: Matrix2
    logits_t: Matrix2 | None
    logits_s: Matrix2
    n_levels: int

    @property
    def batch(self) -> int:
        return self.scores_s.rows // self.n_levels


def _as_input(net: AscNet, features) -> Matrix2:
    cfg = net.config
    values = features.values if isinstance(features, Matrix2) else np.asarray(features)
    if values.ndim != 2 or values.shape[1] != cfg.feat_dim or values.shape[0] == 0 \
            or values.shape[0] % cfg.n_levels:
        raise ShapeError(
            f"features {values.shape} do not stack into samples of {cfg.n_levels}x{cfg.feat_dim}")
    return Matrix2(values, dtype=cfg.dtype)


def _branch_forward(net: AscNet, branch: Branch, x: Matrix2, mode: ComputeMode, rng):
    f1 = gc_forward(branch.gc, x)
    f2 = dgc_forward(branch.dgc, f1, mode, rng, dense=net.config.dense)
    scores = add_row(matmul(f2, net.fc_weight), net.fc_bias)
    return [f1, f2], scores


def forward(net: AscNet, features, mode: ComputeMode, rng: np.random.Generator | None = None,
            with_teacher: bool = True) -> ForwardTrace:
    """Run both branches on the same node features.

    ``features`` is ``N x D`` for one sample or ``(B*N) x D`` for a stacked
    batch.  Dropout draws the teacher's masks before the student's.
    """
    x = _as_input(net, features)
    f_t, scores_t, logits_t = [], None, None
    if with_teacher and net.teacher is not None:
        f_t, scores_t = _branch_forward(net, net.teacher, x, mode, rng)
        logits_t = softmax_rows(scores_t)
    f_s, scores_s = _branch_forward(net, net.student, x, mode, rng)
    return ForwardTrace(f_t, f_s, scores_t, scores_s, logits_t, softmax_rows(scores_s),
                        net.config.n_levels)


def student_probabilities(net: AscNet, features) -> np.ndarray:
    """Eval-mode student SoftMax rows for one sample or a stacked batch."""
    with no_grad():
        trace = forward(net, features, ComputeMode.EVAL, with_teacher=False)
    return trace.logits_s.values


def predict(net: AscNet, sample_features, level: int) -> tuple[int, np.ndarray]:
    """Class id and distribution for progress level ``level`` (1-based), student branch only.

    Ties go to the lowest class id.
    """
    n = net.config.n_levels
    if not 1 <= level <= n:
        raise ParameterError(f"level must lie in 1..{n}, got {level}")
    x = _as_input(net, sample_features)
    if x.rows != n:
        raise ShapeError(f"predict takes a single {n}-row sample, got {x.rows} rows")
    row = student_probabilities(net, x)[level - 1]
    return int(np.argmax(row)), row
