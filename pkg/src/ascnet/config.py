"""Run configuration: flat ``section.key = value`` text with ``#`` comments.

Resolution order is defaults, then the config file, then ``--set`` overrides.
The resolved configuration is echoed in the same syntax and reloads to an
equal configuration.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .data import SyntheticSpec
from .errors import ConfigError
from .evaluation import TABLE_ORDER, AblationVariant
from .loss import LossFlags
from .model import ModelConfig
from .training import TrainConfig

# key -> (kind, default); kinds drive parsing and formatting
DEFAULTS: dict[str, tuple[str, object]] = {
    "model.hidden": ("int", 64),
    "model.dropout_p": ("float", 0.5),
    "model.precision": ("str", "float64"),
    "model.similarity_stop_gradient": ("bool", False),
    "model.share_aprime": ("bool", False),
    "model.dgc_share_weights": ("bool", False),
    "model.bn_momentum": ("float", 0.9),
    "model.bn_eps": ("float", 1e-5),
    "loss.detach_teacher_in_distill": ("bool", False),
    "train.epochs": ("int", 200),
    "train.batch_size": ("int", 16),
    "train.lr_init": ("float", 1e-4),
    "train.lr_decay": ("float", 0.95),
    "train.lr_milestones": ("ints", (100, 150, 250, 350)),
    "train.momentum": ("float", 0.9),
    "train.seed": ("int", 0),
    "train.eval_every": ("int", 10),
    "synth.n_classes": ("int", 6),
    "synth.n_levels": ("int", 10),
    "synth.feat_dim": ("int", 32),
    "synth.samples_per_class": ("int", 200),
    "synth.ambiguity_pairs": ("pairs", ((0, 1), (2, 3), (4, 5))),
    "synth.noise_sigma": ("float", 0.15),
    "synth.convergence_rate": ("float", 0.35),
    "synth.seed": ("int", 0),
    "paths.train": ("str", ""),
    "paths.test": ("str", ""),
    "paths.checkpoint": ("str", ""),
    "run.variant": ("str", AblationVariant.FULL.value),
    "run.plots": ("bool", True),
    "ablate.seeds": ("ints", (0, 1, 2, 3, 4)),
    "ablate.variants": ("strs", tuple(v.value for v in TABLE_ORDER)),
}


def _parse(key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "int":
            value = int(raw)
            if value < 0 and key.endswith("seed"):
                raise ValueError("seeds are unsigned")
            return value
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "str":
            return raw
        if kind == "ints":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind == "strs":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        if kind == "pairs":
            pairs = []
            for item in raw.split(","):
                if item.strip():
                    a, b = item.split("-")
                    pairs.append((int(a), int(b)))
            return tuple(pairs)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind} ({exc})") from None
    raise ConfigError(f"{key}: unknown kind {kind}")


def _format(kind: str, value) -> str:
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("ints", "strs"):
        return ",".join(str(v) for v in value)
    if kind == "pairs":
        return ",".join(f"{a}-{b}" for a, b in value)
    return str(value)


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=lambda: {k: d for k, (_, d) in DEFAULTS.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, raw: str) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse(key, DEFAULTS[key][0], raw)

    def update_from_text(self, text: str, source: str = "<text>") -> None:
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = line.split("=", 1)
            try:
                self.set(key.strip(), raw)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        cfg.update_from_text(text)
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike | None = None,
             overrides: list[str] | None = None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    cfg.update_from_text(fh.read(), str(path))
            except OSError as exc:
                raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, raw = item.split("=", 1)
            cfg.set(key.strip(), raw)
        return cfg

    def to_text(self) -> str:
        lines = ["# resolved configuration"]
        lines += [f"{k} = {_format(kind, self.values[k])}" for k, (kind, _) in DEFAULTS.items()]
        return "\n".join(lines) + "\n"

    # -- typed views --------------------------------------------------------

    def model_config(self, n_levels: int, feat_dim: int, n_classes: int) -> ModelConfig:
        v = self.values
        return ModelConfig(
            n_levels=n_levels, feat_dim=feat_dim, hidden=v["model.hidden"], n_classes=n_classes,
            dropout_p=v["model.dropout_p"], precision=v["model.precision"],
            similarity_stop_gradient=v["model.similarity_stop_gradient"],
            share_aprime=v["model.share_aprime"], dgc_share_weights=v["model.dgc_share_weights"],
            bn_momentum=v["model.bn_momentum"], bn_eps=v["model.bn_eps"]).validate()

    def loss_flags(self) -> LossFlags:
        return LossFlags(detach_teacher_in_distill=self.values["loss.detach_teacher_in_distill"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            epochs=v["train.epochs"], batch_size=v["train.batch_size"], lr_init=v["train.lr_init"],
            lr_decay=v["train.lr_decay"], lr_milestones=tuple(v["train.lr_milestones"]),
            momentum=v["train.momentum"], seed=v["train.seed"],
            eval_every=v["train.eval_every"]).validate()

    def synthetic_spec(self) -> SyntheticSpec:
        v = self.values
        return SyntheticSpec(
            n_classes=v["synth.n_classes"], n_levels=v["synth.n_levels"], feat_dim=v["synth.feat_dim"],
            samples_per_class=v["synth.samples_per_class"],
            ambiguity_pairs=tuple(v["synth.ambiguity_pairs"]), noise_sigma=v["synth.noise_sigma"],
            convergence_rate=v["synth.convergence_rate"], seed=v["synth.seed"]).validate()

    def variant(self) -> AblationVariant:
        return AblationVariant.parse(self.values["run.variant"])

    def ablation_variants(self) -> list[AblationVariant]:
        return [AblationVariant.parse(name) for name in self.values["ablate.variants"]]
