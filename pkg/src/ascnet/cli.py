"""Command-line entry point: ``ascnet {synth,train,eval,ablate,gradcheck}``.

Exit codes: 0 success, 1 internal failure, 2 usage/config/data error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import checkpoint as ckpt
from .config import RunConfig
from .data import Split, generate_synthetic, load_features, write_features
from .errors import (AscNetError, ConfigError, DeterminismError, FormatError, ParameterError,
                     ShapeError, TrainingAborted)
from .evaluation import (ablation_csv, ablation_suite, apply_ablation, curve_csv, evaluate,
                         summarize, summary_csv)
from .model import build
from .training import log_to_csv, rng_streams, train
from .verify import TOLERANCE, run_gradcheck

log = logging.getLogger("ascnet")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(AscNetError):
    pass


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _data_paths(cfg: RunConfig, out: Path) -> tuple[Path, Path]:
    train_path = Path(cfg["paths.train"]) if cfg["paths.train"] else out / "train.ascf"
    test_path = Path(cfg["paths.test"]) if cfg["paths.test"] else out / "test.ascf"
    return train_path, test_path


def _load_split(path: Path, split: Split):
    if not path.is_file():
        raise UsageError(f"data file not found: {path}")
    return load_features(path, split)


def _echo_config(cfg: RunConfig, out: Path) -> None:
    _write(out / "config.resolved", cfg.to_text())


def cmd_synth(cfg: RunConfig, out: Path) -> int:
    spec = cfg.synthetic_spec()
    train_set, test_set = generate_synthetic(spec)
    train_path, test_path = _data_paths(cfg, out)
    for path, ds in ((train_path, train_set), (test_path, test_set)):
        path.parent.mkdir(parents=True, exist_ok=True)
        size = write_features(ds, path)
        counts = " ".join(f"{c}:{n}" for c, n in enumerate(ds.class_counts()))
        print(f"{ds.split.value}: {len(ds)} samples, {size} bytes -> {path}  per-class {counts}")
    _echo_config(cfg, out)
    return EXIT_OK


def cmd_train(cfg: RunConfig, out: Path) -> int:
    train_path, test_path = _data_paths(cfg, out)
    train_set = _load_split(train_path, Split.TRAIN)
    test_set = _load_split(test_path, Split.TEST) if test_path.is_file() else None
    base = cfg.model_config(train_set.n_levels, train_set.feat_dim, train_set.n_classes)
    model_cfg, flags = apply_ablation(cfg.variant(), base, cfg.loss_flags())
    train_cfg = cfg.train_config()
    net = build(model_cfg, rng_streams(train_cfg.seed)["init"])
    started = time.perf_counter()
    result = train(net, train_set, train_cfg, flags, test_set,
                   on_epoch=lambda row: log.info("epoch %d lr=%.3g total=%.4f auc=%s", row.epoch,
                                                 row.lr, row.total, row.eval_auc))
    ckpt_path = Path(cfg["paths.checkpoint"]) if cfg["paths.checkpoint"] else out / "checkpoint.ascc"
    ckpt_path.write_bytes(result.best_checkpoint)
    _write(out / "train_log.csv", log_to_csv(result.log))
    _echo_config(cfg, out)
    if cfg["run.plots"] and result.log:
        from .plots import plot_training

        plot_training(result.log, out / "train_log.png")
    auc = "n/a" if result.best_auc is None else repr(result.best_auc)
    print(f"variant={cfg.variant().value} epochs={train_cfg.epochs} best_epoch={result.best_epoch} "
          f"best_auc={auc} seconds={time.perf_counter() - started:.1f}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, out: Path) -> int:
    _, test_path = _data_paths(cfg, out)
    ckpt_path = Path(cfg["paths.checkpoint"]) if cfg["paths.checkpoint"] else out / "checkpoint.ascc"
    if not ckpt_path.is_file():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    test_set = _load_split(test_path, Split.TEST)
    net, _ = ckpt.load_checkpoint(ckpt_path)
    mc = net.config
    if (mc.n_levels, mc.feat_dim, mc.n_classes) != (test_set.n_levels, test_set.feat_dim, test_set.n_classes):
        raise ShapeError(
            f"checkpoint expects N={mc.n_levels}, D={mc.feat_dim}, C={mc.n_classes} but data has "
            f"N={test_set.n_levels}, D={test_set.feat_dim}, C={test_set.n_classes}")
    report = evaluate(net, test_set)
    _write(out / "curve.csv", curve_csv(report))
    if cfg["run.plots"]:
        from .plots import plot_curves

        plot_curves([report], [cfg.variant().value], out / "curve.png")
    print(f"AUC={report.auc!r}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    train_path, test_path = _data_paths(cfg, out)
    if cfg["paths.train"]:
        train_set = _load_split(train_path, Split.TRAIN)
        test_set = _load_split(test_path, Split.TEST)
    else:
        train_set, test_set = generate_synthetic(cfg.synthetic_spec())
    base = cfg.model_config(train_set.n_levels, train_set.feat_dim, train_set.n_classes)
    seeds = list(cfg["ablate.seeds"])
    variants = cfg.ablation_variants()
    started = time.perf_counter()
    reports = ablation_suite(train_set, test_set, base, cfg.train_config(), seeds, variants,
                             cfg.loss_flags(), jobs=jobs)
    _write(out / "ablation.csv", ablation_csv(reports))
    _write(out / "ablation_summary.csv", summary_csv(reports))
    _echo_config(cfg, out)
    summary = summarize(reports)
    if cfg["run.plots"]:
        from .plots import plot_ablation, plot_curves

        plot_ablation(summary, out / "ablation.png")
        first = {}
        for r in reports:
            first.setdefault(r.variant, r)
        plot_curves(list(first.values()), [v.value for v in first], out / "ablation_curves.png")
    for variant, mean, std, runs in summary:
        print(f"{variant.value:<26} AUC {100 * mean:6.2f} +/- {100 * std:5.2f}  (n={runs})")
    print(f"seconds={time.perf_counter() - started:.1f}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, out: Path) -> int:
    started = time.perf_counter()
    result = run_gradcheck(seed=cfg["train.seed"])
    elapsed = time.perf_counter() - started
    verdict = "PASS" if result.passed else "FAIL"
    print(f"max_rel_error={result.max_rel_error:.3e} tolerance={TOLERANCE:g} "
          f"entries={result.n_entries} seconds={elapsed:.2f} {verdict}")
    return EXIT_OK if result.passed else EXIT_VERIFY


COMMANDS = {
    "synth": (cmd_synth, "generate synthetic train/test ASCF files"),
    "train": (cmd_train, "train a model and write the best checkpoint"),
    "eval": (cmd_eval, "evaluate a checkpoint on the test split"),
    "ablate": (cmd_ablate, "train and evaluate every ablation variant per seed"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the full objective"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--seed", type=int, help="sets train.seed and synth.seed")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="ascnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "ablate":
            p.add_argument("--jobs", type=int, default=1, help="parallel (variant, seed) runs")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            overrides += [f"train.seed={args.seed}", f"synth.seed={args.seed}"]
        cfg = RunConfig.load(args.config, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        func = COMMANDS[args.command][0]
        if args.command == "ablate":
            return func(cfg, out, jobs=args.jobs)
        return func(cfg, out)
    except DeterminismError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (UsageError, ConfigError, ParameterError, ShapeError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, (FileNotFoundError, PermissionError)) else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
