"""End-to-end acceptance checks, one test per criterion.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion (see ``conftest.py``).
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from ascnet.checkpoint import decode_checkpoint, encode_checkpoint
from ascnet.data import (Split, SyntheticSpec, decode_features, encode_features, generate_synthetic)
from ascnet.errors import BadMagicError, TruncatedFileError
from ascnet.evaluation import (AblationVariant, ablation_csv, ablation_suite, apply_ablation, evaluate,
                               summarize)
from ascnet.layers import dgc_forward
from ascnet.loss import LossFlags, classification, mmd_distill, total_loss
from ascnet.model import ForwardTrace, ModelConfig, build, forward
from ascnet.numerics import ComputeMode, Matrix2
from ascnet.training import TrainConfig, log_to_csv, lr_at, rng_streams, train
from ascnet.verify import TOLERANCE, run_gradcheck

V = AblationVariant
DESK = ModelConfig(n_levels=10, feat_dim=32, hidden=64, n_classes=6)


def _trace(f_s, f_t, n_levels, scores=None):
    scores = Matrix2(np.zeros((f_s[0].shape[0], 3)) if scores is None else scores)
    return ForwardTrace([Matrix2(f) for f in f_t], [Matrix2(f) for f in f_s], scores, scores, None, None,
                        n_levels)


def _orthogonal(rng, k):
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def _warm_stats(net, rng, batch=4):
    """Give the BN running statistics non-trivial values with one Train pass."""
    cfg = net.config
    forward(net, rng.standard_normal((batch * cfg.n_levels, cfg.feat_dim)), ComputeMode.TRAIN, rng)


@pytest.mark.criterion(1, "gradient oracle on the tiny model")
def test_gradient_oracle(record_property):
    started = time.perf_counter()
    result = run_gradcheck(seed=0)
    elapsed = time.perf_counter() - started
    record_property("detail", f"max rel error {result.max_rel_error:.2e}, {elapsed:.1f} s")
    assert result.max_rel_error < TOLERANCE
    assert elapsed < 10.0


@pytest.mark.criterion(2, "student causality with a bidirectional teacher witness")
def test_student_causality(record_property):
    rng = np.random.default_rng(2)
    cfg = ModelConfig(n_levels=10, feat_dim=32, hidden=16, n_classes=6)
    worst, witness = 0.0, 0.0
    for _ in range(100):
        net = build(cfg, rng)
        _warm_stats(net, rng)
        x = rng.standard_normal((cfg.n_levels, cfg.feat_dim))
        n = int(rng.integers(1, cfg.n_levels))
        y = x.copy()
        y[n:] += rng.normal(0.0, 3.0, size=y[n:].shape)
        a, b = forward(net, x, ComputeMode.EVAL), forward(net, y, ComputeMode.EVAL)
        worst = max(worst, float(np.max(np.abs(a.logits_s.values[:n] - b.logits_s.values[:n]))))
        witness = max(witness, float(np.max(np.abs(a.logits_t.values[0] - b.logits_t.values[0]))))
    record_property("detail", f"student max change {worst:.1e}, teacher row-1 max change {witness:.1e}")
    assert worst < 1e-12
    assert witness > 1e-6


@pytest.mark.criterion(3, "masked learnable-adjacency gradients are exactly zero")
def test_masked_gradient_exactness(record_property):
    rng = np.random.default_rng(3)
    variants = [V.FULL, V.DIAG_STUDENT_ADJ, V.DIAG_TEACHER_ADJ, V.DIAG_BOTH_ADJ]
    masked_entries = 0
    for k in range(20):
        cfg, flags = apply_ablation(variants[k % len(variants)], DESK)
        cfg = ModelConfig(**{**cfg.__dict__, "hidden": 8})
        net = build(cfg, rng)
        x = rng.standard_normal((3 * cfg.n_levels, cfg.feat_dim))
        trace = forward(net, x, ComputeMode.TRAIN, rng)
        net.zero_grad()
        total_loss(trace, rng.integers(0, cfg.n_classes, size=3), flags).node.backward()
        for _, spec in net.adjacencies():
            masked = spec.mask.values == 0
            assert spec.learnable.grad is not None
            assert np.all(spec.learnable.grad[masked] == 0.0)
            assert np.any(spec.learnable.grad[~masked] != 0.0)
            masked_entries += int(masked.sum())
    record_property("detail", f"{masked_entries} masked entries checked")


@pytest.mark.criterion(4, "distillation and classification loss identities")
def test_loss_identities(record_property):
    rng = np.random.default_rng(4)
    f = [rng.standard_normal((10, 7)) for _ in range(2)]
    assert mmd_distill(_trace(f, f, 10)) == 0.0

    rotated = 0.0
    for _ in range(20):
        fs, ft = rng.standard_normal((10, 7)), rng.standard_normal((10, 7))
        base = mmd_distill(_trace([fs], [ft], 10))
        moved = mmd_distill(_trace([fs @ _orthogonal(rng, 7)], [ft @ _orthogonal(rng, 7)], 10))
        rotated = max(rotated, abs(moved - base))
        rotated = max(rotated, mmd_distill(_trace([fs @ _orthogonal(rng, 7)], [fs], 10)))
    assert rotated < 1e-8

    uniform = 0.0
    for n, c in ((10, 6), (4, 3), (7, 101)):
        scores = np.full((2 * n, c), rng.normal())
        l_ct, l_cs = classification(_trace([np.zeros((2 * n, 1))], [np.zeros((2 * n, 1))], n, scores),
                                    [0, c - 1])
        uniform = max(uniform, abs(l_cs - n * math.log(c)), abs(l_ct - n * math.log(c)))
    assert uniform < 1e-10

    additivity = 0.0
    net = build(ModelConfig(n_levels=10, feat_dim=32, hidden=16, n_classes=6), rng)
    for flags in (LossFlags(), LossFlags(use_mse=False), LossFlags(use_mmd=False)):
        r = total_loss(forward(net, rng.standard_normal((40, 32)), ComputeMode.TRAIN, rng),
                       rng.integers(0, 6, size=4), flags)
        additivity = max(additivity, abs(r.total - (r.l_mse + r.l_mmd + r.l_ct + r.l_cs)))
    assert additivity < 1e-12
    record_property("detail", f"rotation {rotated:.1e}, uniform CE {uniform:.1e}, "
                              f"additivity {additivity:.1e}")


@pytest.mark.criterion(5, "dense block algebra on zero weights")
def test_dense_block_algebra(record_property):
    rng = np.random.default_rng(5)
    for variant in (V.FULL, V.WITHOUT_DENSE_CONNECTIONS):
        cfg, _ = apply_ablation(variant, DESK)
        net = build(cfg, rng)
        for _, unit in net.named_units():
            unit.gc.weight.values[:] = 0.0
            unit.beta.values[:] = 0.0
            unit.gamma.values[:] = rng.uniform(0.5, 2.0, size=unit.gamma.shape)
        f = Matrix2(rng.standard_normal((3 * cfg.n_levels, cfg.hidden)))
        for mode in (ComputeMode.TRAIN, ComputeMode.EVAL):
            for branch in (net.teacher, net.student):
                out = dgc_forward(branch.dgc, f, mode, rng, dense=cfg.dense).values
                if cfg.dense:
                    np.testing.assert_array_equal(out, 2.0 * f.values)
                else:
                    assert np.all(out == 0.0)
    record_property("detail", "dense gives exactly 2F, plain stack gives exactly 0")


@pytest.mark.slow
@pytest.mark.criterion(6, "ablation direction on the default synthetic task")
def test_ablation_direction(record_property):
    started = time.perf_counter()
    train_set, test_set = generate_synthetic(SyntheticSpec())
    reports = ablation_suite(train_set, test_set, DESK, TrainConfig(epochs=200, lr_init=1e-4),
                             seeds=list(range(5)), variants=[V.FULL, V.STUDENT_ONLY, V.WITHOUT_LD])
    elapsed = time.perf_counter() - started
    stats = {v: (mean, std) for v, mean, std, _ in summarize(reports)}
    full_mean, full_std = stats[V.FULL]
    lines = []
    for variant in (V.STUDENT_ONLY, V.WITHOUT_LD):
        mean, std = stats[variant]
        lines.append(f"{variant.value} {mean:.5f}+-{std:.5f} (gap {full_mean - mean:+.5f})")
    record_property("detail", f"Full {full_mean:.5f}+-{full_std:.5f}; " + "; ".join(lines)
                    + f"; {elapsed:.0f} s")
    for variant in (V.STUDENT_ONLY, V.WITHOUT_LD):
        mean, std = stats[variant]
        assert full_mean - mean > max(full_std, std), variant.value
    assert elapsed < 15 * 60


@pytest.mark.criterion(7, "learning-rate schedule")
def test_lr_schedule(record_property):
    milestones = (100, 150, 250, 350)
    for epoch in range(0, 500):
        k = sum(m <= epoch for m in milestones)
        assert lr_at(epoch) == 0.0001 * 0.95 ** k, epoch
        exact = Fraction(1, 10000) * Fraction(19, 20) ** k
        assert abs(Fraction(lr_at(epoch)) - exact) <= Fraction(math.ulp(float(exact))), epoch
    assert lr_at(0) == 0.0001 and lr_at(99) == 0.0001 and lr_at(100) == 0.0001 * 0.95
    record_property("detail", "epochs 0..499 exact")


@pytest.mark.criterion(8, "determinism and bitwise file formats")
def test_determinism_and_formats(record_property):
    spec = SyntheticSpec(n_classes=3, n_levels=4, feat_dim=8, samples_per_class=10,
                         ambiguity_pairs=((0, 1),), seed=8)
    data = generate_synthetic(spec)
    cfg = ModelConfig(n_levels=4, feat_dim=8, hidden=6, n_classes=3)
    config = TrainConfig(epochs=3, batch_size=4, lr_init=1e-3, eval_every=1, seed=5)

    def run():
        result = train(build(cfg, rng_streams(5)["init"]), data[0], config, test_set=data[1])
        suite = ablation_csv(ablation_suite(*data, cfg, TrainConfig(epochs=1, batch_size=4, lr_init=1e-3),
                                            [0, 1], [V.STUDENT_ONLY, V.FULL]))
        return result.best_checkpoint, encode_checkpoint(result.net), log_to_csv(result.log), suite

    assert run() == run()

    blob = encode_features(data[1])
    assert encode_features(decode_features(blob, Split.TEST)) == blob
    for a, b in zip(data[1].samples, decode_features(blob).samples):
        assert a.features.tobytes() == b.features.tobytes() and a.label == b.label

    net = build(cfg, np.random.default_rng(0))
    _warm_stats(net, np.random.default_rng(1))
    velocity = {name: np.full(p.shape, 0.25) for name, p in net.parameters().items()}
    ckpt = encode_checkpoint(net, velocity)
    back, v2 = decode_checkpoint(ckpt)
    assert encode_checkpoint(back, v2) == ckpt
    for p1, p2 in zip(net.parameters().values(), back.parameters().values()):
        assert p1.values.tobytes() == p2.values.tobytes()

    for decode, good in ((decode_features, blob), (decode_checkpoint, ckpt)):
        with pytest.raises(BadMagicError):
            decode(b"XXXX" + good[4:])
        for cut in (3, 20, len(good) // 2, len(good) - 1):
            with pytest.raises(TruncatedFileError):
                decode(good[:cut])
    record_property("detail", "checkpoints, logs and ablation CSV identical; round trips bitwise")


@pytest.mark.criterion(9, "evaluation metric and chance-level baseline")
def test_evaluation_metric(record_property):
    _, test_set = generate_synthetic(SyntheticSpec(samples_per_class=1000))
    assert len(test_set) >= 1000
    rng = np.random.default_rng(9)
    report = evaluate(lambda f: rng.random((f.shape[0], test_set.n_classes)), test_set)
    assert report.auc == float(np.mean(report.per_level_acc))

    p = 1.0 / test_set.n_classes
    sigma = math.sqrt(p * (1 - p) / len(test_set))
    worst = float(np.max(np.abs(report.per_level_acc - p)) / sigma)
    assert worst <= 3.0

    net = build(ModelConfig(n_levels=10, feat_dim=32, hidden=8, n_classes=6), rng)
    trained = evaluate(net, test_set)
    assert trained.auc == float(np.mean(trained.per_level_acc))
    record_property("detail", f"{len(test_set)} test samples, worst level {worst:.2f} sigma from 1/C")
