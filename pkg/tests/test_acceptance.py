"""End-to-end acceptance checks, one test per criterion.

Each test carries ``@pytest.mark.acceptance(number, title)``; the conftest hook
prints one ``[PASS]``/``[FAIL]`` line per criterion at the end of the session.
The file also runs standalone: ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import itertools
import statistics
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from cohortparity import cli
from cohortparity import evaluate as ev
from cohortparity import model as clf
from cohortparity.cluster import adjusted_rand_index, cluster_users, kmeans
from cohortparity.cohorts import CohortAssignment, derive_categorical
from cohortparity.data import SyntheticConfig, featurize, generate_synthetic
from cohortparity.model import Batch, ModelConfig
from cohortparity.trainer import (
    CohortLossState, TrainConfig, parity_penalty, step_direction, total_loss, train,
)
from cohortparity.userlm import LMConfig, build_vocab, init_lm, sequence_loss_and_grads, train_lm
from cohortparity.userlm import user_embeddings

sys.path.insert(0, str(Path(__file__).parent))
from helpers import central_difference, rel_error, sample_coordinates  # noqa: E402


class Budget:
    """Context manager asserting a wall-clock limit."""

    def __init__(self, seconds: float):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f}s, limit {self.seconds}s"


def _same_bits(a, b) -> bool:
    return all(x.tobytes() == y.tobytes() for x, y in zip(a.arrays(), b.arrays()))


# ---------------------------------------------------------------------------
# 1


def _reference_sgd(ds, X, mc, tc):
    """Minibatch SGD written from scratch against the model API only."""
    rng = np.random.default_rng(tc.seed)
    params = clf.init(X.dim, ds.num_classes, mc.H, mc.seed)
    labels, lr = ds.labels, tc.lr
    for _ in range(tc.epochs):
        perm = rng.permutation(len(ds))
        for start in range(0, len(ds), tc.batch_size):
            idx = perm[start:start + tc.batch_size]
            b = Batch(X.rows(idx), labels[idx], idx)
            params = params.sgd_update(clf.grad(params, b, np.ones(len(idx))), lr)
        lr *= tc.lr_decay
    return params


@pytest.mark.acceptance(1, "lambda=0 training is bitwise plain SGD")
def test_lambda_zero_is_plain_sgd():
    with Budget(30):
        ds = generate_synthetic(SyntheticConfig(num_groups=2, users_per_group=5,
                                                examples_per_user=40,
                                                group_label_noise=(0.05, 0.3), seed=7))
        groups = derive_categorical(ds, "group")
        for H, mode, reduction in [(None, "batch", "mean"), (8, "running", "sum"),
                                   (None, "running", "mean"), (8, "batch", "sum")]:
            mc = ModelConfig(F=128, H=H, seed=3)
            tc = TrainConfig(lam=0.0, epochs=4, batch_size=32, seed=5,
                             cohort_loss_mode=mode, cohort_reduction=reduction)
            X = featurize(ds, mc.F)
            got, _ = train(ds, groups, mc, tc, features=X)
            assert _same_bits(got, _reference_sgd(ds, X, mc, tc)), (H, mode, reduction)


# ---------------------------------------------------------------------------
# 2


def _classifier_setup(rng, H):
    ds = generate_synthetic(SyntheticConfig(num_groups=3, users_per_group=2,
                                            examples_per_user=6, num_classes=3,
                                            group_label_noise=(0.1, 0.2, 0.3), seed=11))
    X = featurize(ds, 24)
    params = clf.init(24, 3, H=H, seed=2)
    params = params.with_arrays([a + 0.5 * rng.standard_normal(a.shape) for a in params.arrays()])
    idx = np.arange(len(ds))
    return ds, params, Batch(X.rows(idx), ds.labels, idx)


def _smooth(params, batch):
    if params.H is None:
        return True
    pre = batch.X.to_dense() @ params.W1 + params.b1
    return np.abs(pre).min() > 1e-3


@pytest.mark.acceptance(2, "finite-difference gradient checks")
def test_gradient_checks():
    rng = np.random.default_rng(2024)
    with Budget(60):
        worst_loss = worst_step = 0.0
        checked_loss = checked_step = 0

        for H in (None, 5):
            ds, params, batch = _classifier_setup(rng, H)
            while not _smooth(params, batch):
                ds, params, batch = _classifier_setup(rng, H)
            w = np.ones(len(batch))
            g = clf.grad(params, batch, w).arrays()
            arrays = params.arrays()

            def mean_loss():
                return float(clf.example_losses(params, batch.X, batch.labels).mean())

            for k, index in sample_coordinates(rng, arrays, 60):
                num = central_difference(mean_loss, arrays, k, index, 1e-5)
                worst_loss = max(worst_loss, rel_error(g[k][index], num))
                checked_loss += 1

            groups = derive_categorical(ds, "group")
            for reduction in ("mean", "sum"):
                cfg = TrainConfig(lam=0.7, cohort_reduction=reduction, min_cohort_batch=1)
                d = step_direction(params, batch, groups, cfg, CohortLossState()).arrays()

                def objective():
                    return total_loss(params, batch, groups, cfg.lam, reduction)

                for k, index in sample_coordinates(rng, arrays, 60):
                    num = central_difference(objective, arrays, k, index, 1e-5)
                    worst_step = max(worst_step, rel_error(d[k][index], num))
                    checked_step += 1

        corpus = generate_synthetic(SyntheticConfig(num_groups=2, users_per_group=2,
                                                    examples_per_user=3, vocab_size=20,
                                                    max_tokens=8, group_label_noise=(0.1, 0.1), seed=3))
        vocab = build_vocab(corpus)
        lm = init_lm(vocab, 6, 5, seed=1)
        for p in lm.params():
            p += 0.3 * rng.standard_normal(p.shape)
        seqs = [vocab.encode(ex.text, ex.user_id) for ex in corpus.examples]
        _, grads = sequence_loss_and_grads(lm, seqs)
        lm_arrays = lm.params()
        worst_lm = 0.0
        for k, index in sample_coordinates(rng, lm_arrays, 150):
            num = central_difference(lambda: sequence_loss_and_grads(lm, seqs)[0],
                                     lm_arrays, k, index, 1e-5)
            worst_lm = max(worst_lm, rel_error(grads[k][index], num))

    print(f"example loss: {checked_loss} coords, worst rel {worst_loss:.2e}")
    print(f"step direction: {checked_step} coords, worst rel {worst_step:.2e}")
    print(f"language model: 150 coords, worst rel {worst_lm:.2e}")
    assert checked_loss >= 100 and checked_step >= 100
    assert worst_loss < 1e-5
    assert worst_step < 1e-5
    assert worst_lm < 1e-4


# ---------------------------------------------------------------------------
# 3

GRID = (0.0, 0.25, 0.5, 1.0, 2.0)


@pytest.mark.acceptance(3, "parity penalty algebra, exhaustive")
def test_penalty_algebra():
    checked = 0
    with Budget(10):
        for k in range(1, 5):
            for values in itertools.product(GRID, repeat=k):
                losses = dict(enumerate(values))
                value, (hi, lo) = parity_penalty(losses)
                assert value == max(values) - min(values)
                assert value >= 0
                assert (value == 0) == (len(set(values)) == 1)
                assert losses[hi] == max(values) and losses[lo] == min(values)
                for shift in (0.5, 3.0, -0.25):
                    shifted, _ = parity_penalty({c: v + shift for c, v in losses.items()})
                    assert shifted == value
                for scale in (0.5, 3.0, 1e3):
                    _, pair = parity_penalty({c: v * scale for c, v in losses.items()})
                    assert pair == (hi, lo)
                checked += 1
    assert checked == sum(5 ** k for k in range(1, 5))


# ---------------------------------------------------------------------------
# 4

SWEEP_DATA = SyntheticConfig(num_groups=2, users_per_group=50, examples_per_user=200,
                             group_label_noise=(0.05, 0.30), seed=0)
SWEEP_MODEL = ModelConfig(F=128)
SWEEP_TRAIN = TrainConfig(lr=5.0, lr_decay=0.85, epochs=30, batch_size=64)


@pytest.mark.acceptance(4, "parity penalty narrows the group accuracy spread")
def test_lambda_sweep_reduces_disparity():
    with Budget(300):
        ds = generate_synthetic(SWEEP_DATA)
        assert len(ds) >= 4000
        result = ev.lambda_sweep(ds, [derive_categorical(ds, "group")], (0.0, 0.5, 0.8),
                                 SWEEP_MODEL, SWEEP_TRAIN)
    std = result.std_devs("group")
    overall = result.overall("group")
    print(f"std_dev_pp {std}, overall {overall}")
    assert std[0.8] <= 0.9 * std[0.0]
    assert overall[0.0] - overall[0.8] <= 0.03


# ---------------------------------------------------------------------------
# 5


@pytest.mark.acceptance(5, "implicit cohorts recover groups (median ARI)")
def test_implicit_cohorts_recover_groups():
    scores = []
    with Budget(600):
        for seed in range(3):
            ds = generate_synthetic(SyntheticConfig(num_groups=4, group_vocab_skew=0.9, seed=seed))
            group = {ex.user_id: ex.attrs["group"] for ex in ds.examples}
            assert len(group) >= 40
            lm = train_lm(ds, LMConfig(seed=seed))
            users, fit = cluster_users(user_embeddings(lm), 4, seed=seed)
            scores.append(adjusted_rand_index([group[u] for u in users], fit.labels))
    print(f"ARI per seed {scores}")
    assert statistics.median(scores) >= 0.8


# ---------------------------------------------------------------------------
# 6


def _brute_force_optimum(X, k=2):
    best = np.inf
    for labels in itertools.product(range(k), repeat=len(X)):
        labels = np.array(labels)
        if len(np.unique(labels)) < k:
            continue
        C = np.array([X[labels == c].mean(axis=0) for c in range(k)])
        d2 = ((X[:, None, :] - C[None]) ** 2).sum(axis=2)
        # a Lloyd fixed point: every point already sits with its nearest centroid
        if (d2[np.arange(len(X)), labels] <= d2.min(axis=1) + 1e-12).all():
            best = min(best, float(d2[np.arange(len(X)), labels].sum()))
    return best


@pytest.mark.acceptance(6, "restarted k-means reaches the brute-force optimum")
def test_kmeans_brute_force():
    rng = np.random.default_rng(6)
    with Budget(10):
        for _ in range(5):
            X = rng.normal(size=(8, 2)) + rng.choice([-2.0, 2.0], size=(8, 1))
            optimum = _brute_force_optimum(X)
            runs = [kmeans(X, 2, seed=s) for s in range(20)]
            for r in runs:
                assert (np.diff(r.inertia_history) <= 1e-12).all()
            assert min(r.inertia for r in runs) - optimum <= 1e-9


# ---------------------------------------------------------------------------
# 7


def _count_gaps(preds, labels, ids, k, positive):
    """DP and EO gaps from explicit integer counts."""
    rates, tprs, fprs = [], [], []
    for c in range(k):
        members = [i for i in range(len(ids)) if ids[i] == c]
        if not members:
            continue
        hits = sum(1 for i in members if preds[i] in positive)
        rates.append(hits / len(members))
        tp = sum(1 for i in members if labels[i] in positive and preds[i] in positive)
        p = sum(1 for i in members if labels[i] in positive)
        fp = sum(1 for i in members if labels[i] not in positive and preds[i] in positive)
        n = len(members) - p
        if p and n:
            tprs.append(tp / p)
            fprs.append(fp / n)
    dp = max(rates) - min(rates)
    eo = (max(tprs) - min(tprs), max(fprs) - min(fprs)) if tprs else None
    return dp, eo


@pytest.mark.acceptance(7, "fairness gaps equal brute-force counts")
def test_fairness_gaps_exact():
    rng = np.random.default_rng(7)
    with Budget(10):
        eo_checked = 0
        for _ in range(50):
            n, k, C = int(rng.integers(10, 60)), int(rng.integers(2, 5)), int(rng.integers(2, 4))
            ids = rng.integers(0, k, n)
            preds, labels = rng.integers(0, C, n), rng.integers(0, C, n)
            positive = {int(c) for c in rng.choice(C, size=int(rng.integers(1, C)), replace=False)}
            a = CohortAssignment("x", ids, tuple(f"c{i}" for i in range(k)))
            dp, eo = _count_gaps(preds.tolist(), labels.tolist(), ids.tolist(), k, positive)
            assert ev.demographic_parity_gap(preds, a, positive) == dp
            if eo is not None:
                assert ev.equalized_odds_gap(preds, labels, a, positive) == eo
                eo_checked += 1
        assert eo_checked >= 40


# ---------------------------------------------------------------------------
# 8

PIPELINE = ("synth", "train-lm", "cluster", "train", "eval")


@pytest.mark.acceptance(8, "pipeline outputs are byte-identical across runs")
def test_pipeline_deterministic(tmp_path):
    with Budget(900):
        for name in ("a", "b"):
            for command in PIPELINE:
                assert cli.main([command, "--out", str(tmp_path / name)]) == 0, command
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    assert len(files) == 11
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
