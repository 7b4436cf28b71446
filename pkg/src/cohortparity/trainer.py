"""Minibatch SGD on overall loss plus a best/worst cohort parity penalty.

The objective for a batch is::

    mean_loss + lam * (loss[worst cohort] - loss[best cohort])

Cohort losses are per-cohort means by default (``cohort_reduction="mean"``).
``"sum"`` keeps the literal form where both the overall term and the cohort
terms are sums; the whole objective is then divided by the batch size, so
a cohort's loss is its summed loss over the batch divided by the batch size. The worst/best pair is
re-selected every step, from the batch itself when every cohort present has
at least ``min_cohort_batch`` members, otherwise from exponential running
means. The penalty gradient is the subgradient belonging to that pair.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import model as clf
from .cohorts import CohortAssignment
from .data import Dataset, FeatureMatrix, featurize
from .model import Batch, ClassifierParams, ModelConfig

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    epochs: int = 30
    batch_size: int = 64
    lr: float = 5.0
    lr_decay: float = 0.85
    min_cohort_batch: int = 4
    seed: int = 0
    cohort_loss_mode: str = "batch"
    running_decay: float = 0.9
    cohort_reduction: str = "mean"

    def validate(self) -> None:
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.min_cohort_batch < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and min_cohort_batch >= 1 required")
        if self.lr <= 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("lr must be > 0 and lr_decay in (0, 1]")
        if self.cohort_loss_mode not in ("batch", "running"):
            raise ValueError("cohort_loss_mode must be 'batch' or 'running'")
        if not 0 < self.running_decay < 1:
            raise ValueError("running_decay must lie in (0, 1)")
        if self.cohort_reduction not in ("mean", "sum"):
            raise ValueError("cohort_reduction must be 'mean' or 'sum'")


@dataclass
class CohortLossState:
    """Exponential moving average of each cohort's batch loss."""

    decay: float = 0.9
    means: dict[int, float] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)

    def update(self, batch_losses: Mapping[int, float]) -> None:
        for c, v in batch_losses.items():
            if c in self.means:
                self.means[c] = self.decay * self.means[c] + (1.0 - self.decay) * v
            else:
                self.means[c] = v
            self.counts[c] = self.counts.get(c, 0) + 1


@dataclass
class EpochRecord:
    epoch: int
    overall_loss: float
    penalty: float
    pair_counts: Counter
    cohort_loss: dict[str, float]

    @property
    def top_pair(self) -> tuple[int, int] | None:
        if not self.pair_counts:
            return None
        # most frequent; ties to the smallest pair
        return min(self.pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def cohort_columns(self) -> list[str]:
        return list(dict.fromkeys(n for r in self.records for n in r.cohort_loss))

    def to_csv(self, path: str | Path) -> None:
        cols = self.cohort_columns()
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "overall_loss", "penalty", "pair_i", "pair_j"]
                       + [f"loss[{c}]" for c in cols])
            for r in self.records:
                pair = r.top_pair or ("", "")
                w.writerow([r.epoch, repr(r.overall_loss), repr(r.penalty), pair[0], pair[1]]
                           + [repr(r.cohort_loss[c]) if c in r.cohort_loss else "" for c in cols])


# ---------------------------------------------------------------------------
# objective pieces


def _cohort_stats(losses: np.ndarray, ids: np.ndarray, reduction: str = "mean"):
    """Per-cohort reduced loss and member count for cohorts present in a batch."""
    out, counts = {}, {}
    for c in np.unique(ids).tolist():
        sel = losses[ids == c]
        counts[c] = len(sel)
        out[c] = float(sel.sum() / len(losses)) if reduction == "sum" else float(sel.mean())
    return out, counts


def cohort_losses(
    params: ClassifierParams, batch: Batch, assignment: CohortAssignment, reduction: str = "mean"
) -> dict[int, float]:
    losses = clf.example_losses(params, batch.X, batch.labels)
    return _cohort_stats(losses, assignment.labels[batch.indices], reduction)[0]


def parity_penalty(losses: Mapping[int, float]) -> tuple[float, tuple[int, int]]:
    """``(max - min, (argmax, argmin))`` with ties to the lowest cohort id."""
    if not losses:
        raise ValueError("empty cohort loss map")
    ids = sorted(losses)
    hi = lo = ids[0]
    for c in ids[1:]:
        if losses[c] > losses[hi]:
            hi = c
        if losses[c] < losses[lo]:
            lo = c
    return losses[hi] - losses[lo], (hi, lo)


def total_loss(
    params: ClassifierParams,
    batch: Batch,
    assignment: CohortAssignment,
    lam: float,
    reduction: str = "mean",
) -> float:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    losses = clf.example_losses(params, batch.X, batch.labels)
    mean = float(losses.mean())
    if lam == 0:
        return mean
    value, _ = parity_penalty(_cohort_stats(losses, assignment.labels[batch.indices], reduction)[0])
    return mean + lam * value


@dataclass
class StepInfo:
    penalty: float
    pair: tuple[int, int]
    losses: np.ndarray
    from_running: bool


def _step(params, batch, cohort_ids, cfg: TrainConfig, state: CohortLossState, lr: float):
    _, losses, cache = clf.forward_cache(params, batch)
    ones = np.ones(len(batch))
    g = clf.grad_from_cache(params, batch, cache, ones)

    batch_map, counts = _cohort_stats(losses, cohort_ids, cfg.cohort_reduction)
    state.update(batch_map)
    use_batch = cfg.cohort_loss_mode == "batch" and all(
        n >= cfg.min_cohort_batch for n in counts.values())
    penalty, pair = parity_penalty(batch_map if use_batch else state.means)

    if cfg.lam != 0 and pair[0] != pair[1]:
        arrays = g.arrays()
        for cohort, sign in ((pair[0], 1.0), (pair[1], -1.0)):
            member = (cohort_ids == cohort).astype(np.float64)
            n = member.sum()
            if n == 0:
                continue
            gc = clf.grad_from_cache(params, batch, cache, member)
            scale = sign * cfg.lam * (n / len(batch) if cfg.cohort_reduction == "sum" else 1.0)
            arrays = [a + scale * b for a, b in zip(arrays, gc.arrays())]
        g = g.with_arrays(arrays)

    if not g.all_finite():
        raise TrainingError("non-finite gradient")
    new = params.sgd_update(g, lr)
    if not new.all_finite():
        raise TrainingError("parameters overflowed to non-finite values")
    return new, StepInfo(penalty, pair, losses, not use_batch)


def step(
    params: ClassifierParams,
    batch: Batch,
    assignment: CohortAssignment,
    config: TrainConfig,
    state: CohortLossState | None = None,
    lr: float | None = None,
) -> tuple[ClassifierParams, float, tuple[int, int]]:
    """One subgradient step; returns ``(new_params, penalty, (worst, best))``."""
    if state is None:
        state = CohortLossState(config.running_decay)
    new, info = _step(params, batch, assignment.labels[batch.indices], config, state,
                      config.lr if lr is None else lr)
    return new, info.penalty, info.pair


def step_direction(params, batch, assignment, config, state=None) -> ClassifierParams:
    """The vector the step moves against, i.e. ``(params - step(params)) / lr``."""
    if state is None:
        state = CohortLossState(config.running_decay)
    new, _ = _step(params, batch, assignment.labels[batch.indices], config, state, 1.0)
    return params.with_arrays([p - q for p, q in zip(params.arrays(), new.arrays())])


# ---------------------------------------------------------------------------
# loops


def _prepare(dataset, model_config, features):
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    X = features if features is not None else featurize(dataset, model_config.F)
    if X.n_rows != len(dataset):
        raise ValueError("features do not match dataset size")
    params = clf.init(X.dim, dataset.num_classes, model_config.H, model_config.seed)
    return X, dataset.labels, params


def _batches(rng, n, batch_size):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def train(
    dataset: Dataset,
    assignment: CohortAssignment | Sequence[CohortAssignment],
    model_config: ModelConfig,
    train_config: TrainConfig,
    features: FeatureMatrix | None = None,
) -> tuple[ClassifierParams, TrainHistory]:
    """Train with the parity penalty.

    ``assignment`` may be a sequence of assignments; epoch ``e`` then uses
    ``assignment[e % len(assignment)]``, which lets cohort granularity change
    during training. Running cohort means reset whenever the assignment changes.
    """
    train_config.validate()
    schedule = [assignment] if isinstance(assignment, CohortAssignment) else list(assignment)
    if not schedule:
        raise ValueError("need at least one assignment")
    for a in schedule:
        if len(a) != len(dataset):
            raise ValueError(f"assignment {a.name!r} covers {len(a)} examples, dataset has {len(dataset)}")
    X, labels, params = _prepare(dataset, model_config, features)
    rng = np.random.default_rng(train_config.seed)
    history = TrainHistory()
    lr = train_config.lr
    state = CohortLossState(train_config.running_decay)
    for epoch in range(train_config.epochs):
        current = schedule[epoch % len(schedule)]
        if len(schedule) > 1:
            state = CohortLossState(train_config.running_decay)
        loss_sum = np.zeros(current.num_cohorts)
        loss_n = np.zeros(current.num_cohorts)
        penalties, pairs = [], Counter()
        for b, idx in enumerate(_batches(rng, len(dataset), train_config.batch_size)):
            batch = Batch(X.rows(idx), labels[idx], idx)
            ids = current.labels[idx]
            try:
                params, info = _step(params, batch, ids, train_config, state, lr)
            except TrainingError as exc:
                raise TrainingError(f"{exc} at epoch {epoch}, batch {b}") from None
            np.add.at(loss_sum, ids, info.losses)
            np.add.at(loss_n, ids, 1.0)
            penalties.append(info.penalty)
            pairs[info.pair] += 1
        seen = loss_n > 0
        history.records.append(EpochRecord(
            epoch=epoch,
            overall_loss=float(loss_sum.sum() / loss_n.sum()),
            penalty=float(np.mean(penalties)),
            pair_counts=pairs,
            cohort_loss={current.cohort_names[c]: float(loss_sum[c] / loss_n[c])
                         for c in np.nonzero(seen)[0]},
        ))
        logger.debug("epoch %d loss %.4f penalty %.4f", epoch,
                     history.records[-1].overall_loss, history.records[-1].penalty)
        lr *= train_config.lr_decay
    return params, history


def train_sgd(
    dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    features: FeatureMatrix | None = None,
) -> ClassifierParams:
    """Plain minibatch SGD on the mean loss, with the same shuffling and lr schedule."""
    train_config.validate()
    X, labels, params = _prepare(dataset, model_config, features)
    rng = np.random.default_rng(train_config.seed)
    lr = train_config.lr
    for _ in range(train_config.epochs):
        for idx in _batches(rng, len(dataset), train_config.batch_size):
            batch = Batch(X.rows(idx), labels[idx], idx)
            params = params.sgd_update(clf.grad(params, batch, np.ones(len(idx))), lr)
        lr *= train_config.lr_decay
    return params


# ---------------------------------------------------------------------------
# config file: flat JSON object whose keys are TrainConfig field names

def load_train_config(path: str | Path) -> TrainConfig:
    import json
    from dataclasses import fields

    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a JSON object")
    names = {f.name for f in fields(TrainConfig)}
    if "lambda" in raw:
        raw["lam"] = raw.pop("lambda")
    unknown = set(raw) - names
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    cfg = TrainConfig(**raw)
    cfg.validate()
    return cfg
