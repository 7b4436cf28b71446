"""Per-cohort metrics, disparity summaries, fairness gaps, lambda sweeps, reports.

Accuracy is exact label match. The disparity standard deviation uses the
population formula over per-cohort accuracies and is reported in percentage
points (multiplied by 100).
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Collection, Sequence

import numpy as np

from . import model as clf
from .cohorts import CohortAssignment
from .data import Dataset, FeatureMatrix, featurize, split_indices
from .model import ClassifierParams, ModelConfig
from .trainer import TrainConfig, train

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("assignment", "cohort", "count", "accuracy", "mean_loss")
SUMMARY_COLUMNS = ("assignment", "lambda", "std_dev_pp", "max_gap", "overall_acc")
FORMATS = ("csv", "json", "markdown")


@dataclass(frozen=True)
class CohortMetrics:
    """Metrics of the nonempty cohorts of one assignment, in cohort-id order.

    ``predictions`` caches the per-example predictions the numbers came from; it
    is not part of equality or serialization.
    """

    assignment: str
    cohort_ids: tuple[int, ...]
    cohort_names: tuple[str, ...]
    counts: tuple[int, ...]
    correct: tuple[int, ...]
    accuracy: tuple[float, ...]
    mean_loss: tuple[float, ...]
    notes: tuple[str, ...] = ()
    predictions: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        n = len(self.cohort_ids)
        if not all(len(x) == n for x in (self.cohort_names, self.counts, self.correct,
                                         self.accuracy, self.mean_loss)):
            raise ValueError("per-cohort fields differ in length")
        if any(not 0.0 <= a <= 1.0 for a in self.accuracy):
            raise ValueError("accuracy outside [0, 1]")

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def overall_accuracy(self) -> float:
        return sum(self.correct) / self.total


def _empty_notes(assignment: CohortAssignment, counts: np.ndarray) -> list[str]:
    notes = []
    for c in np.nonzero(counts == 0)[0]:
        notes.append(f"cohort {assignment.cohort_names[c]!r} has no examples; omitted")
    for name in assignment.flagged_empty:
        if name not in assignment.cohort_names:
            notes.append(f"cohort {name!r} has no examples; omitted")
    return notes


def metrics_from_predictions(
    predictions: np.ndarray,
    labels: np.ndarray,
    losses: np.ndarray,
    assignment: CohortAssignment,
) -> CohortMetrics:
    """Group per-example predictions and losses by cohort."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    losses = np.asarray(losses, dtype=np.float64)
    n = len(predictions)
    if n == 0:
        raise ValueError("cannot evaluate on an empty test set")
    if not len(labels) == len(losses) == len(assignment) == n:
        raise ValueError("predictions, labels, losses and assignment differ in length")
    k = assignment.num_cohorts
    counts = np.bincount(assignment.labels, minlength=k)
    correct = np.bincount(assignment.labels, weights=(predictions == labels), minlength=k)
    loss_sum = np.bincount(assignment.labels, weights=losses, minlength=k)
    live = np.nonzero(counts > 0)[0]
    return CohortMetrics(
        assignment=assignment.name,
        cohort_ids=tuple(int(c) for c in live),
        cohort_names=tuple(assignment.cohort_names[c] for c in live),
        counts=tuple(int(counts[c]) for c in live),
        correct=tuple(int(correct[c]) for c in live),
        accuracy=tuple(float(correct[c] / counts[c]) for c in live),
        mean_loss=tuple(float(loss_sum[c] / counts[c]) for c in live),
        notes=tuple(_empty_notes(assignment, counts)),
        predictions=predictions,
    )


def per_cohort_accuracy(
    params: ClassifierParams,
    dataset: Dataset,
    assignment: CohortAssignment,
    features: FeatureMatrix | None = None,
) -> CohortMetrics:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    X = features if features is not None else featurize(dataset, params.F)
    labels = dataset.labels
    return metrics_from_predictions(
        clf.predict(params, X), labels, clf.example_losses(params, X, labels), assignment
    )


@dataclass(frozen=True)
class DisparityReport:
    assignment: str
    metrics: CohortMetrics
    std_dev_pp: float
    max_gap: float
    best: str
    worst: str
    overall_accuracy: float
    fairness: dict[str, float] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        m = self.metrics
        return {
            "assignment": self.assignment,
            "std_dev_pp": self.std_dev_pp,
            "max_gap": self.max_gap,
            "best": self.best,
            "worst": self.worst,
            "overall_accuracy": self.overall_accuracy,
            "fairness": dict(self.fairness),
            "notes": list(self.notes),
            "cohorts": [
                {"id": i, "cohort": name, "count": n, "correct": k,
                 "accuracy": acc, "mean_loss": loss}
                for i, name, n, k, acc, loss in zip(m.cohort_ids, m.cohort_names, m.counts,
                                                    m.correct, m.accuracy, m.mean_loss)
            ],
            "metric_notes": list(m.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DisparityReport":
        rows = d["cohorts"]
        metrics = CohortMetrics(
            assignment=d["assignment"],
            cohort_ids=tuple(r["id"] for r in rows),
            cohort_names=tuple(r["cohort"] for r in rows),
            counts=tuple(r["count"] for r in rows),
            correct=tuple(r["correct"] for r in rows),
            accuracy=tuple(r["accuracy"] for r in rows),
            mean_loss=tuple(r["mean_loss"] for r in rows),
            notes=tuple(d.get("metric_notes", ())),
        )
        return cls(d["assignment"], metrics, d["std_dev_pp"], d["max_gap"], d["best"],
                   d["worst"], d["overall_accuracy"], dict(d.get("fairness", {})),
                   tuple(d.get("notes", ())))


def disparity_stats(metrics: CohortMetrics) -> DisparityReport:
    """Spread of per-cohort accuracies.

    Best and worst cohorts are the first (lowest id) attaining the max and min.
    """
    if not metrics.accuracy:
        raise ValueError("need at least one nonempty cohort")
    acc = np.array(metrics.accuracy)
    best, worst = int(np.argmax(acc)), int(np.argmin(acc))
    return DisparityReport(
        assignment=metrics.assignment,
        metrics=metrics,
        std_dev_pp=float(np.std(acc) * 100.0),
        max_gap=float(acc[best] - acc[worst]),
        best=metrics.cohort_names[best],
        worst=metrics.cohort_names[worst],
        overall_accuracy=metrics.overall_accuracy,
        notes=metrics.notes,
    )


# ---------------------------------------------------------------------------
# fairness gaps (binarized through a caller-supplied positive-class set)


def _positive(values, positive_classes: Collection[int]) -> np.ndarray:
    if not positive_classes:
        raise ValueError("positive class set is empty")
    return np.isin(np.asarray(values, dtype=np.int64), np.fromiter(positive_classes, np.int64))


def _spread(rates: Sequence[float]) -> float:
    return float(max(rates) - min(rates)) if rates else 0.0


def demographic_parity_gap(
    predictions,
    assignment: CohortAssignment,
    positive_classes: Collection[int],
    notes: list[str] | None = None,
) -> float:
    """Max minus min over cohorts of the positive-prediction rate.

    Empty cohorts are skipped; a message for each is appended to ``notes`` when
    a list is given.
    """
    pos = _positive(predictions, positive_classes)
    if len(pos) != len(assignment):
        raise ValueError("predictions and assignment differ in length")
    if assignment.num_cohorts < 2:
        raise ValueError("demographic parity needs at least two cohorts")
    counts = np.bincount(assignment.labels, minlength=assignment.num_cohorts)
    hits = np.bincount(assignment.labels, weights=pos, minlength=assignment.num_cohorts)
    rates = []
    for c in range(assignment.num_cohorts):
        if counts[c] == 0:
            if notes is not None:
                notes.append(f"demographic parity: cohort {assignment.cohort_names[c]!r} is empty")
            continue
        rates.append(hits[c] / counts[c])
    return _spread(rates)


def equalized_odds_gap(
    predictions,
    labels,
    assignment: CohortAssignment,
    positive_classes: Collection[int],
    notes: list[str] | None = None,
) -> tuple[float, float]:
    """``(tpr_gap, fpr_gap)`` across cohorts that have both label outcomes."""
    pred = _positive(predictions, positive_classes)
    truth = _positive(labels, positive_classes)
    if not len(pred) == len(truth) == len(assignment):
        raise ValueError("predictions, labels and assignment differ in length")
    tprs, fprs = [], []
    for c in range(assignment.num_cohorts):
        member = assignment.labels == c
        n_pos = int((member & truth).sum())
        n_neg = int((member & ~truth).sum())
        if n_pos == 0 or n_neg == 0:
            if notes is not None:
                notes.append(f"equalized odds: cohort {assignment.cohort_names[c]!r} lacks "
                             f"{'positive' if n_pos == 0 else 'negative'} examples; omitted")
            continue
        tprs.append((member & truth & pred).sum() / n_pos)
        fprs.append((member & ~truth & pred).sum() / n_neg)
    if not tprs:
        raise ValueError("no cohort has both positive and negative examples")
    return _spread(tprs), _spread(fprs)


def with_fairness(
    report: DisparityReport,
    labels,
    assignment: CohortAssignment,
    positive_classes: Collection[int],
) -> DisparityReport:
    """Attach demographic-parity and equalized-odds gaps computed from the
    report's cached predictions."""
    preds = report.metrics.predictions
    if preds is None:
        raise ValueError("report has no cached predictions")
    notes = list(report.notes)
    fairness = {}
    if assignment.num_cohorts >= 2:
        fairness["dp_gap"] = demographic_parity_gap(preds, assignment, positive_classes, notes)
    try:
        tpr, fpr = equalized_odds_gap(preds, labels, assignment, positive_classes, notes)
        fairness["tpr_gap"], fairness["fpr_gap"] = tpr, fpr
    except ValueError as exc:
        notes.append(f"equalized odds unavailable: {exc}")
    return replace(report, fairness=fairness, notes=tuple(notes))


# ---------------------------------------------------------------------------
# lambda sweep


@dataclass(frozen=True)
class SweepRow:
    assignment: str
    lam: float
    std_dev_pp: float
    max_gap: float
    overall_acc: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    reports: dict[float, tuple[DisparityReport, ...]] = field(default_factory=dict, compare=False)

    def std_devs(self, assignment: str) -> dict[float, float]:
        return {r.lam: r.std_dev_pp for r in self.rows if r.assignment == assignment}

    def overall(self, assignment: str) -> dict[float, float]:
        return {r.lam: r.overall_acc for r in self.rows if r.assignment == assignment}


DEFAULT_LAMBDAS = (0.0, 0.5, 0.8)


def lambda_sweep(
    dataset: Dataset,
    assignments: Sequence[CohortAssignment],
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    test_fraction: float = 0.2,
    split_seed: int = 0,
    train_on: int = 0,
) -> SweepResult:
    """Retrain once per lambda from identical seeds and evaluate every assignment.

    The parity penalty uses ``assignments[train_on]``; all assignments are
    scored on the same held-out split.
    """
    if not lambdas:
        raise ValueError("lambdas must be nonempty")
    if not assignments:
        raise ValueError("need at least one assignment")
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    train_idx, test_idx = split_indices(dataset, test_fraction, split_seed)
    train_set, test_set = dataset.subset(train_idx), dataset.subset(test_idx)
    X_all = featurize(dataset, model_config.F)
    X_train, X_test = X_all.rows(train_idx), X_all.rows(test_idx)
    guide = assignments[train_on].restrict(train_idx)
    tests = [a.restrict(test_idx) for a in assignments]

    rows, reports = [], {}
    for lam in lambdas:
        params, _ = train(train_set, guide, model_config, replace(train_config, lam=float(lam)),
                          features=X_train)
        per = tuple(disparity_stats(per_cohort_accuracy(params, test_set, a, X_test))
                    for a in tests)
        reports[float(lam)] = per
        for rep in per:
            rows.append(SweepRow(rep.assignment, float(lam), rep.std_dev_pp, rep.max_gap,
                                 rep.overall_accuracy))
            logger.info("lambda=%g %s std=%.3f gap=%.4f acc=%.4f", lam, rep.assignment,
                        rep.std_dev_pp, rep.max_gap, rep.overall_accuracy)
    return SweepResult(tuple(rows), reports)


# ---------------------------------------------------------------------------
# serialization


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _markdown(reports: Sequence[DisparityReport]) -> str:
    lines = []
    footer = []
    for rep in reports:
        m = rep.metrics
        lines.append(f"## {rep.assignment}")
        lines.append("")
        lines.append("| Cohort | Count | Accuracy | Mean loss |")
        lines.append("|---|---:|---:|---:|")
        for name, n, acc, loss in zip(m.cohort_names, m.counts, m.accuracy, m.mean_loss):
            lines.append(f"| {name} | {n} | {acc:.4f} | {loss:.4f} |")
        lines.append("")
        lines.append(f"Overall accuracy: {rep.overall_accuracy:.4f}  ")
        lines.append(f"Std dev (pp): {rep.std_dev_pp:.2f}  ")
        lines.append(f"Max gap: {rep.max_gap:.4f} (best {rep.best}, worst {rep.worst})  ")
        for key in sorted(rep.fairness):
            lines.append(f"{key}: {rep.fairness[key]:.4f}  ")
        lines.append("")
        footer.extend(f"{rep.assignment}: {note}" for note in rep.notes)
    if footer:
        lines.append("---")
        lines.append("")
        lines.append("Notes:")
        lines.append("")
        lines.extend(f"- {note}" for note in footer)
        lines.append("")
    return "\n".join(lines)


def render_report(reports: DisparityReport | Sequence[DisparityReport], fmt: str) -> str:
    if isinstance(reports, DisparityReport):
        reports = [reports]
    if fmt == "csv":
        rows = []
        for rep in reports:
            m = rep.metrics
            rows.extend((rep.assignment, name, n, repr(acc), repr(loss))
                        for name, n, acc, loss in zip(m.cohort_names, m.counts, m.accuracy,
                                                      m.mean_loss))
        return _csv_text(REPORT_COLUMNS, rows)
    if fmt == "json":
        return json.dumps({"reports": [r.to_dict() for r in reports]}, indent=2,
                          sort_keys=True) + "\n"
    if fmt == "markdown":
        return _markdown(reports)
    raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")


def emit_report(reports: DisparityReport | Sequence[DisparityReport], fmt: str,
                path: str | Path) -> Path:
    """Write a report deterministically; raises ``OSError`` if unwritable."""
    text = render_report(reports, fmt)
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def read_report_json(path: str | Path) -> list[DisparityReport]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return [DisparityReport.from_dict(d) for d in raw["reports"]]


def write_summary_csv(result: SweepResult, path: str | Path) -> Path:
    rows = [(r.assignment, repr(r.lam), repr(r.std_dev_pp), repr(r.max_gap), repr(r.overall_acc))
            for r in result.rows]
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_csv_text(SUMMARY_COLUMNS, rows))
    return path


def read_summary_csv(path: str | Path) -> SweepResult:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [SweepRow(r["assignment"], float(r["lambda"]), float(r["std_dev_pp"]),
                         float(r["max_gap"]), float(r["overall_acc"])) for r in reader]
    return SweepResult(tuple(rows))


__all__ = [
    "CohortMetrics", "DisparityReport", "SweepRow", "SweepResult", "metrics_from_predictions",
    "per_cohort_accuracy", "disparity_stats", "demographic_parity_gap", "equalized_odds_gap",
    "with_fairness", "lambda_sweep", "render_report", "emit_report", "read_report_json",
    "write_summary_csv", "read_summary_csv",
]
