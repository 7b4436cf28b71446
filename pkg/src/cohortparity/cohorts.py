"""Cohort partitions: explicit attributes, score thresholds, products, spectra."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import CATEGORICAL, REAL, Dataset, SchemaError

UNKNOWN = "unknown"
JOIN = "×"


@dataclass(frozen=True)
class CohortAssignment:
    """A total partition of dataset example indices.

    ``labels[i]`` is the cohort id of example ``i``; ``cohort_names[c]`` is the
    display name of id ``c``. ``flagged_empty`` lists cohort names with no
    members, either ids in range that nobody carries or, for products,
    intersections that were never given an id.
    """

    name: str
    labels: np.ndarray
    cohort_names: tuple[str, ...]
    flagged_empty: tuple[str, ...] = field(default=())

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if not self.cohort_names:
            raise ValueError("an assignment needs at least one cohort")
        if len(labels) and (labels.min() < 0 or labels.max() >= len(self.cohort_names)):
            raise ValueError("cohort id out of range")

    @property
    def num_cohorts(self) -> int:
        return len(self.cohort_names)

    def __len__(self) -> int:
        return len(self.labels)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_cohorts)

    def members(self, cohort: int) -> np.ndarray:
        return np.nonzero(self.labels == cohort)[0]

    def groups(self) -> dict[str, np.ndarray]:
        return {self.cohort_names[c]: self.members(c) for c in range(self.num_cohorts)}

    def restrict(self, indices: Sequence[int]) -> "CohortAssignment":
        """Assignment over a subset of examples, re-indexed ``0..len(indices)-1``.

        Cohort ids are kept; cohorts emptied by the restriction get flagged.
        """
        labels = self.labels[np.asarray(indices, dtype=np.int64)]
        present = np.bincount(labels, minlength=self.num_cohorts) > 0
        flagged = list(self.flagged_empty)
        for c, name in enumerate(self.cohort_names):
            if not present[c] and name not in flagged:
                flagged.append(name)
        return CohortAssignment(self.name, labels, self.cohort_names, tuple(flagged))

    def same_partition(self, other: "CohortAssignment") -> bool:
        """Equality as set partitions, ignoring ids and names."""
        if len(self) != len(other):
            return False
        pairs = set(zip(self.labels.tolist(), other.labels.tolist()))
        return (len(pairs) == len(set(self.labels.tolist()))
                == len(set(other.labels.tolist())))


def _flag_unused(names, labels):
    used = np.bincount(labels, minlength=len(names)) > 0 if len(labels) else np.zeros(len(names), bool)
    return tuple(n for n, u in zip(names, used) if not u)


def derive_categorical(dataset: Dataset, attr: str) -> CohortAssignment:
    """One cohort per distinct value, ids in sorted order of the value strings.

    Examples without the attribute land in a trailing ``unknown`` cohort.
    """
    kind = dataset.attr_schema.get(attr)
    if kind is None:
        raise SchemaError(f"attribute {attr!r} not in schema")
    if kind != CATEGORICAL:
        raise SchemaError(f"attribute {attr!r} is {kind}, expected categorical")
    values = [ex.attrs.get(attr) for ex in dataset.examples]
    names = sorted({str(v) for v in values if v is not None})
    has_missing = any(v is None for v in values)
    ids = {n: i for i, n in enumerate(names)}
    if has_missing:
        names.append(UNKNOWN)
    unknown_id = len(names) - 1
    labels = np.fromiter(
        (unknown_id if v is None else ids[str(v)] for v in values), dtype=np.int64, count=len(values)
    )
    if not names:
        names = [UNKNOWN]
    return CohortAssignment(attr, labels, tuple(names), _flag_unused(names, labels))


@dataclass(frozen=True)
class ThresholdSpec:
    attr: str
    t: float


def derive_threshold(dataset: Dataset, spec: ThresholdSpec) -> CohortAssignment:
    """Split on a real attribute: ``<attr> Low`` (value <= t, id 0) and
    ``<attr> High`` (value > t, id 1); missing values go to ``unknown`` (id 2)."""
    kind = dataset.attr_schema.get(spec.attr)
    if kind is None:
        raise SchemaError(f"attribute {spec.attr!r} not in schema")
    if kind != REAL:
        raise SchemaError(f"attribute {spec.attr!r} is {kind}, expected real")
    names = [f"{spec.attr} Low", f"{spec.attr} High"]
    values = [ex.attrs.get(spec.attr) for ex in dataset.examples]
    if any(v is None for v in values):
        names.append(UNKNOWN)
    labels = np.fromiter(
        (2 if v is None else int(v > spec.t) for v in values), dtype=np.int64, count=len(values)
    )
    return CohortAssignment(spec.attr, labels, tuple(names), _flag_unused(names, labels))


def combine(a: CohortAssignment, b: CohortAssignment) -> CohortAssignment:
    """Cross-product partition of two assignments over the same examples.

    Nonempty intersections get ids in lexicographic order of ``(a_id, b_id)``.
    Empty intersections are only listed in ``flagged_empty``.
    """
    if len(a) != len(b):
        raise ValueError(f"assignments cover different sizes ({len(a)} vs {len(b)})")
    key = a.labels * b.num_cohorts + b.labels
    present = np.unique(key)
    remap = np.full(a.num_cohorts * b.num_cohorts, -1, dtype=np.int64)
    remap[present] = np.arange(len(present))
    names, flagged = [], []
    for ia, na in enumerate(a.cohort_names):
        for ib, nb in enumerate(b.cohort_names):
            label = f"{na}{JOIN}{nb}"
            if remap[ia * b.num_cohorts + ib] >= 0:
                names.append(label)
            else:
                flagged.append(label)
    if not names:
        names.append(f"{a.cohort_names[0]}{JOIN}{b.cohort_names[0]}")
    return CohortAssignment(f"{a.name}{JOIN}{b.name}", remap[key] if len(key) else key,
                            tuple(names), tuple(flagged))


def spectrum(
    assignments: Sequence[CohortAssignment], n: int, seed: int
) -> list[CohortAssignment]:
    """``n`` products of uniformly random nonempty subsets of ``assignments``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not assignments:
        raise ValueError("need at least one assignment")
    m = len(assignments)
    rng = np.random.default_rng(seed)
    out = []
    for mask in rng.integers(1, 2**m, size=n):
        chosen = [assignments[i] for i in range(m) if mask >> i & 1]
        result = chosen[0]
        for other in chosen[1:]:
            result = combine(result, other)
        out.append(result)
    return out


def single_cohort(n: int, name: str = "all") -> CohortAssignment:
    return CohortAssignment(name, np.zeros(n, np.int64), (name,))


# ---------------------------------------------------------------------------
# CSV:  example_index,cohort_id,cohort_name


def write_csv(assignment: CohortAssignment, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["example_index", "cohort_id", "cohort_name"])
        for i, c in enumerate(assignment.labels.tolist()):
            w.writerow([i, c, assignment.cohort_names[c]])


def read_csv(path: str | Path, name: str | None = None) -> CohortAssignment:
    path = Path(path)
    rows = []
    names: dict[int, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["example_index", "cohort_id", "cohort_name"]:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            idx, cid = int(rec["example_index"]), int(rec["cohort_id"])
            if names.setdefault(cid, rec["cohort_name"]) != rec["cohort_name"]:
                raise ValueError(f"{path}: cohort id {cid} has two names")
            rows.append((idx, cid))
    rows.sort()
    if [i for i, _ in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: example indices must cover 0..n-1 exactly once")
    k = max(names) + 1 if names else 1
    cohort_names = tuple(names.get(c, f"cohort {c}") for c in range(k))
    labels = np.array([c for _, c in rows], dtype=np.int64)
    return CohortAssignment(name or path.stem, labels, cohort_names,
                            _flag_unused(cohort_names, labels))
