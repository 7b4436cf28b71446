"""Dataset ingestion, featurization, splitting and synthetic corpora.

Input records are JSON lines with keys ``text``, ``label``, ``user_id`` and
``attrs``. Text is featurized by feature hashing: each token is hashed with
64-bit BLAKE2b (``hashlib.blake2b(token.encode("utf-8"), digest_size=8)``,
read as an unsigned little-endian integer) and bucketed modulo the feature
dimension. Values are token counts divided by sequence length.
"""

from __future__ import annotations

import hashlib
import json
import logging
import unicodedata
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CATEGORICAL = "categorical"
REAL = "real"
ATTR_KINDS = (CATEGORICAL, REAL)


class DataFormatError(ValueError):
    """A malformed input line; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class StratificationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Example:
    text: tuple[str, ...]
    label: int
    user_id: str
    attrs: Mapping[str, str | float] = field(default_factory=dict)


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...]
    num_classes: int
    attr_schema: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.num_classes < 1:
            raise SchemaError("num_classes must be positive")
        for kind in self.attr_schema.values():
            if kind not in ATTR_KINDS:
                raise SchemaError(f"unknown attribute kind {kind!r}")
        for i, ex in enumerate(self.examples):
            if not 0 <= ex.label < self.num_classes:
                raise SchemaError(
                    f"example {i}: label {ex.label} outside [0, {self.num_classes})"
                )
            if not ex.user_id:
                raise SchemaError(f"example {i}: empty user_id")
            for key, value in ex.attrs.items():
                if key not in self.attr_schema:
                    raise SchemaError(f"example {i}: attribute {key!r} not in schema")
                _check_kind(key, value, self.attr_schema[key], i)

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, i: int) -> Example:
        return self.examples[i]

    @property
    def labels(self) -> np.ndarray:
        return np.fromiter((ex.label for ex in self.examples), dtype=np.int64, count=len(self))

    @property
    def user_ids(self) -> list[str]:
        """Distinct user ids in first-appearance order."""
        return list(dict.fromkeys(ex.user_id for ex in self.examples))

    @property
    def empty_text_indices(self) -> list[int]:
        return [i for i, ex in enumerate(self.examples) if not ex.text]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(
            tuple(self.examples[i] for i in indices), self.num_classes, dict(self.attr_schema)
        )


def _check_kind(key, value, kind, i):
    if value is None:
        return
    if kind == REAL:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"example {i}: attribute {key!r} must be real, got {value!r}")
    elif not isinstance(value, str):
        raise SchemaError(
            f"example {i}: attribute {key!r} must be categorical (string), got {value!r}"
        )


# ---------------------------------------------------------------------------
# text


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation at token edges.

    >>> tokenize("Great food!")
    ['great', 'food']
    >>> tokenize("don't stop")
    ["don't", 'stop']
    """
    tokens = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and _is_punct(raw[start]):
            start += 1
        while end > start and _is_punct(raw[end - 1]):
            end -= 1
        if start < end:
            tokens.append(raw[start:end])
    return tokens


@lru_cache(maxsize=1 << 16)
def token_hash(token: str) -> int:
    """Unsigned 64-bit BLAKE2b digest of the UTF-8 bytes of ``token``."""
    return int.from_bytes(
        hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little"
    )


@dataclass(frozen=True)
class FeatureVector:
    """Sparse vector: sorted unique ``indices`` with matching ``values``."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __len__(self) -> int:
        return len(self.indices)

    def to_dict(self) -> dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out


def vectorize(tokens: Sequence[str], F: int) -> FeatureVector:
    if F <= 0:
        raise ValueError("feature dimension must be positive")
    if not tokens:
        return FeatureVector(np.zeros(0, np.int64), np.zeros(0), F)
    buckets = np.fromiter((token_hash(t) % F for t in tokens), dtype=np.int64, count=len(tokens))
    idx, counts = np.unique(buckets, return_counts=True)
    return FeatureVector(idx, counts / len(tokens), F)


@dataclass(frozen=True)
class FeatureMatrix:
    """CSR stack of feature vectors, the batch layout consumed by the kernels."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    dim: int

    @property
    def n_rows(self) -> int:
        return len(self.indptr) - 1

    def __len__(self) -> int:
        return self.n_rows

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector], dim: int) -> "FeatureMatrix":
        lengths = np.fromiter((len(v) for v in vectors), dtype=np.int64, count=len(vectors))
        indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        if vectors:
            indices = np.concatenate([v.indices for v in vectors]).astype(np.int64)
            data = np.concatenate([v.values for v in vectors]).astype(np.float64)
        else:
            indices, data = np.zeros(0, np.int64), np.zeros(0)
        return cls(indptr, indices, data, dim)

    def rows(self, which: np.ndarray) -> "FeatureMatrix":
        which = np.asarray(which, dtype=np.int64)
        starts, ends = self.indptr[which], self.indptr[which + 1]
        lengths = ends - starts
        indptr = np.zeros(len(which) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        if indptr[-1]:
            take = np.concatenate([np.arange(s, e) for s, e in zip(starts, ends)])
        else:
            take = np.zeros(0, np.int64)
        return FeatureMatrix(indptr, self.indices[take], self.data[take], self.dim)

    def row(self, i: int) -> FeatureVector:
        s, e = self.indptr[i], self.indptr[i + 1]
        return FeatureVector(self.indices[s:e], self.data[s:e], self.dim)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.dim))
        for r in range(self.n_rows):
            s, e = self.indptr[r], self.indptr[r + 1]
            out[r, self.indices[s:e]] = self.data[s:e]
        return out


def featurize(dataset: Dataset, F: int) -> FeatureMatrix:
    return FeatureMatrix.from_vectors([vectorize(ex.text, F) for ex in dataset.examples], F)


# ---------------------------------------------------------------------------
# io


def _infer_kind(value) -> str:
    if isinstance(value, str):
        return CATEGORICAL
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return REAL
    raise SchemaError(f"cannot infer attribute kind of {value!r}")


def load_jsonl(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    num_classes: int | None = None,
) -> Dataset:
    """Read a JSON-lines dataset.

    ``schema`` maps attribute names to ``"categorical"`` or ``"real"``; when
    omitted it is inferred from the first non-null value of each attribute.
    ``num_classes`` defaults to the largest label plus one.
    """
    if schema is not None:
        for name, kind in schema.items():
            if kind not in ATTR_KINDS:
                raise SchemaError(f"attribute {name!r}: unknown kind {kind!r}")
        schema = dict(schema)
        fixed_schema = True
    else:
        schema = {}
        fixed_schema = False

    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict):
                raise DataFormatError("record is not an object", lineno)
            missing = {"text", "label", "user_id"} - rec.keys()
            if missing:
                raise DataFormatError(f"missing keys {sorted(missing)}", lineno)
            text, label, user_id = rec["text"], rec["label"], rec["user_id"]
            attrs = rec.get("attrs") or {}
            if not isinstance(text, str):
                raise DataFormatError("text must be a string", lineno)
            if isinstance(label, bool) or not isinstance(label, int):
                raise DataFormatError("label must be an integer", lineno)
            if label < 0:
                raise SchemaError(f"line {lineno}: negative label {label}")
            if not isinstance(user_id, str) or not user_id:
                raise DataFormatError("user_id must be a nonempty string", lineno)
            if not isinstance(attrs, dict):
                raise DataFormatError("attrs must be an object", lineno)
            for key, value in attrs.items():
                if value is None:
                    continue
                if key not in schema:
                    if fixed_schema:
                        raise SchemaError(f"line {lineno}: attribute {key!r} not in schema")
                    schema[key] = _infer_kind(value)
                try:
                    _check_kind(key, value, schema[key], lineno - 1)
                except SchemaError as exc:
                    raise SchemaError(f"line {lineno}: {exc}") from None
            attrs = {k: (float(v) if schema.get(k) == REAL and v is not None else v)
                     for k, v in attrs.items() if v is not None}
            examples.append(Example(tuple(tokenize(text)), label, user_id, attrs))

    inferred = max((ex.label for ex in examples), default=-1) + 1
    if num_classes is None:
        num_classes = max(inferred, 1)
    elif inferred > num_classes:
        raise SchemaError(f"label {inferred - 1} outside [0, {num_classes})")
    ds = Dataset(tuple(examples), num_classes, schema)
    if ds.empty_text_indices:
        logger.info("%d examples with empty text kept", len(ds.empty_text_indices))
    return ds


def write_jsonl(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in dataset.examples:
            rec = {"text": " ".join(ex.text), "label": ex.label,
                   "user_id": ex.user_id, "attrs": dict(ex.attrs)}
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=False) + "\n")


# ---------------------------------------------------------------------------
# splitting


def split_indices(
    dataset: Dataset, test_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test index split; both halves returned in dataset order."""
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    train, test = [], []
    for c in range(dataset.num_classes):
        members = np.nonzero(labels == c)[0]
        if len(members) == 0:
            continue
        if len(members) < 2:
            warnings.warn(
                f"class {c} has {len(members)} example(s); placed in train",
                StratificationWarning,
                stacklevel=2,
            )
            train.append(members)
            continue
        perm = rng.permutation(members)
        n_test = int(round(len(members) * test_fraction))
        n_test = min(max(n_test, 1), len(members) - 1)
        test.append(perm[:n_test])
        train.append(perm[n_test:])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.zeros(0, np.int64)  # noqa: E731
    return cat(train), cat(test)


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    tr, te = split_indices(dataset, test_fraction, seed)
    return dataset.subset(tr), dataset.subset(te)


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings.

    ``min_tokens``/``max_tokens`` bound the utterance length (inclusive).
    """

    num_groups: int = 4
    users_per_group: int = 10
    examples_per_user: int = 50
    vocab_size: int = 200
    group_vocab_skew: float = 0.9
    group_label_noise: tuple[float, ...] = (0.05, 0.10, 0.20, 0.30)
    num_classes: int = 2
    seed: int = 0
    min_tokens: int = 6
    max_tokens: int = 14

    def validate(self) -> None:
        for name in ("num_groups", "users_per_group", "examples_per_user",
                     "vocab_size", "num_classes", "min_tokens"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_tokens < self.min_tokens:
            raise ConfigError("max_tokens must be >= min_tokens")
        if not 0.0 <= self.group_vocab_skew <= 1.0:
            raise ConfigError("group_vocab_skew must lie in [0, 1]")
        if len(self.group_label_noise) != self.num_groups:
            raise ConfigError(
                f"group_label_noise needs {self.num_groups} entries, "
                f"got {len(self.group_label_noise)}"
            )
        for g, p in enumerate(self.group_label_noise):
            if not 0.0 <= p <= 0.5:
                raise ConfigError(f"group_label_noise[{g}]={p} outside [0, 0.5]")
        if self.vocab_size < self.num_groups:
            raise ConfigError("vocab_size must be at least num_groups")
        if self.num_classes < 2 and any(self.group_label_noise):
            raise ConfigError("label noise needs num_classes >= 2")


def synthetic_token(i: int) -> str:
    return f"w{i:04d}"


def group_slices(vocab_size: int, num_groups: int) -> list[np.ndarray]:
    """Disjoint contiguous token-id ranges, one per group."""
    return np.array_split(np.arange(vocab_size), num_groups)


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Corpus with planted user groups.

    Each token is drawn from the author's group slice with probability
    ``group_vocab_skew`` and uniformly from the whole vocabulary otherwise.
    Clean labels are ``argmax(counts @ R)`` for a fixed Gaussian ``R``; each
    label is then replaced by a uniformly chosen different class with the
    group's noise probability. Attributes: ``group`` (``g0``, ``g1``, ...),
    ``gender`` (per user, independent of group) and ``score``, uniform on
    ``[(g + 0.05) / G, (g + 0.95) / G]``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    G, V, C = config.num_groups, config.vocab_size, config.num_classes
    slices = group_slices(V, G)
    rule = rng.standard_normal((V, C))
    vocab = [synthetic_token(i) for i in range(V)]

    examples = []
    uid = 0
    for g in range(G):
        own = slices[g]
        noise = config.group_label_noise[g]
        for _ in range(config.users_per_group):
            user = f"u{uid:04d}"
            uid += 1
            gender = "F" if rng.random() < 0.5 else "M"
            for _ in range(config.examples_per_user):
                n = int(rng.integers(config.min_tokens, config.max_tokens + 1))
                from_own = rng.random(n) < config.group_vocab_skew
                ids = np.where(
                    from_own,
                    own[rng.integers(0, len(own), n)],
                    rng.integers(0, V, n),
                )
                counts = np.bincount(ids, minlength=V)
                label = int(np.argmax(counts @ rule))
                if C > 1:
                    # both draws always happen so the stream, and hence every
                    # text, is the same for any noise setting
                    flip = rng.random() < noise
                    shift = int(rng.integers(1, C))
                    if flip:
                        label = (label + shift) % C
                score = float(rng.uniform((g + 0.05) / G, (g + 0.95) / G))
                examples.append(Example(
                    tuple(vocab[i] for i in ids), label, user,
                    {"group": f"g{g}", "gender": gender, "score": score},
                ))
    schema = {"group": CATEGORICAL, "gender": CATEGORICAL, "score": REAL}
    return Dataset(tuple(examples), C, schema)
