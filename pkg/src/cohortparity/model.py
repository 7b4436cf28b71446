"""Softmax classifier over hashed bag-of-words features.

Linear by default; with ``H`` set, one rectified hidden layer is inserted.
Gradients are analytic. The weighted gradient is the single code path used
both for the plain mean loss and for cohort-restricted losses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .data import FeatureMatrix, FeatureVector
from .serialize import load_arrays, save_arrays


@dataclass(frozen=True)
class ClassifierParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray | None = None
    b2: np.ndarray | None = None
    seed: int | None = None

    @property
    def F(self) -> int:
        return self.W1.shape[0]

    @property
    def H(self) -> int | None:
        return None if self.W2 is None else self.W1.shape[1]

    @property
    def C(self) -> int:
        return self.W1.shape[1] if self.W2 is None else self.W2.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [self.W1, self.b1] if self.W2 is None else [self.W1, self.b1, self.W2, self.b2]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "ClassifierParams":
        if self.W2 is None:
            return replace(self, W1=arrays[0], b1=arrays[1])
        return replace(self, W1=arrays[0], b1=arrays[1], W2=arrays[2], b2=arrays[3])

    def sgd_update(self, grads: "ClassifierParams", lr: float) -> "ClassifierParams":
        return self.with_arrays([p - lr * g for p, g in zip(self.arrays(), grads.arrays())])

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass(frozen=True)
class ModelConfig:
    """Featurization width ``F``, optional hidden width ``H`` and init seed."""

    F: int = 4096
    H: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class Batch:
    X: FeatureMatrix
    labels: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        if self.X.n_rows == 0:
            raise ValueError("empty batch")
        if len(self.labels) != self.X.n_rows or len(self.indices) != self.X.n_rows:
            raise ValueError("batch field lengths differ")

    def __len__(self) -> int:
        return self.X.n_rows


def init(F: int, C: int, H: int | None = None, seed: int = 0) -> ClassifierParams:
    if F <= 0 or C <= 0 or (H is not None and H <= 0):
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    if H is None:
        s = 1.0 / np.sqrt(F)
        return ClassifierParams(rng.uniform(-s, s, (F, C)), np.zeros(C), seed=seed)
    s1, s2 = 1.0 / np.sqrt(F), 1.0 / np.sqrt(H)
    return ClassifierParams(
        rng.uniform(-s1, s1, (F, H)), np.zeros(H),
        rng.uniform(-s2, s2, (H, C)), np.zeros(C), seed=seed,
    )


def _as_matrix(x: FeatureVector | FeatureMatrix) -> FeatureMatrix:
    if isinstance(x, FeatureMatrix):
        return x
    return FeatureMatrix.from_vectors([x], x.dim)


def _forward(params: ClassifierParams, X: FeatureMatrix):
    if X.dim != params.F:
        raise ValueError(f"feature dim {X.dim} does not match model F={params.F}")
    pre = kernels.sparse_matmul(X.indptr, X.indices, X.data, params.W1) + params.b1
    if params.W2 is None:
        return pre, None, None
    hidden = np.maximum(pre, 0.0)
    return hidden @ params.W2 + params.b2, pre, hidden


def logits(params: ClassifierParams, x: FeatureVector | FeatureMatrix) -> np.ndarray:
    out = _forward(params, _as_matrix(x))[0]
    return out[0] if isinstance(x, FeatureVector) else out


def forward(params: ClassifierParams, x: FeatureVector | FeatureMatrix) -> np.ndarray:
    """Class probabilities; a vector for one example, rows for a matrix."""
    z = _forward(params, _as_matrix(x))[0]
    probs, _ = kernels.softmax_xent(z, np.full(len(z), -1, dtype=np.int64))
    return probs[0] if isinstance(x, FeatureVector) else probs


def example_losses(params: ClassifierParams, X: FeatureMatrix, labels: np.ndarray) -> np.ndarray:
    z = _forward(params, X)[0]
    return kernels.softmax_xent(z, np.asarray(labels, dtype=np.int64))[1]


def example_loss(params: ClassifierParams, x: FeatureVector, y: int) -> float:
    """``-ln p_y`` with ``p_y`` floored at 1e-12."""
    if not 0 <= y < params.C:
        raise ValueError(f"label {y} outside [0, {params.C})")
    return float(example_losses(params, _as_matrix(x), np.array([y]))[0])


def predict(params: ClassifierParams, x: FeatureVector | FeatureMatrix):
    """Argmax class; ``np.argmax`` already returns the lowest index on ties."""
    z = _forward(params, _as_matrix(x))[0]
    pred = np.argmax(z, axis=1)
    return int(pred[0]) if isinstance(x, FeatureVector) else pred


def forward_cache(params: ClassifierParams, batch: Batch):
    """Forward pass kept for reuse by :func:`grad_from_cache`.

    Returns ``(probs, losses, cache)``.
    """
    z, pre, hidden = _forward(params, batch.X)
    probs, losses = kernels.softmax_xent(z, np.asarray(batch.labels, dtype=np.int64))
    return probs, losses, (probs, pre, hidden)


def grad_from_cache(params: ClassifierParams, batch: Batch, cache, weights) -> ClassifierParams:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(batch),):
        raise ValueError("need one weight per batch example")
    if not np.isfinite(weights).all():
        raise ValueError("weights must be finite")
    total = weights.sum()
    if total == 0.0:
        return params.with_arrays([np.zeros_like(a) for a in params.arrays()])
    probs, pre, hidden = cache
    dz = probs.copy()
    dz[np.arange(len(batch)), batch.labels] -= 1.0
    dz *= (weights / total)[:, None]
    X = batch.X
    if params.W2 is None:
        dW1 = kernels.sparse_matmul_t(X.indptr, X.indices, X.data, dz, params.F)
        return params.with_arrays([dW1, dz.sum(axis=0)])
    dW2 = hidden.T @ dz
    db2 = dz.sum(axis=0)
    dpre = (dz @ params.W2.T) * (pre > 0.0)
    dW1 = kernels.sparse_matmul_t(X.indptr, X.indices, X.data, dpre, params.F)
    return params.with_arrays([dW1, dpre.sum(axis=0), dW2, db2])


def grad(params: ClassifierParams, batch: Batch, per_example_weights) -> ClassifierParams:
    """Gradient of ``sum_i w_i l_i / sum_i w_i``; all-zero weights give zero."""
    _, _, cache = forward_cache(params, batch)
    return grad_from_cache(params, batch, cache, per_example_weights)


# ---------------------------------------------------------------------------
# checkpoint


def save(params: ClassifierParams, path: str | Path) -> None:
    names = ["W1", "b1"] if params.W2 is None else ["W1", "b1", "W2", "b2"]
    meta = {"kind": "classifier", "F": params.F, "C": params.C, "H": params.H,
            "seed": params.seed}
    save_arrays(path, dict(zip(names, params.arrays())), meta)


def load(path: str | Path) -> ClassifierParams:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "classifier":
        raise ValueError(f"{path}: not a classifier checkpoint")
    return ClassifierParams(arrays["W1"], arrays["b1"], arrays.get("W2"), arrays.get("b2"),
                            seed=meta.get("seed"))
