"""k-means (k-means++ seeding, Lloyd iterations) and implicit cohorts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .cohorts import CohortAssignment
from .data import Dataset
from .userlm import UserEmbedding


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    iterations_run: int
    seed: int | None
    inertia_history: tuple[float, ...] = field(default=())

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _as_points(vectors) -> np.ndarray:
    X = np.ascontiguousarray(np.asarray(vectors, dtype=np.float64))
    if X.ndim != 2:
        raise ValueError("expected a list of equal-length vectors")
    if not np.isfinite(X).all():
        raise ValueError("non-finite input vector")
    return X


def kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding; falls back to uniform picks once all points coincide
    with chosen centers."""
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    d2 = kernels.nearest_centroid(X, X[centers])[1]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        centers.append(nxt)
        d2 = np.minimum(d2, kernels.nearest_centroid(X, X[[nxt]])[1])
    return X[centers].copy()


def _update(X, labels, k, centroids):
    """Cluster means; an empty cluster takes the point farthest from its centroid."""
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros_like(centroids)
    np.add.at(sums, labels, X)
    means = centroids.copy()
    live = counts > 0
    means[live] = sums[live] / counts[live][:, None]
    labels = labels.copy()
    for c in np.nonzero(~live)[0]:
        d2 = ((X - means[labels]) ** 2).sum(axis=1)
        d2[counts[labels] <= 1] = -1.0  # never strip a cluster of its last point
        far = int(np.argmax(d2))
        old = labels[far]
        counts[old] -= 1
        sums[old] -= X[far]
        means[old] = sums[old] / counts[old]
        labels[far] = c
        counts[c] = 1
        sums[c] = X[far]
        means[c] = X[far]
    return means, labels


def _inertia(X, labels, centroids) -> float:
    diff = X - centroids[labels]
    return float(np.einsum("nd,nd->", diff, diff))


def kmeans(
    vectors,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
    init: np.ndarray | None = None,
) -> ClusterModel:
    """Lloyd's algorithm until the largest centroid shift drops below ``tol``.

    ``inertia_history`` records the inertia after every update step and is
    non-increasing.
    """
    X = _as_points(vectors)
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    if init is None:
        centroids = kmeans_pp_init(X, k, np.random.default_rng(seed))
    else:
        centroids = np.array(init, dtype=np.float64)
        if centroids.shape != (k, X.shape[1]):
            raise ValueError("init must have shape (k, d)")
    labels, _ = kernels.nearest_centroid(X, centroids)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        new, labels = _update(X, labels, k, centroids)
        history.append(_inertia(X, labels, new))
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        labels, _ = kernels.nearest_centroid(X, centroids)
        if shift < tol:
            break
    return ClusterModel(centroids, labels, _inertia(X, labels, centroids), it, seed, tuple(history))


def assign(model: ClusterModel, vector) -> int:
    """Nearest centroid by squared distance; ties go to the lowest index."""
    v = np.asarray(vector, dtype=np.float64)
    if v.shape != (model.centroids.shape[1],):
        raise ValueError(f"vector has shape {v.shape}, centroids have dim {model.centroids.shape[1]}")
    return int(kernels.nearest_centroid(v[None, :], model.centroids)[0][0])


def adjusted_rand_index(a: Sequence, b: Sequence) -> float:
    """Chance-corrected pair-counting agreement of two labelings."""
    a = np.unique(np.asarray(a), return_inverse=True)[1]
    b = np.unique(np.asarray(b), return_inverse=True)[1]
    if len(a) != len(b):
        raise ValueError("labelings differ in length")
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    comb2 = lambda x: x * (x - 1) / 2.0  # noqa: E731
    index = comb2(table).sum()
    rows, cols = comb2(table.sum(axis=1)).sum(), comb2(table.sum(axis=0)).sum()
    expected = rows * cols / comb2(len(a)) if len(a) > 1 else 0.0
    best = (rows + cols) / 2.0
    if best == expected:
        return 1.0
    return float((index - expected) / (best - expected))


def cluster_users(
    embeddings: Sequence[UserEmbedding],
    k: int,
    seed: int,
    normalize: bool = False,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> tuple[list[str], ClusterModel]:
    """k-means over user vectors; returns user ids (input order) and the fit."""
    users = [e.user_id for e in embeddings]
    if len(set(users)) != len(users):
        raise ValueError("duplicate user ids among embeddings")
    X = np.array([e.vector for e in embeddings], dtype=np.float64)
    if normalize:
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X = X / np.where(norms > 0, norms, 1.0)
    return users, kmeans(X, k, seed=seed, max_iter=max_iter, tol=tol)


def assignment_from_clusters(users: Sequence[str], model: ClusterModel,
                             dataset: Dataset) -> CohortAssignment:
    cluster_of = dict(zip(users, model.labels.tolist()))
    missing = [u for u in dataset.user_ids if u not in cluster_of]
    if missing:
        raise KeyError(f"users without embeddings: {', '.join(missing)}")
    k = model.k
    labels = np.array([cluster_of[ex.user_id] for ex in dataset.examples], dtype=np.int64)
    names = tuple(f"IC {c + 1}" for c in range(k))
    used = np.bincount(labels, minlength=k) > 0 if len(labels) else np.zeros(k, bool)
    return CohortAssignment("implicit", labels, names,
                            tuple(n for n, u in zip(names, used) if not u))


def implicit_cohorts(
    embeddings: Sequence[UserEmbedding],
    k: int,
    seed: int,
    dataset: Dataset,
    normalize: bool = False,
) -> CohortAssignment:
    """Cluster users, then give each example its author's cluster (``IC 1``..``IC k``)."""
    have = {e.user_id for e in embeddings}
    missing = [u for u in dataset.user_ids if u not in have]
    if missing:
        raise KeyError(f"users without embeddings: {', '.join(missing)}")
    users, model = cluster_users(embeddings, k, seed, normalize)
    return assignment_from_clusters(users, model, dataset)
