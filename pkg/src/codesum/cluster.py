"""K-means (Lloyd iterations, k-means++ seeding) on embedding vectors."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embed import EmbeddingSet


class ClusteringError(ValueError):
    pass


def euclidean_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ClusteringError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


@dataclass(frozen=True)
class ClusteringResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int
    seed: int
    # inertia after every Lloyd update of the winning restart
    history: tuple[float, ...] = field(default=(), compare=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def inertia_of(x: np.ndarray, assignments: np.ndarray, centroids: np.ndarray) -> float:
    diff = x - centroids[assignments]
    return float(np.einsum("ij,ij->", diff, diff))


def _plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [int(rng.integers(n))]
    closest = ((x - x[centers[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k: any unused index will do
            unused = np.setdiff1d(np.arange(n), centers)
            idx = int(rng.choice(unused))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(idx)
        closest = np.minimum(closest, ((x - x[idx]) ** 2).sum(1))
    return x[centers].copy()


def _means(x: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((k, x.shape[1]))
    for j in range(k):
        members = x[labels == j]
        out[j] = members.sum(0) / len(members)
    return out


def _repair_empty(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray, k: int) -> None:
    """Give each empty cluster the point farthest from its centroid (in place)."""
    for j in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[j]:
            continue
        d = ((x - centroids[labels]) ** 2).sum(1)
        d[counts[labels] < 2] = -1.0  # never empty another cluster
        i = int(np.argmax(d))
        labels[i] = j
        centroids[j] = x[i]


def _lloyd(x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int, tol: float):
    centroids = _plusplus(x, k, rng)
    history = []
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    it = 0
    for it in range(1, max_iter + 1):
        _repair_empty(x, labels, centroids, k)
        new = _means(x, labels, k)
        history.append(inertia_of(x, labels, new))
        shift = float(np.linalg.norm(new - centroids))
        centroids = new
        new_labels = np.argmin(_sq_dists(x, centroids), axis=1)  # argmin: lowest index wins ties
        if shift < tol or it == max_iter or np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centroids, history, it


def kmeans(
    embeddings: EmbeddingSet | np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-4,
    restarts: int = 10,
) -> ClusteringResult:
    """Best of ``restarts`` seeded k-means runs by inertia.

    Each run seeds with k-means++, then alternates nearest-centroid
    assignment and mean updates until the centroid shift (Frobenius norm)
    drops below ``tol``, assignments stop changing, or ``max_iter`` is hit.
    """
    x = np.asarray(embeddings.vectors if isinstance(embeddings, EmbeddingSet) else embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ClusteringError("expected an n x dim matrix")
    n = len(x)
    if not 1 <= k <= n:
        raise ClusteringError(f"K={k} must satisfy 1 <= K <= n={n}")
    if max_iter < 1 or tol < 0 or restarts < 1:
        raise ClusteringError("max_iter and restarts must be >= 1 and tol >= 0")

    rng = np.random.Generator(np.random.Philox(seed))
    best = None
    for _ in range(restarts):
        labels, centroids, history, it = _lloyd(x, k, rng, max_iter, tol)
        inertia = inertia_of(x, labels, centroids)
        if best is None or inertia < best[2]:
            best = (labels, centroids, inertia, it, history)
    labels, centroids, inertia, it, history = best
    return ClusteringResult(labels.astype(np.intp), centroids, inertia, it, seed, tuple(history))


def export_clustering(result: ClusteringResult, fragment_ids: Sequence[str], directory: str | os.PathLike) -> None:
    """Write ``clusters.jsonl`` ({"id","cluster"} per line) and ``centroids.f32``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "clusters.jsonl", "w", encoding="utf-8") as fh:
        for fid, c in zip(fragment_ids, result.assignments):
            fh.write(json.dumps({"id": fid, "cluster": int(c)}, ensure_ascii=False) + "\n")
    result.centroids.astype("<f4").tofile(d / "centroids.f32")
