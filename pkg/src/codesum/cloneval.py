"""Threshold clone detection over embedding pairs."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import PairDataset
from .embed import EmbeddingSet
from .metrics import Averaging, EvalReport, classification_report, confusion

DEFAULT_GRID = (0.50, 0.55, 0.60, 0.65, 0.70, 0.75)
SWEEP_COLUMNS = ("T", "accuracy", "precision", "recall", "f1")


class CloneEvalError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdConfig:
    grid: tuple[float, ...] = DEFAULT_GRID

    def __post_init__(self) -> None:
        grid = tuple(float(t) for t in self.grid)
        if not grid:
            raise CloneEvalError("threshold grid is empty")
        if any(not 0.0 < t < 1.0 for t in grid):
            raise CloneEvalError("thresholds must lie in (0, 1)")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise CloneEvalError("threshold grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class ClonePrediction:
    id_a: str
    id_b: str
    similarity: float
    predicted: bool
    threshold: float


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _rows(pairs: PairDataset, embeddings: EmbeddingSet) -> tuple[np.ndarray, np.ndarray]:
    ia, ib = [], []
    for p in pairs:
        for fid in (p.id_a, p.id_b):
            if fid not in embeddings:
                raise CloneEvalError(f"no embedding for fragment {fid!r}")
        ia.append(embeddings.row(p.id_a))
        ib.append(embeddings.row(p.id_b))
    return np.asarray(ia, dtype=np.intp), np.asarray(ib, dtype=np.intp)


def pair_similarities(pairs: PairDataset, embeddings: EmbeddingSet) -> np.ndarray:
    """Cosine similarity of every pair, computed in float64."""
    ia, ib = _rows(pairs, embeddings)
    if not len(ia):
        return np.zeros(0)
    v = np.asarray(embeddings.vectors, dtype=np.float64)
    a, b = v[ia], v[ib]
    dots = np.einsum("ij,ij->i", a, b)
    sims = dots / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    return np.clip(sims, -1.0, 1.0)


def _check_threshold(t: float) -> None:
    if not 0.0 < t < 1.0:
        raise CloneEvalError(f"threshold {t} outside (0, 1)")


def classify_pairs(pairs: PairDataset, embeddings: EmbeddingSet, threshold: float) -> list[ClonePrediction]:
    """Predict a clone wherever similarity >= threshold."""
    _check_threshold(threshold)
    sims = pair_similarities(pairs, embeddings)
    return [
        ClonePrediction(p.id_a, p.id_b, float(s), bool(s >= threshold), threshold)
        for p, s in zip(pairs, sims)
    ]


@dataclass(frozen=True)
class SweepResult:
    thresholds: tuple[float, ...]
    reports: dict[float, EvalReport]
    similarities: np.ndarray

    def best(self) -> tuple[float, EvalReport]:
        # first threshold wins ties
        t = max(self.thresholds, key=lambda t: (self.reports[t].f1, -t))
        return t, self.reports[t]


def sweep_thresholds(
    pairs: PairDataset,
    embeddings: EmbeddingSet,
    config: ThresholdConfig = ThresholdConfig(),
    averaging: Averaging = "weighted",
    similarities: np.ndarray | None = None,
) -> SweepResult:
    sims = pair_similarities(pairs, embeddings) if similarities is None else similarities
    truth = [p.truth for p in pairs]
    if not truth:
        raise CloneEvalError("no pairs to evaluate")
    reports = {}
    for t in config.grid:
        counts = confusion(zip(sims >= t, truth))
        reports[t] = classification_report(counts, averaging)
    return SweepResult(config.grid, reports, sims)


def write_predictions(pairs: PairDataset, sims: np.ndarray, thresholds: Sequence[float], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in thresholds:
            for p, s in zip(pairs, sims):
                row = {"id1": p.id_a, "id2": p.id_b, "sim": float(s), "pred": bool(s >= t), "T": t}
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def write_sweep_csv(result: SweepResult, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for t in result.thresholds:
            r = result.reports[t]
            w.writerow([f"{t:.2f}", *(f"{v:.6f}" for v in (r.accuracy, r.precision, r.recall, r.f1))])
