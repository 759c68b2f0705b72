"""Exact t-SNE projection to 2-D and coordinate export for external plotting."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embed import EmbeddingSet

_EPS = 1e-12


class TsneError(ValueError):
    pass


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    # a number, or "auto" for max(n / early_exaggeration / 4, 50), which suits small n
    learning_rate: float | str = 200.0
    iterations: int = 1000
    seed: int = 0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum_initial: float = 0.5
    momentum_final: float = 0.8
    momentum_switch: int = 250

    def __post_init__(self) -> None:
        if self.perplexity <= 1:
            raise TsneError("perplexity must exceed 1")
        if isinstance(self.learning_rate, str):
            if self.learning_rate != "auto":
                raise TsneError(f"learning rate must be a positive number or 'auto', got {self.learning_rate!r}")
        elif self.learning_rate <= 0:
            raise TsneError("learning rate must be positive")
        if self.iterations < 250:
            raise TsneError("at least 250 iterations are required")
        if self.early_exaggeration < 1:
            raise TsneError("early exaggeration must be >= 1")
        if self.exaggeration_iters < 0:
            raise TsneError("exaggeration_iters must be >= 0")

    def check(self, n: int) -> None:
        if n < 8:
            raise TsneError(f"t-SNE needs at least 8 points, got {n}")
        if not self.perplexity < (n - 1) / 3:
            raise TsneError(f"perplexity {self.perplexity} must be below (n-1)/3 = {(n - 1) / 3:.3g}")

    def rate_for(self, n: int) -> float:
        if self.learning_rate == "auto":
            return max(n / self.early_exaggeration / 4.0, 50.0)
        return float(self.learning_rate)


@dataclass(frozen=True)
class Projection2D:
    coords: np.ndarray
    fragment_ids: tuple[str, ...]
    labels: tuple | None
    final_kl: float
    initial_kl: float = math.nan
    kl_history: tuple[float, ...] = field(default=(), compare=False, repr=False)


def squared_distances(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(1)
    d = sq[:, None] - 2.0 * x @ x.T + sq[None, :]
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_entropy(d: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    # d excludes the point itself and is shifted so its minimum is 0
    p = np.exp(-d * beta)
    s = p.sum()
    p /= s
    h = float(-(p[p > 0] * np.log(p[p > 0])).sum())
    return h, p


def conditional_probabilities(
    sq_dists: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 64
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row Gaussian affinities whose entropy matches ``log(perplexity)``.

    Bandwidths are searched on log(beta): the bracket grows by factors of 2
    until it contains the target, then is bisected. Returns the row
    stochastic matrix and the precisions beta = 1/(2 sigma^2).
    """
    n = len(sq_dists)
    target = math.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        d = np.delete(sq_dists[i], i)
        d = d - d.min()
        scale = np.median(d[d > 0]) if np.any(d > 0) else 1.0
        log_beta = -math.log(scale)
        lo, hi = -math.inf, math.inf
        h, p = _row_entropy(d, math.exp(log_beta))
        for _ in range(max_iter):
            diff = h - target
            if abs(diff) < tol:
                break
            if diff > 0:  # too flat: sharpen
                lo = log_beta
                log_beta = log_beta + math.log(2) if hi == math.inf else (lo + hi) / 2
            else:
                hi = log_beta
                log_beta = log_beta - math.log(2) if lo == -math.inf else (lo + hi) / 2
            h, p = _row_entropy(d, math.exp(log_beta))
        betas[i] = math.exp(log_beta)
        P[i, np.arange(n) != i] = p
    return P, betas


def joint_probabilities(x: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized affinities p_ij = (p_j|i + p_i|j) / 2n, summing to 1."""
    cond, _ = conditional_probabilities(squared_distances(x), perplexity)
    P = (cond + cond.T) / (2.0 * len(x))
    return P / P.sum()


def _student_t(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(num, 0.0)
    Q = num / num.sum()
    return num, Q


def kl_divergence(P: np.ndarray, y: np.ndarray) -> float:
    _, Q = _student_t(y)
    mask = P > 0
    return float((P[mask] * np.log(P[mask] / np.maximum(Q[mask], _EPS))).sum())


def kl_gradient(P: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P || Q) and its gradient dC/dy_i = 4 sum_j (p_ij - q_ij)(y_i - y_j)/(1 + |y_i - y_j|^2)."""
    num, Q = _student_t(y)
    mask = P > 0
    kl = float((P[mask] * np.log(P[mask] / np.maximum(Q[mask], _EPS))).sum())
    W = (P - Q) * num
    grad = 4.0 * (W.sum(1)[:, None] * y - W @ y)
    return kl, grad


def tsne(embeddings: EmbeddingSet | np.ndarray, config: TsneConfig = TsneConfig(),
         labels: Sequence | None = None, fragment_ids: Sequence[str] | None = None) -> Projection2D:
    """Gradient descent with momentum and per-coordinate gains on KL(P || Q).

    After early exaggeration ends, a step that would raise KL is rejected;
    momentum and gains are reset and the step size halved until a step
    makes progress again.
    """
    if isinstance(embeddings, EmbeddingSet):
        x = np.asarray(embeddings.vectors, dtype=np.float64)
        ids = tuple(embeddings.fragment_ids)
    else:
        x = np.asarray(embeddings, dtype=np.float64)
        ids = tuple(fragment_ids) if fragment_ids is not None else tuple(str(i) for i in range(len(x)))
    n = len(x)
    config.check(n)
    if np.allclose(x, x[0], atol=0.0, rtol=0.0) or float(np.var(x, axis=0).sum()) == 0.0:
        raise TsneError("zero variance input")

    P = joint_probabilities(x, config.perplexity)
    rng = np.random.Generator(np.random.Philox(config.seed))
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)

    initial_kl = kl_divergence(P, y)
    history = []
    current = initial_kl
    step_scale = 1.0
    rate = config.rate_for(n)
    for it in range(config.iterations):
        exaggerate = it < config.exaggeration_iters
        _, grad = kl_gradient(P * config.early_exaggeration if exaggerate else P, y)
        momentum = config.momentum_initial if it < config.momentum_switch else config.momentum_final
        same_sign = np.sign(grad) == np.sign(velocity)
        new_gains = np.maximum(np.where(same_sign, gains * 0.8, gains + 0.2), 0.01)
        new_velocity = momentum * velocity - rate * step_scale * new_gains * grad
        candidate = y + new_velocity
        candidate -= candidate.mean(0)
        kl = kl_divergence(P, candidate)
        if not exaggerate and kl > current:
            # adaptive restart: drop the step, clear momentum and gains, shrink the step
            velocity = np.zeros_like(y)
            gains = np.ones_like(y)
            step_scale *= 0.5
            history.append(current)
            continue
        y, velocity, gains, current = candidate, new_velocity, new_gains, kl
        step_scale = min(1.0, step_scale * 2.0)
        history.append(kl)

    final_kl = history[-1]
    if not math.isfinite(final_kl):
        raise TsneError("t-SNE diverged")
    return Projection2D(
        coords=y,
        fragment_ids=ids,
        labels=tuple(labels) if labels is not None else None,
        final_kl=final_kl,
        initial_kl=initial_kl,
        kl_history=tuple(history),
    )


def export_projection(p: Projection2D, path: str | os.PathLike) -> None:
    """CSV ``id,x,y[,label]`` with round-trip float precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "label"] if p.labels is not None else ["id", "x", "y"])
        for i, fid in enumerate(p.fragment_ids):
            row = [fid, repr(float(p.coords[i, 0])), repr(float(p.coords[i, 1]))]
            if p.labels is not None:
                row.append("" if p.labels[i] is None else p.labels[i])
            w.writerow(row)


def export_projection_json(p: Projection2D, path: str | os.PathLike) -> None:
    points = []
    for i, fid in enumerate(p.fragment_ids):
        pt = {"id": fid, "x": float(p.coords[i, 0]), "y": float(p.coords[i, 1])}
        if p.labels is not None:
            pt["label"] = p.labels[i]
        points.append(pt)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"points": points}, fh, ensure_ascii=False)


def read_projection_csv(path: str | os.PathLike) -> tuple[list[str], np.ndarray, list[str] | None]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    ids = [r[0] for r in body]
    coords = np.array([[float(r[1]), float(r[2])] for r in body]).reshape(-1, 2)
    labels = [r[3] for r in body] if len(header) == 4 else None
    return ids, coords, labels
