from __future__ import annotations

import json
import math

import numpy as np
import pytest

from codesum.embed import EmbeddingSet, normalize_rows
from codesum.viz import (
    TsneConfig,
    TsneError,
    conditional_probabilities,
    export_projection,
    export_projection_json,
    joint_probabilities,
    kl_divergence,
    kl_gradient,
    read_projection_csv,
    squared_distances,
    tsne,
)


def blobs(seed: int = 0, per: int = 10, dim: int = 5, spread: float = 8.0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=spread, size=(3, dim))
    x = np.concatenate([c + rng.normal(size=(per, dim)) for c in centers])
    return x, [g for g in range(3) for _ in range(per)]


def finite_difference_error(P: np.ndarray, y: np.ndarray, h: float = 1e-6) -> float:
    _, g = kl_gradient(P, y)
    fd = np.zeros_like(y)
    for idx in np.ndindex(*y.shape):
        yp, ym = y.copy(), y.copy()
        yp[idx] += h
        ym[idx] -= h
        fd[idx] = (kl_divergence(P, yp) - kl_divergence(P, ym)) / (2 * h)
    return float(np.linalg.norm(g - fd) / np.linalg.norm(fd))


def row_perplexities(x: np.ndarray, perplexity: float) -> np.ndarray:
    cond, _ = conditional_probabilities(squared_distances(x), perplexity)
    out = []
    for row in cond:
        p = row[row > 0]
        out.append(math.exp(-(p * np.log(p)).sum()))
    return np.array(out)


@pytest.mark.parametrize("perplexity", [2.5, 5.0, 9.0])
def test_perplexity_calibration(perplexity):
    x, _ = blobs(1)
    perp = row_perplexities(x, perplexity)
    assert np.all(np.abs(perp - perplexity) / perplexity < 1e-3)


def test_joint_probabilities_symmetric_and_normalised():
    x, _ = blobs(2)
    P = joint_probabilities(x, 5.0)
    assert np.allclose(P, P.T, atol=0, rtol=0)
    assert abs(P.sum() - 1.0) < 1e-9
    assert np.all(np.diag(P) == 0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(8, 4))
    P = joint_probabilities(x, 2.0)
    y = rng.normal(size=(8, 2))
    assert finite_difference_error(P, y) < 1e-4


def test_clusters_separate_in_the_plane():
    x, labels = blobs(4)
    proj = tsne(x, TsneConfig(perplexity=5, learning_rate="auto", iterations=400), labels=labels)
    c = proj.coords
    lab = np.array(labels)
    centroids = np.array([c[lab == g].mean(0) for g in range(3)])
    nearest = np.argmin(((c[:, None] - centroids[None]) ** 2).sum(-1), axis=1)
    assert (nearest == lab).all()


def test_kl_decreases_and_ends_monotone():
    x, _ = blobs(5)
    proj = tsne(x, TsneConfig(perplexity=5, iterations=400))
    assert proj.final_kl < proj.initial_kl
    tail = proj.kl_history[-50:]
    assert all(b <= a for a, b in zip(tail, tail[1:]))
    assert proj.final_kl == pytest.approx(kl_divergence(joint_probabilities(x, 5), proj.coords), abs=1e-12)


def test_deterministic_for_fixed_seed():
    x, _ = blobs(6)
    cfg = TsneConfig(perplexity=4, iterations=300, seed=11)
    a, b = tsne(x, cfg), tsne(x, cfg)
    assert np.array_equal(a.coords, b.coords)
    assert not np.array_equal(a.coords, tsne(x, TsneConfig(perplexity=4, iterations=300, seed=12)).coords)


def test_embedding_set_input_keeps_ids():
    x, _ = blobs(7, per=4)
    es = EmbeddingSet(normalize_rows(x), tuple(f"id{i}" for i in range(len(x))), "t")
    proj = tsne(es, TsneConfig(perplexity=3, iterations=250))
    assert proj.fragment_ids == es.fragment_ids and proj.coords.shape == (12, 2)


def test_input_checks():
    with pytest.raises(TsneError, match="zero variance"):
        tsne(np.ones((10, 3)), TsneConfig(perplexity=2, iterations=250))
    with pytest.raises(TsneError, match="at least 8"):
        tsne(np.eye(5), TsneConfig(perplexity=1.2, iterations=250))
    with pytest.raises(TsneError, match="perplexity"):
        tsne(np.eye(10), TsneConfig(perplexity=5, iterations=250))
    with pytest.raises(TsneError):
        TsneConfig(iterations=10)
    with pytest.raises(TsneError):
        TsneConfig(learning_rate="fast")


def test_auto_learning_rate():
    cfg = TsneConfig(learning_rate="auto")
    assert cfg.rate_for(30) == 50.0
    assert cfg.rate_for(4800) == 100.0
    assert TsneConfig().rate_for(30) == 200.0


def test_csv_and_json_exports(tmp_path):
    x, labels = blobs(8, per=4)
    proj = tsne(x, TsneConfig(perplexity=3, iterations=250), labels=labels)
    export_projection(proj, tmp_path / "p.csv")
    ids, coords, labs = read_projection_csv(tmp_path / "p.csv")
    assert ids == list(proj.fragment_ids)
    assert np.array_equal(coords, proj.coords)
    assert labs == [str(v) for v in labels]
    export_projection_json(proj, tmp_path / "p.json")
    pts = json.loads((tmp_path / "p.json").read_text())["points"]
    assert pts[0] == {"id": "0", "x": proj.coords[0, 0], "y": proj.coords[0, 1], "label": 0}


def test_csv_without_labels_has_three_columns(tmp_path):
    x, _ = blobs(9, per=4)
    proj = tsne(x, TsneConfig(perplexity=3, iterations=250))
    export_projection(proj, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "id,x,y"
    assert read_projection_csv(tmp_path / "p.csv")[2] is None


def test_two_blobs_keep_every_cross_distance_above_every_within_distance():
    rng = np.random.default_rng(12)
    offset = np.zeros(50)
    offset[0] = 40.0
    x = np.concatenate([rng.normal(size=(20, 50)), rng.normal(size=(20, 50)) + offset])
    c = tsne(x, TsneConfig(perplexity=10)).coords
    d = np.sqrt(squared_distances(c))
    group = np.arange(40) < 20
    within = d[group[:, None] == group[None, :]]
    cross = d[group[:, None] != group[None, :]]
    assert cross.min() > within.max()


def test_three_point_projection_export(tmp_path):
    from codesum.viz import Projection2D

    p = Projection2D(np.array([[0.1, 0.2], [1 / 3, -2.5e-7], [3.0, 4.0]]), ("a", "b", "c"), None, 0.0)
    export_projection(p, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert len(lines) == 4
    ids, coords, _ = read_projection_csv(tmp_path / "p.csv")
    assert ids == ["a", "b", "c"] and np.max(np.abs(coords - p.coords)) <= 1e-9
