"""Sentence-embedding providers and unit-norm embedding sets."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from .prompt import Summary

logger = logging.getLogger(__name__)

NORM_TOL = 1e-6
_TOKEN = re.compile(r"\w+", re.UNICODE)


class EmbeddingError(RuntimeError):
    pass


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise EmbeddingError(f"expected a 2-D matrix, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        bad = int(np.flatnonzero((norms == 0) | ~np.isfinite(norms))[0])
        raise EmbeddingError(f"row {bad} has zero or non-finite norm")
    return m / norms[:, None]


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray
    fragment_ids: tuple[str, ...]
    provider_id: str
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != len(self.fragment_ids):
            raise EmbeddingError(f"{v.shape} vectors for {len(self.fragment_ids)} ids")
        if len(v):
            norms = np.linalg.norm(v, axis=1)
            if np.any(np.abs(norms - 1.0) > NORM_TOL):
                raise EmbeddingError("embedding rows must be unit-norm")
        index = {fid: i for i, fid in enumerate(self.fragment_ids)}
        if len(index) != len(self.fragment_ids):
            raise EmbeddingError("duplicate fragment ids in embedding set")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "fragment_ids", tuple(self.fragment_ids))
        object.__setattr__(self, "_index", index)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.fragment_ids)

    def __contains__(self, fragment_id: object) -> bool:
        return fragment_id in self._index

    def row(self, fragment_id: str) -> int:
        try:
            return self._index[fragment_id]
        except KeyError:
            raise KeyError(f"no embedding for fragment {fragment_id!r}") from None

    def vector(self, fragment_id: str) -> np.ndarray:
        return self.vectors[self.row(fragment_id)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self.fragment_ids == other.fragment_ids
            and self.provider_id == other.provider_id
            and np.array_equal(self.vectors, other.vectors)
        )

    __hash__ = None  # type: ignore[assignment]


def _bucket(token: str, dim: int, seed: int) -> int:
    digest = hashlib.blake2b(f"{seed}\0{token}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def deterministic_embed(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Seeded feature-hashing bag of tokens, L2-normalized."""
    if dim < 2:
        raise ValueError("dim must be >= 2")
    vec = np.zeros(dim, dtype=np.float64)
    tokens = tokenize(text)
    if not tokens:
        digest = hashlib.blake2b(str(seed).encode(), digest_size=8).digest()
        vec[int.from_bytes(digest, "little") % dim] = 1.0
        return vec
    for tok in tokens:
        vec[_bucket(tok, dim, seed)] += 1.0
    return vec / np.linalg.norm(vec)


class EmbedProvider:
    provider_id = "embedder"
    dim: int | None = None

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError


class HashingEmbedder(EmbedProvider):
    def __init__(self, dim: int = 384, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.provider_id = f"hashing-{dim}-s{seed}"

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([deterministic_embed(t, self.dim, self.seed) for t in texts])


class PayloadTooLarge(EmbeddingError):
    pass


class RemoteEmbedder(EmbedProvider):
    """Client for hosted embedding endpoints: POST ``{"model", "input": [...]}``.

    Accepts either the ``{"data": [{"embedding": [...], "index": i}]}`` or the
    ``{"embeddings": [[...], ...]}`` response shape. A 413 halves the batch
    and retries.
    """

    def __init__(self, base_url: str, model: str, api_key: str | None = None, *,
                 dim: int | None = None, batch_size: int = 64, timeout: float = 120.0,
                 provider_id: str | None = None, client: httpx.Client | None = None,
                 path: str = "/embeddings"):
        self.url = base_url.rstrip("/") + path
        self.model = model
        self.dim = dim
        self.batch_size = batch_size
        self.provider_id = provider_id or model
        self.headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.client = client or httpx.Client(timeout=timeout)

    def _post(self, texts: Sequence[str]) -> np.ndarray:
        try:
            resp = self.client.post(self.url, json={"model": self.model, "input": list(texts)}, headers=self.headers)
        except httpx.TransportError as exc:
            raise EmbeddingError(f"embedding request failed: {exc}") from exc
        if resp.status_code == 413:
            raise PayloadTooLarge("payload too large")
        if resp.status_code != 200:
            raise EmbeddingError(f"embedding endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            if "data" in body:
                items = sorted(body["data"], key=lambda d: d.get("index", 0))
                rows = [d["embedding"] for d in items]
            else:
                rows = body["embeddings"]
            mat = np.asarray(rows, dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise EmbeddingError(f"malformed embedding response: {exc!r}") from exc
        if mat.ndim != 2 or mat.shape[0] != len(texts):
            raise EmbeddingError(f"expected {len(texts)} embeddings, got shape {mat.shape}")
        return mat

    def _embed_chunk(self, texts: Sequence[str], size: int) -> np.ndarray:
        parts = []
        i = 0
        while i < len(texts):
            chunk = texts[i : i + size]
            try:
                parts.append(self._post(chunk))
                i += len(chunk)
            except PayloadTooLarge:
                if size == 1:
                    raise
                size = max(1, size // 2)
                logger.info("embedding payload too large; batch size now %d", size)
        return np.concatenate(parts) if parts else np.zeros((0, self.dim or 0))

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        mat = self._embed_chunk(list(texts), self.batch_size)
        if len(mat):
            if self.dim is None:
                self.dim = mat.shape[1]
            elif mat.shape[1] != self.dim:
                raise EmbeddingError(f"provider returned dim {mat.shape[1]}, expected {self.dim}")
        return mat


def embed_batch(
    summaries: Sequence[Summary],
    provider: EmbedProvider,
    *,
    batch_size: int = 64,
    workers: int = 1,
) -> EmbeddingSet:
    """Embed summaries in input order and L2-normalize every row."""
    texts = [s.text for s in summaries]
    ids = tuple(s.fragment_id for s in summaries)
    if not texts:
        return EmbeddingSet(np.zeros((0, provider.dim or 0)), (), provider.provider_id)
    chunks = [texts[i : i + batch_size] for i in range(0, len(texts), batch_size)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(provider.embed_texts, chunks))
    else:
        parts = [provider.embed_texts(c) for c in chunks]
    dims = {p.shape[1] for p in parts}
    if len(dims) != 1:
        raise EmbeddingError(f"inconsistent embedding dimensions across batches: {sorted(dims)}")
    mat = np.concatenate(parts)
    if mat.shape[0] != len(texts):
        raise EmbeddingError(f"provider returned {mat.shape[0]} rows for {len(texts)} texts")
    return EmbeddingSet(normalize_rows(mat), ids, provider.provider_id)


def export_embeddings(es: EmbeddingSet, directory: str | os.PathLike, extra: dict | None = None) -> None:
    """Write ``embeddings.f32`` (little-endian, row-major) and ``embeddings.meta.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    es.vectors.astype("<f4").tofile(d / "embeddings.f32")
    meta = {"dim": es.dim, "n": len(es), "provider_id": es.provider_id, "fragment_ids": list(es.fragment_ids)}
    if extra:
        meta.update(extra)
    (d / "embeddings.meta.json").write_text(json.dumps(meta, ensure_ascii=False, indent=1), encoding="utf-8")


def load_embeddings(directory: str | os.PathLike) -> tuple[EmbeddingSet, dict]:
    d = Path(directory)
    meta = json.loads((d / "embeddings.meta.json").read_text(encoding="utf-8"))
    raw = np.fromfile(d / "embeddings.f32", dtype="<f4")
    n, dim = meta["n"], meta["dim"]
    if raw.size != n * dim:
        raise EmbeddingError(f"embeddings.f32 holds {raw.size} floats, meta says {n}x{dim}")
    mat = raw.reshape(n, dim).astype(np.float64)
    vectors = normalize_rows(mat) if n else np.zeros((0, dim))
    return EmbeddingSet(vectors, tuple(meta["fragment_ids"]), meta["provider_id"]), meta
