"""Corpus loading and labeled pair sets.

Three corpus shapes are supported: a POJ-104 style tree (one directory per
problem, one file per program), a flat directory of files, and a
CodeXGLUE-style JSON-lines file. Pair sets are line-delimited JSON records
``{"id1": ..., "id2": ..., "label": 0|1}``.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Literal, Sequence

import numpy as np

logger = logging.getLogger(__name__)

Layout = Literal["poj104", "flat"]

_LANGUAGE_BY_SUFFIX = {
    ".c": "C",
    ".h": "C",
    ".cc": "C",
    ".cpp": "C",
    ".txt": "C",  # POJ-104 ships programs as .txt
    ".java": "Java",
}


class DatasetError(ValueError):
    pass


class EmptyCorpusError(DatasetError):
    pass


class PairFormatError(DatasetError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"{message} at line {line_no}")
        self.line_no = line_no


@dataclass(frozen=True)
class CodeFragment:
    id: str
    text: str
    label: int | None = None
    language_hint: str = "other"

    def __post_init__(self) -> None:
        if not self.text:
            raise DatasetError(f"fragment {self.id!r} has empty text")


@dataclass(frozen=True)
class Corpus:
    """Immutable, ordered collection of fragments with unique ids."""

    fragments: tuple[CodeFragment, ...]
    name: str = "corpus"
    skipped: int = 0
    paths: tuple[str, ...] = ()
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        index: dict[str, int] = {}
        for i, frag in enumerate(self.fragments):
            if frag.id in index:
                raise DatasetError(f"duplicate fragment id {frag.id!r}")
            index[frag.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.fragments)

    def __iter__(self) -> Iterator[CodeFragment]:
        return iter(self.fragments)

    def __getitem__(self, i: int) -> CodeFragment:
        return self.fragments[i]

    def __contains__(self, fragment_id: object) -> bool:
        return fragment_id in self._index

    def get(self, fragment_id: str) -> CodeFragment:
        try:
            return self.fragments[self._index[fragment_id]]
        except KeyError:
            raise DatasetError(f"unknown fragment id {fragment_id!r}") from None

    @property
    def ids(self) -> list[str]:
        return [f.id for f in self.fragments]

    @property
    def labels(self) -> list[int | None]:
        return [f.label for f in self.fragments]

    def subset(self, ids: Iterable[str]) -> "Corpus":
        keep = set(ids)
        frags = tuple(f for f in self.fragments if f.id in keep)
        return Corpus(frags, name=self.name)


@dataclass(frozen=True)
class Pair:
    id_a: str
    id_b: str
    truth: bool


@dataclass(frozen=True)
class PairDataset:
    pairs: tuple[Pair, ...]
    source_corpus: str = ""
    seed: int | None = None

    def __post_init__(self) -> None:
        for p in self.pairs:
            if p.id_a == p.id_b:
                raise DatasetError(f"self-pair {p.id_a!r}")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[Pair]:
        return iter(self.pairs)

    @property
    def ids(self) -> set[str]:
        return {i for p in self.pairs for i in (p.id_a, p.id_b)}

    def check_against(self, corpus: Corpus) -> None:
        """Raise on the first id that does not resolve in ``corpus``."""
        for p in self.pairs:
            for i in (p.id_a, p.id_b):
                if i not in corpus:
                    raise DatasetError(f"pair references unknown fragment id {i!r}")

    def restrict(self, ids: set[str]) -> tuple["PairDataset", int]:
        """Drop pairs touching ids outside ``ids``; returns the kept set and the drop count."""
        kept = tuple(p for p in self.pairs if p.id_a in ids and p.id_b in ids)
        return PairDataset(kept, self.source_corpus, self.seed), len(self.pairs) - len(kept)


def _decode(raw: bytes) -> str:
    return raw.decode("utf-8", errors="replace")


def _read_one(path: Path) -> str | None:
    try:
        return _decode(path.read_bytes())
    except OSError as exc:
        logger.warning("skipping unreadable file %s: %s", path, exc)
        return None


def _problem_key(name: str) -> tuple[int, int | str]:
    try:
        return (0, int(name))
    except ValueError:
        return (1, name)


def load_corpus_dir(
    root: str | os.PathLike,
    layout: Layout = "poj104",
    *,
    name: str | None = None,
    workers: int = 8,
) -> Corpus:
    """Read every file under ``root`` into a :class:`Corpus`.

    For ``poj104`` each subdirectory is a problem whose integer name becomes
    the label and fragment ids are ``"<problem>/<filename>"``. For ``flat``
    the ids are the file names and labels are absent. Unreadable and empty
    files are skipped with a warning.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"corpus root {root} is not a directory")

    entries: list[tuple[str, int | None, Path]] = []
    if layout == "poj104":
        problems = sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: _problem_key(d.name))
        for d in problems:
            try:
                label = int(d.name)
            except ValueError:
                raise DatasetError(f"poj104 problem directory {d.name!r} is not an integer") from None
            for f in sorted(p for p in d.iterdir() if p.is_file()):
                entries.append((f"{d.name}/{f.name}", label, f))
    elif layout == "flat":
        for f in sorted(p for p in root.iterdir() if p.is_file()):
            entries.append((f.name, None, f))
    else:
        raise DatasetError(f"unknown layout {layout!r}")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        texts = list(pool.map(_read_one, (e[2] for e in entries)))

    fragments = []
    paths = []
    skipped = 0
    for (fid, label, path), text in zip(entries, texts):
        if text is None:
            skipped += 1
            continue
        if not text.strip():
            logger.warning("skipping empty file %s", path)
            skipped += 1
            continue
        hint = _LANGUAGE_BY_SUFFIX.get(path.suffix.lower(), "other")
        fragments.append(CodeFragment(fid, text, label, hint))
        paths.append(str(path))

    if skipped:
        logger.warning("%d file(s) skipped while loading %s", skipped, root)
    if not fragments:
        raise EmptyCorpusError(f"no fragments loaded from {root} ({skipped} skipped)")
    return Corpus(tuple(fragments), name=name or root.name, skipped=skipped, paths=tuple(paths))


def load_corpus_jsonl(
    path: str | os.PathLike,
    *,
    id_field: str | None = None,
    code_field: str | None = None,
    label_field: str = "label",
    language_hint: str = "other",
    name: str | None = None,
) -> Corpus:
    """Load a CodeXGLUE-style JSON-lines corpus.

    Field names are auto-detected when not given: ``idx``/``index``/``id``
    for the id and ``code``/``func`` for the source.
    """
    path = Path(path)
    fragments = []
    skipped = 0
    with path.open("rb") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = _decode(raw).strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed JSON at line {line_no}: {exc.msg}") from None
            fid = rec.get(id_field) if id_field else next(
                (rec[k] for k in ("idx", "index", "id") if k in rec), None
            )
            code = rec.get(code_field) if code_field else next(
                (rec[k] for k in ("code", "func") if k in rec), None
            )
            if fid is None or code is None:
                raise DatasetError(f"record at line {line_no} lacks an id or code field")
            if not str(code).strip():
                logger.warning("skipping empty fragment %s", fid)
                skipped += 1
                continue
            label = rec.get(label_field)
            fragments.append(
                CodeFragment(str(fid), str(code), None if label is None else int(label), language_hint)
            )
    if not fragments:
        raise EmptyCorpusError(f"no fragments loaded from {path}")
    return Corpus(tuple(fragments), name=name or path.stem, skipped=skipped)


def _parse_label(value: object, line_no: int) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, int) and value in (0, 1):
        return bool(value)
    if isinstance(value, str) and value.strip() in ("0", "1"):
        return value.strip() == "1"
    raise PairFormatError(line_no, "invalid label")


def load_pair_jsonl(path: str | os.PathLike, *, source_corpus: str = "") -> PairDataset:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise PairFormatError(line_no, "malformed JSON") from None
            if not isinstance(rec, dict):
                raise PairFormatError(line_no, "record is not an object")
            try:
                a, b, label = rec["id1"], rec["id2"], rec["label"]
            except KeyError as exc:
                raise PairFormatError(line_no, f"missing field {exc.args[0]!r}") from None
            a, b = str(a), str(b)
            if a == b:
                raise PairFormatError(line_no, "self-pair")
            pairs.append(Pair(a, b, _parse_label(label, line_no)))
    return PairDataset(tuple(pairs), source_corpus=source_corpus or Path(path).stem)


def write_pair_jsonl(pairs: PairDataset, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({"id1": p.id_a, "id2": p.id_b, "label": int(p.truth)}) + "\n")


def write_manifest(corpus: Corpus, path: str | os.PathLike) -> None:
    """Export ``{"id", "label", "path"}`` per fragment."""
    paths = corpus.paths or (None,) * len(corpus)
    with open(path, "w", encoding="utf-8") as fh:
        for frag, p in zip(corpus, paths):
            fh.write(json.dumps({"id": frag.id, "label": frag.label, "path": p}, ensure_ascii=False) + "\n")


def pair_capacity(labels: Sequence[int]) -> tuple[int, int]:
    """Number of distinct unordered (same-label, cross-label) pairs."""
    counts: dict[int, int] = defaultdict(int)
    for lab in labels:
        counts[lab] += 1
    n = len(labels)
    same = sum(math.comb(c, 2) for c in counts.values())
    return same, math.comb(n, 2) - same


def _canonical(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


def _unrank_pair(r: int, m: int) -> tuple[int, int]:
    """Map r in [0, C(m,2)) to the r-th (i<j) pair in lexicographic order."""
    i = 0
    row = m - 1
    while r >= row:
        r -= row
        i += 1
        row -= 1
    return i, i + 1 + r


def sample_balanced_pairs(corpus: Corpus, n_pos: int, n_neg: int, seed: int) -> PairDataset:
    """Draw ``n_pos`` same-label and ``n_neg`` cross-label pairs without replacement.

    Fragments are ordered by id first, so the result depends only on corpus
    content, the counts, and the seed. Randomness comes from a Philox
    counter-based generator. Positives are drawn uniformly over all
    same-label pairs by unranking a global pair index; negatives by
    rejection from uniform fragment pairs. When a request exceeds half the
    candidates the full candidate list is enumerated instead.
    """
    if n_pos < 0 or n_neg < 0:
        raise DatasetError("pair counts must be non-negative")
    frags = sorted(corpus, key=lambda f: f.id)
    if any(f.label is None for f in frags):
        raise DatasetError("balanced sampling requires every fragment to carry a label")
    labels = [f.label for f in frags]
    max_pos, max_neg = pair_capacity(labels)  # type: ignore[arg-type]
    if n_pos > max_pos or n_neg > max_neg:
        raise DatasetError(
            f"insufficient candidates: requested {n_pos} positive / {n_neg} negative pairs, "
            f"achievable maximum is {max_pos} positive / {max_neg} negative"
        )

    rng = np.random.Generator(np.random.Philox(seed))
    groups: dict[int, list[int]] = defaultdict(list)
    for i, lab in enumerate(labels):
        groups[lab].append(i)  # type: ignore[index]
    group_list = [groups[k] for k in sorted(groups)]
    sizes = np.array([math.comb(len(g), 2) for g in group_list], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def pos_from_rank(r: int) -> tuple[int, int]:
        g = int(np.searchsorted(offsets, r, side="right")) - 1
        i, j = _unrank_pair(r - int(offsets[g]), len(group_list[g]))
        return group_list[g][i], group_list[g][j]

    chosen: set[tuple[str, str]] = set()
    positives: list[tuple[str, str]] = []
    if n_pos:
        if 2 * n_pos > max_pos:
            ranks = rng.choice(max_pos, size=n_pos, replace=False)
        else:
            ranks = []
            seen: set[int] = set()
            while len(ranks) < n_pos:
                r = int(rng.integers(max_pos))
                if r not in seen:
                    seen.add(r)
                    ranks.append(r)
        for r in ranks:
            i, j = pos_from_rank(int(r))
            positives.append(_canonical(frags[i].id, frags[j].id))
    chosen.update(positives)

    negatives: list[tuple[str, str]] = []
    n = len(frags)
    if n_neg:
        if 2 * n_neg > max_neg:
            cands = [
                (i, j) for i in range(n) for j in range(i + 1, n) if labels[i] != labels[j]
            ]
            picks = rng.choice(len(cands), size=n_neg, replace=False)
            negatives = [_canonical(frags[cands[k][0]].id, frags[cands[k][1]].id) for k in picks]
        else:
            neg_seen: set[tuple[str, str]] = set()
            while len(negatives) < n_neg:
                i, j = (int(x) for x in rng.integers(n, size=2))
                if i == j or labels[i] == labels[j]:
                    continue
                key = _canonical(frags[i].id, frags[j].id)
                if key not in neg_seen:
                    neg_seen.add(key)
                    negatives.append(key)

    tagged = [Pair(a, b, True) for a, b in positives] + [Pair(a, b, False) for a, b in negatives]
    order = rng.permutation(len(tagged))
    return PairDataset(tuple(tagged[k] for k in order), source_corpus=corpus.name, seed=seed)
