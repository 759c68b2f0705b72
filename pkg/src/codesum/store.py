"""Line-delimited JSON persistence for LLM summaries.

Records are keyed by content hash, so identical source text in different
files shares one summary. Each ``put`` appends a line; later lines win on
reload.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, NamedTuple

from .prompt import Summary

logger = logging.getLogger(__name__)

FIELDS = (
    "fragment_hash",
    "provider",
    "lang",
    "template_hash",
    "fragment_id",
    "summary",
    "stopwords_removed",
    "created_at",
)


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class SummaryKey(NamedTuple):
    fragment_hash: str
    provider: str
    lang: str
    template_hash: str


@dataclass(frozen=True)
class SummaryRecord:
    key: SummaryKey
    summary: Summary
    created_at: str = field(default_factory=utc_now)
    # not persisted; only meaningful for records produced in this process
    preamble_skipped: bool = field(default=False, compare=False)

    def to_json(self) -> str:
        row = {
            "fragment_hash": self.key.fragment_hash,
            "provider": self.key.provider,
            "lang": self.key.lang,
            "template_hash": self.key.template_hash,
            "fragment_id": self.summary.fragment_id,
            "summary": self.summary.text,
            "stopwords_removed": self.summary.stopwords_removed,
            "created_at": self.created_at,
        }
        return json.dumps(row, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "SummaryRecord":
        row = json.loads(line)
        if not isinstance(row, dict) or set(row) != set(FIELDS):
            raise ValueError("unexpected record fields")
        key = SummaryKey(row["fragment_hash"], row["provider"], row["lang"], row["template_hash"])
        if not all(isinstance(k, str) for k in key):
            raise ValueError("key fields must be strings")
        summary = Summary(
            text=str(row["summary"]),
            fragment_id=str(row["fragment_id"]),
            prompt_language=row["lang"],
            stopwords_removed=bool(row["stopwords_removed"]),
        )
        return cls(key, summary, str(row["created_at"]))


def _slug(part: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", part) or "_"


def store_path(cache_root: str | os.PathLike, dataset: str, provider: str, lang: str) -> Path:
    return Path(cache_root) / _slug(dataset) / _slug(provider) / _slug(lang) / "summaries.jsonl"


class SummaryStore:
    """Append-only JSONL store; reads are lock-free, writes go through one lock."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._records: dict[SummaryKey, SummaryRecord] = {}
        self._lock = threading.Lock()
        self._fh = None
        self.corrupt_lines = 0
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open(encoding="utf-8", errors="replace") as fh:
            for line_no, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = SummaryRecord.from_json(line)
                except (ValueError, KeyError, TypeError) as exc:
                    self.corrupt_lines += 1
                    logger.warning("%s:%d: ignoring corrupt record (%s)", self.path, line_no, exc)
                    continue
                self._records[rec.key] = rec

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[SummaryRecord]:
        return iter(list(self._records.values()))

    def __contains__(self, key: object) -> bool:
        return key in self._records

    def get(self, key: SummaryKey) -> SummaryRecord | None:
        return self._records.get(key)

    def put(self, record: SummaryRecord) -> None:
        line = record.to_json() + "\n"
        with self._lock:
            if self._fh is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = self.path.open("a", encoding="utf-8")
            self._fh.write(line)
            self._records[record.key] = record

    def flush(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
                os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
                os.fsync(self._fh.fileno())
                self._fh.close()
                self._fh = None

    def compact(self) -> None:
        """Rewrite the file with one line per live key, dropping superseded and corrupt lines."""
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp = self.path.with_suffix(".jsonl.tmp")
            with tmp.open("w", encoding="utf-8") as fh:
                for rec in self._records.values():
                    fh.write(rec.to_json() + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)
            self.corrupt_lines = 0

    def snapshot(self) -> dict[SummaryKey, SummaryRecord]:
        return dict(self._records)

    def __enter__(self) -> "SummaryStore":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
