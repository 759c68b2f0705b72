"""Pipeline configuration: one YAML file plus ``--section.key=value`` overrides.

Schema (relative paths resolve against the config file's directory)::

    dataset:
      kind: poj104 | flat | jsonl
      path: corpus root or .jsonl file
      name: cache namespace (defaults to the path's basename)
      pairs: optional pair file ({"id1","id2","label"} per line)
      sample: {n_pos: int, n_neg: int}   # used when no pair file is given
      seed: 0
    llm:
      provider: fixture | openai
      model: gpt-3.5-turbo
      endpoint: https://api.openai.com/v1
      fixture: responses file (fixture provider)
      template: optional template file with one {code} placeholder
      language: english
      temperature: 0.0
      max_output_tokens: 128
      context_limit: 4096
      parallelism: 4
      failure_cap: 0.01
    embedding:
      provider: hashing | remote
      model: all-MiniLM-L12-v2
      endpoint: http://localhost:8080/v1
      dim: 384
      seed: 0
      batch_size: 64
    tasks:
      clone: {grid: [0.50, 0.55, 0.60, 0.65, 0.70, 0.75]}
      cluster: {k: 15, seed: 0, restarts: 10}
      viz: {perplexity: 30, learning_rate: 200, iterations: 1000, seed: 0}  # learning_rate may be "auto"
    stopwords: {enabled: false, list: optional file}
    cache_root: .codesum-cache
    output_dir: out

API keys come from ``CODESUM_API_KEY_<PROVIDER>`` (provider upper-cased).
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import yaml


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "dataset": {"kind": "poj104", "path": None, "name": None, "pairs": None, "sample": None, "seed": 0},
    "llm": {
        "provider": "fixture",
        "model": "gpt-3.5-turbo",
        "endpoint": "https://api.openai.com/v1",
        "fixture": None,
        "template": None,
        "language": "english",
        "temperature": 0.0,
        "max_output_tokens": 128,
        "context_limit": 4096,
        "parallelism": 4,
        "failure_cap": 0.01,
    },
    "embedding": {
        "provider": "hashing",
        "model": None,
        "endpoint": None,
        "dim": 384,
        "seed": 0,
        "batch_size": 64,
    },
    "tasks": {"clone": None, "cluster": None, "viz": None},
    "stopwords": {"enabled": False, "list": None},
    "cache_root": ".codesum-cache",
    "output_dir": "out",
}

_PATH_KEYS = [
    ("dataset", "path"),
    ("dataset", "pairs"),
    ("llm", "fixture"),
    ("llm", "template"),
    ("stopwords", "list"),
    ("cache_root",),
    ("output_dir",),
]
_MUST_EXIST = [("dataset", "path"), ("dataset", "pairs"), ("llm", "fixture"), ("llm", "template"), ("stopwords", "list")]
# keys that change where or how fast things run, not what comes out
_NON_SEMANTIC = [("llm", "parallelism"), ("cache_root",), ("output_dir",)]


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _get(tree: dict, path: Sequence[str]) -> Any:
    for k in path:
        if not isinstance(tree, dict):
            return None
        tree = tree.get(k)
    return tree


def _set(tree: dict, path: Sequence[str], value: Any) -> None:
    for k in path[:-1]:
        nxt = tree.get(k)
        if not isinstance(nxt, dict):
            nxt = {}
            tree[k] = nxt
        tree = nxt
    tree[path[-1]] = value


def parse_value(raw: str) -> Any:
    if "," in raw:
        return [yaml.safe_load(part) for part in raw.split(",") if part.strip()]
    return yaml.safe_load(raw)


def parse_overrides(args: Sequence[str]) -> list[tuple[list[str], Any]]:
    """Turn ``--a.b=v`` / ``--a.b v`` tokens into (key path, value) pairs."""
    out = []
    i = 0
    while i < len(args):
        tok = args[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"missing value for --{key}")
            i += 1
            raw = args[i]
        out.append((key.split("."), parse_value(raw)))
        i += 1
    return out


@dataclass(frozen=True)
class PipelineConfig:
    tree: dict
    base_dir: Path

    def __getitem__(self, key: str) -> Any:
        return self.tree[key]

    def get(self, *path: str) -> Any:
        return _get(self.tree, path)

    def path(self, *path: str) -> Path | None:
        v = self.get(*path)
        return None if v is None else Path(v)

    @property
    def dataset_name(self) -> str:
        return self.get("dataset", "name") or Path(self.get("dataset", "path")).name.removesuffix(".jsonl")

    def semantic_tree(self) -> dict:
        tree = copy.deepcopy(self.tree)
        for p in _NON_SEMANTIC:
            _set(tree, p, None)
        for p in _PATH_KEYS:
            v = _get(tree, p)
            if v is not None and p not in _NON_SEMANTIC:
                _set(tree, p, _file_fingerprint(Path(v)))
        return tree

    def hash(self, *sections: str) -> str:
        """Stable digest of the semantically meaningful settings (optionally of some sections only)."""
        tree = self.semantic_tree()
        if sections:
            tree = {s: tree.get(s) for s in sections}
        blob = json.dumps(tree, sort_keys=True, ensure_ascii=False, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _file_fingerprint(p: Path) -> str:
    # identify referenced files by name and content, not by absolute location
    if p.is_file():
        return f"{p.name}:{hashlib.sha256(p.read_bytes()).hexdigest()[:16]}"
    return p.name


def load_config(path: str | os.PathLike | None, overrides: Sequence[str] = ()) -> PipelineConfig:
    tree: dict = {}
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        try:
            loaded = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config root must be a mapping")
        tree = loaded
        base = p.resolve().parent
    for key, value in parse_overrides(overrides):
        _set(tree, key, value)
    unknown = set(tree) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    tree = _merge(DEFAULTS, tree)
    for p in _PATH_KEYS:
        v = _get(tree, p)
        if v is not None:
            _set(tree, p, str((base / Path(str(v)).expanduser()).resolve()))
    cfg = PipelineConfig(tree, base)
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig, require_task: bool = False) -> None:
    if cfg.get("dataset", "path") is None:
        raise ConfigError("dataset.path is required")
    if cfg.get("dataset", "kind") not in ("poj104", "flat", "jsonl"):
        raise ConfigError(f"dataset.kind must be poj104, flat or jsonl, not {cfg.get('dataset', 'kind')!r}")
    for p in _MUST_EXIST:
        v = cfg.get(*p)
        if v is not None and not Path(v).exists():
            raise ConfigError(f"{'.'.join(p)} points to missing path {v}")
    if cfg.get("llm", "provider") not in ("fixture", "openai"):
        raise ConfigError("llm.provider must be fixture or openai")
    if cfg.get("llm", "provider") == "fixture" and not cfg.get("llm", "fixture"):
        raise ConfigError("llm.fixture is required for the fixture provider")
    if cfg.get("embedding", "provider") not in ("hashing", "remote"):
        raise ConfigError("embedding.provider must be hashing or remote")
    if cfg.get("embedding", "provider") == "remote" and not cfg.get("embedding", "endpoint"):
        raise ConfigError("embedding.endpoint is required for the remote provider")
    if int(cfg.get("llm", "parallelism")) < 1:
        raise ConfigError("llm.parallelism must be >= 1")
    tasks = cfg.get("tasks") or {}
    if require_task and not any(tasks.get(t) is not None for t in ("clone", "cluster", "viz")):
        raise ConfigError("enable at least one of tasks.clone, tasks.cluster, tasks.viz")
    sample = cfg.get("dataset", "sample")
    if sample is not None and not (isinstance(sample, dict) and {"n_pos", "n_neg"} <= set(sample)):
        raise ConfigError("dataset.sample needs n_pos and n_neg")


def api_key(provider: str) -> str | None:
    return os.environ.get(f"CODESUM_API_KEY_{provider.upper().replace('-', '_')}")
