"""Stage orchestration: summarize -> embed -> clone / cluster / viz -> reports.

Every report file is deterministic for a given config and cache state;
nothing time-dependent is written into them.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from . import cloneval, cluster, dataset, embed, llm, metrics, prompt, store, viz
from .config import PipelineConfig, api_key

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {message}")


def _write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def load_corpus(cfg: PipelineConfig) -> dataset.Corpus:
    kind = cfg.get("dataset", "kind")
    path = cfg.get("dataset", "path")
    name = cfg.dataset_name
    if kind == "jsonl":
        return dataset.load_corpus_jsonl(path, name=name)
    return dataset.load_corpus_dir(path, kind, name=name)


def make_chat_provider(cfg: PipelineConfig) -> llm.ChatProvider:
    c = cfg["llm"]
    limit = c.get("context_limit")
    if c["provider"] == "fixture":
        return llm.FixtureProvider.from_file(c["fixture"], model=c["model"], context_limit=limit)
    return llm.OpenAICompatibleProvider(
        c["endpoint"], c["model"], api_key("openai"), provider_id=c["model"], context_limit=limit
    )


def make_embedder(cfg: PipelineConfig) -> embed.EmbedProvider:
    c = cfg["embedding"]
    if c["provider"] == "hashing":
        return embed.HashingEmbedder(int(c["dim"]), int(c.get("seed") or 0))
    return embed.RemoteEmbedder(
        c["endpoint"], c.get("model") or "default", api_key("embedding"),
        dim=c.get("dim"), batch_size=int(c.get("batch_size") or 64),
    )


def make_template(cfg: PipelineConfig) -> prompt.PromptTemplate:
    c = cfg["llm"]
    if c.get("template"):
        return prompt.PromptTemplate.from_file(c["template"], c["language"])
    return prompt.PromptTemplate.default(c["language"])


def open_store(cfg: PipelineConfig, provider: llm.ChatProvider) -> store.SummaryStore:
    path = store.store_path(cfg.get("cache_root"), cfg.dataset_name, provider.provider_id, cfg.get("llm", "language"))
    return store.SummaryStore(path)


@dataclass
class SummarizeOutcome:
    corpus: dataset.Corpus
    summaries: llm.SummarySet
    manifest: dict


def run_summarize(cfg: PipelineConfig, provider: llm.ChatProvider | None = None) -> SummarizeOutcome:
    """Summarize the corpus and write ``summarize_manifest.json``.

    FailureCapExceeded still writes the manifest before propagating.
    """
    corpus = load_corpus(cfg)
    provider = provider or make_chat_provider(cfg)
    template = make_template(cfg)
    c = cfg["llm"]
    out = Path(cfg.get("output_dir"))
    with open_store(cfg, provider) as st:
        try:
            result = llm.summarize_corpus(
                corpus, template, provider, st, int(c["parallelism"]),
                failure_cap=float(c["failure_cap"]),
                max_output_tokens=int(c["max_output_tokens"]),
                temperature=float(c["temperature"]),
            )
            capped = None
        except llm.FailureCapExceeded as exc:
            result, capped = exc.result, exc  # type: ignore[attr-defined]
    manifest = {
        "config_hash": cfg.hash(),
        "dataset": cfg.dataset_name,
        "fragments": len(corpus),
        "skipped_files": corpus.skipped,
        "calls": result.calls,
        "hits": result.hits,
        "records": len(result.ok()),
        "failures": [{"id": f.fragment_id, "error": f.error} for f in result.failures],
    }
    _write_json(out / "summarize_manifest.json", manifest)
    if capped is not None:
        raise capped
    return SummarizeOutcome(corpus, result, manifest)


def _apply_stopwords(cfg: PipelineConfig, summaries: list[prompt.Summary]) -> tuple[list[prompt.Summary], list[str]]:
    sw = cfg.get("stopwords") or {}
    if not sw.get("enabled"):
        return summaries, []
    lang = cfg.get("llm", "language")
    stoplist = prompt.load_stoplist(sw["list"]) if sw.get("list") else prompt.builtin_stoplist(lang)
    kept, dropped = [], []
    for s in summaries:
        try:
            kept.append(prompt.remove_stop_words(s, stoplist))
        except prompt.ExtractionFailed:
            dropped.append(s.fragment_id)
    return kept, dropped


def _embedding_key(cfg: PipelineConfig, summaries: llm.SummarySet) -> str:
    h = hashlib.sha256(cfg.hash("embedding", "stopwords").encode())
    for s in summaries.ok():
        h.update(f"{s.fragment_id}\0{s.text}\0".encode("utf-8"))
    return h.hexdigest()[:16]


def run_embed(cfg: PipelineConfig, provider: llm.ChatProvider | None = None,
              embedder: embed.EmbedProvider | None = None) -> tuple[dataset.Corpus, embed.EmbeddingSet]:
    """Embed successful summaries, reusing ``embeddings.f32`` when its key matches."""
    out = Path(cfg.get("output_dir"))
    summ = run_summarize(cfg, provider)
    key = _embedding_key(cfg, summ.summaries)
    meta_path = out / "embeddings.meta.json"
    if meta_path.exists():
        try:
            es, meta = embed.load_embeddings(out)
            if meta.get("embedding_key") == key:
                return summ.corpus, es
        except (OSError, ValueError, KeyError, embed.EmbeddingError):
            logger.warning("ignoring unreadable cached embeddings in %s", out)
    texts, dropped = _apply_stopwords(cfg, summ.summaries.ok())
    if dropped:
        logger.warning("%d summaries became empty after stop-word removal and were dropped", len(dropped))
    embedder = embedder or make_embedder(cfg)
    es = embed.embed_batch(texts, embedder, batch_size=int(cfg.get("embedding", "batch_size") or 64))
    embed.export_embeddings(es, out, extra={"embedding_key": key})
    # continue from the float32 file so cold and warm runs see the same vectors
    es, _ = embed.load_embeddings(out)
    return summ.corpus, es


def _pairs_for(cfg: PipelineConfig, corpus: dataset.Corpus) -> dataset.PairDataset:
    d = cfg["dataset"]
    if d.get("pairs"):
        pairs = dataset.load_pair_jsonl(d["pairs"], source_corpus=corpus.name)
        pairs.check_against(corpus)
        return pairs
    if d.get("sample"):
        s = d["sample"]
        return dataset.sample_balanced_pairs(corpus, int(s["n_pos"]), int(s["n_neg"]), int(d.get("seed") or 0))
    raise StageError("clone", "the clone task needs dataset.pairs or dataset.sample")


def run_clone(cfg: PipelineConfig, corpus: dataset.Corpus, es: embed.EmbeddingSet) -> dict:
    out = Path(cfg.get("output_dir"))
    task = cfg.get("tasks", "clone") or {}
    grid = cloneval.ThresholdConfig(tuple(task.get("grid") or cloneval.DEFAULT_GRID))
    pairs = _pairs_for(cfg, corpus)
    usable, dropped = pairs.restrict(set(es.fragment_ids))
    if dropped:
        logger.warning("%d pair(s) dropped: a fragment has no embedding", dropped)
    if not len(usable):
        raise StageError("clone", "no evaluable pairs")
    sims = cloneval.pair_similarities(usable, es)
    report: dict[str, Any] = {"config_hash": cfg.hash(), "pairs": len(usable), "pairs_dropped": dropped}
    for mode in ("weighted", "binary"):
        sweep = cloneval.sweep_thresholds(usable, es, grid, mode, similarities=sims)
        cloneval.write_sweep_csv(sweep, out / f"clone_sweep_{mode}.csv")
        best_t, best = sweep.best()
        report[mode] = {
            "rows": [{"T": t, **sweep.reports[t].as_row(), **vars(sweep.reports[t].counts)} for t in grid.grid],
            "best": {"T": best_t, **best.as_row()},
        }
    cloneval.write_predictions(usable, sims, grid.grid, out / "clone_predictions.jsonl")
    _write_json(out / "clone_report.json", report)
    return report


def run_cluster(cfg: PipelineConfig, corpus: dataset.Corpus, es: embed.EmbeddingSet) -> dict:
    out = Path(cfg.get("output_dir"))
    task = cfg.get("tasks", "cluster") or {}
    labels = [corpus.get(fid).label for fid in es.fragment_ids]
    have_labels = all(lab is not None for lab in labels)
    k = task.get("k")
    if k is None:
        if not have_labels:
            raise StageError("cluster", "tasks.cluster.k is required when fragments are unlabeled")
        k = len(set(labels))
    result = cluster.kmeans(es, int(k), seed=int(task.get("seed") or 0),
                            max_iter=int(task.get("max_iter") or 300), tol=float(task.get("tol", 1e-4)),
                            restarts=int(task.get("restarts") or 10))
    cluster.export_clustering(result, es.fragment_ids, out)
    report: dict[str, Any] = {
        "config_hash": cfg.hash(),
        "k": int(k),
        "n": len(es),
        "inertia": result.inertia,
        "iterations": result.iterations,
    }
    if have_labels:
        report["ari"] = metrics.adjusted_rand_index(labels, result.assignments.tolist())
    _write_json(out / "cluster_report.json", report)
    return report


def run_viz(cfg: PipelineConfig, corpus: dataset.Corpus, es: embed.EmbeddingSet) -> dict:
    out = Path(cfg.get("output_dir"))
    task = dict(cfg.get("tasks", "viz") or {})
    tcfg = viz.TsneConfig(**task)
    labels = [corpus.get(fid).label for fid in es.fragment_ids]
    proj = viz.tsne(es, tcfg, labels=labels if any(lab is not None for lab in labels) else None)
    viz.export_projection(proj, out / "projection.csv")
    viz.export_projection_json(proj, out / "projection.json")
    report = {"config_hash": cfg.hash(), "n": len(es), "initial_kl": proj.initial_kl, "final_kl": proj.final_kl}
    _write_json(out / "viz_report.json", report)
    return report


TASKS = {"clone": run_clone, "cluster": run_cluster, "viz": run_viz}


def render_report(output_dir: str | Path) -> str:
    """Markdown digest of whatever task reports exist in ``output_dir``."""
    out = Path(output_dir)
    lines = ["# codesum report", ""]
    manifest = out / "summarize_manifest.json"
    if manifest.exists():
        m = json.loads(manifest.read_text(encoding="utf-8"))
        lines += [f"Summaries: {m['records']}/{m['fragments']} fragments, {m['calls']} LLM calls, "
                  f"{m['hits']} cache hits, {len(m['failures'])} failures.", ""]
    clone = out / "clone_report.json"
    if clone.exists():
        r = json.loads(clone.read_text(encoding="utf-8"))
        lines.append(f"## Clone detection ({r['pairs']} pairs)")
        for mode in ("weighted", "binary"):
            lines += ["", f"{mode} averaging:", "", "| T | Accuracy | Precision | Recall | F1 |", "|---|---|---|---|---|"]
            for row in r[mode]["rows"]:
                lines.append(
                    f"| {row['T']:.2f} | {row['accuracy']:.2%} | {row['precision']:.2%} | "
                    f"{row['recall']:.2%} | {row['f1']:.2%} |"
                )
        lines.append("")
    cl = out / "cluster_report.json"
    if cl.exists():
        r = json.loads(cl.read_text(encoding="utf-8"))
        ari = f", ARI {r['ari']:.4f}" if "ari" in r else ""
        lines += ["## Clustering", "", f"K={r['k']}, n={r['n']}, inertia {r['inertia']:.6f}{ari}", ""]
    vz = out / "viz_report.json"
    if vz.exists():
        r = json.loads(vz.read_text(encoding="utf-8"))
        lines += ["## t-SNE", "", f"n={r['n']}, KL {r['initial_kl']:.4f} -> {r['final_kl']:.4f}", ""]
    return "\n".join(lines)
