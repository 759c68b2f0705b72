"""Command-line entry point.

    codesum <summarize|embed|clone|cluster|viz|run|report> [-c config.yaml] [--section.key=value ...]

Exit codes: 0 success, 1 other stage failure, 2 config error, 3 provider
error, 4 summary failure cap exceeded.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import dataset, embed, llm, pipeline, prompt
from .config import ConfigError, load_config, validate

EXIT_OK, EXIT_STAGE, EXIT_CONFIG, EXIT_PROVIDER, EXIT_CAP = 0, 1, 2, 3, 4

COMMANDS = ("summarize", "embed", "clone", "cluster", "viz", "run", "report")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="codesum", description=__doc__.splitlines()[0] if __doc__ else None)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("-c", "--config", help="YAML pipeline config")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _run(command: str, cfg) -> int:
    out = Path(cfg.get("output_dir"))
    if command == "report":
        text = pipeline.render_report(out)
        (out / "report.md").write_text(text + "\n", encoding="utf-8")
        print(text)
        return EXIT_OK

    stage = "summarize"
    try:
        if command == "summarize":
            outcome = pipeline.run_summarize(cfg)
            m = outcome.manifest
            print(f"calls={m['calls']} hits={m['hits']} records={m['records']} failures={len(m['failures'])}")
            return EXIT_OK

        stage = "embed"
        corpus, es = pipeline.run_embed(cfg)
        if command == "embed":
            print(f"embedded {len(es)} summaries (dim {es.dim}) into {out}")
            return EXIT_OK

        tasks = [command] if command != "run" else [t for t in pipeline.TASKS if cfg.get("tasks", t) is not None]
        if command == "run":
            validate(cfg, require_task=True)
        for task in tasks:
            stage = task
            report = pipeline.TASKS[task](cfg, corpus, es)
            if task == "clone":
                t, best = report["weighted"]["best"]["T"], report["weighted"]["best"]
                print(f"clone: best weighted F1 {best['f1']:.4f} at T={t:.2f}")
            elif task == "cluster":
                ari = report.get("ari")
                print(f"cluster: K={report['k']} inertia={report['inertia']:.6f}" + (f" ARI={ari:.4f}" if ari is not None else ""))
            else:
                print(f"viz: KL {report['initial_kl']:.4f} -> {report['final_kl']:.4f}")
        (out / "report.md").write_text(pipeline.render_report(out) + "\n", encoding="utf-8")
        return EXIT_OK
    except llm.FailureCapExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except llm.ProviderError as exc:
        print(f"error in stage {stage!r}: provider error {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ValueError, KeyError, TypeError, OSError, embed.EmbeddingError, prompt.TemplateError,
            dataset.DatasetError) as exc:
        print(f"error in stage {stage!r}: {exc}", file=sys.stderr)
        return EXIT_STAGE


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, rest)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return _run(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
