"""Command-line entry point.

Subcommands mirror the pipeline stages (`synth`, `vocab`, `split`,
`train-embed`, `embed`, `train-tagger`, `eval`) plus the search and
incremental-study protocols. Every subcommand takes --config <json>
and optional --seed / --out-dir / --threads overrides, writes a run
manifest JSON into the output directory and exits non-zero on failure,
naming the failing stage.
"""

import argparse
import json
import logging
import os
import sys
import time
import traceback

from .corpus import IngestCounters, TokenizerConfig, read_tokenized_corpus
from .experiment import (
    ExperimentConfig,
    SearchSpace,
    StageError,
    incremental_study,
    run_experiment,
    search_experiment,
)
from .synth import SyntheticSpec, generate_synthetic
from .vocab import build_vocab, prune_high_df, save_vocab, top_k

logger = logging.getLogger(__name__)

_STAGE_COMMANDS = {
    "split": "split",
    "train-embed": "train-embed",
    "embed": "embed",
    "train-tagger": "train-tagger",
    "eval": None,  # full pipeline
}


def _load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _experiment_config(args, data: dict) -> ExperimentConfig:
    if args.out_dir:
        data["out_dir"] = args.out_dir
    if args.seed is not None:
        data["seed"] = args.seed
    if args.threads is not None:
        data["threads"] = args.threads
    return ExperimentConfig.from_dict(data)


def _write_manifest(out_dir, command, args, status, outputs, started, error=None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "config": os.path.abspath(args.config),
        "seed": args.seed,
        "threads": args.threads,
        "out_dir": os.path.abspath(out_dir),
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "status": status,
        "error": error,
        "outputs": outputs,
    }
    with open(os.path.join(out_dir, f"manifest-{command}.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_synth(args) -> list[str]:
    spec = SyntheticSpec.from_dict(_load_config(args.config))
    out_dir = args.out_dir or "."
    written = generate_synthetic(spec, out_dir, seed=args.seed)
    return [written["corpus"], *written["tags"]]


def _cmd_vocab(args) -> list[str]:
    data = _load_config(args.config)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    tok_cfg = TokenizerConfig(
        language=data.get("language", "en"),
        max_doc_tokens=int(data.get("max_doc_tokens", 512)),
    )
    counters = IngestCounters()
    docs = read_tokenized_corpus(data["corpus"], tok_cfg, counters)
    vocab = build_vocab(docs, min_count=int(data.get("min_count", 5)))
    if data.get("max_df_ratio") is not None:
        vocab = prune_high_df(vocab, float(data["max_df_ratio"]))
    if data.get("top_k") is not None:
        vocab = top_k(vocab, int(data["top_k"]))
    out_path = os.path.join(out_dir, data.get("out", "vocab.tsv"))
    save_vocab(vocab, out_path)
    logger.info("vocabulary: %d tokens over %d docs (%d lines skipped)",
                len(vocab), vocab.total_docs, len(counters.line_errors))
    return [out_path]


def _cmd_pipeline(args, command: str) -> list[str]:
    cfg = _experiment_config(args, _load_config(args.config))
    result = run_experiment(cfg, stop_after=_STAGE_COMMANDS[command])
    return sorted(str(p) for p in result["paths"].values() if os.path.exists(str(p)))


def _cmd_search(args) -> list[str]:
    data = _load_config(args.config)
    exp_data = data["experiment"]
    if isinstance(exp_data, str):
        exp_data = _load_config(exp_data)
    base = _experiment_config(args, exp_data)
    space = None
    if "space" in data:
        space = SearchSpace(
            grids=data["space"].get("grids", {}),
            log_uniform={k: tuple(v) for k, v in data["space"].get("log_uniform", {}).items()},
        )
    seed = args.seed if args.seed is not None else int(data.get("seed", base.seed))
    concurrency = args.threads if args.threads is not None else int(data.get("concurrency", 20))
    search_experiment(
        base,
        space=space,
        trials=int(data.get("trials", 100)),
        concurrency=concurrency,
        seed=seed,
    )
    return [os.path.join(base.out_dir, "trials.jsonl"), os.path.join(base.out_dir, "best.json")]


def _cmd_incremental(args) -> list[str]:
    data = _load_config(args.config)
    exp_data = data["experiment"]
    if isinstance(exp_data, str):
        exp_data = _load_config(exp_data)
    base = _experiment_config(args, exp_data)
    incremental_study(base, [float(f) for f in data["fractions"]])
    return [os.path.join(base.out_dir, "incremental.csv")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lyrictag",
        description="Lyric document embeddings and multi-task tagging experiments.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "synth": "generate a synthetic corpus and tag datasets",
        "vocab": "build (and optionally prune) a vocabulary file",
        "split": "compute the album-grouped stratified split",
        "train-embed": "train the configured embedder",
        "embed": "embed every corpus document",
        "train-tagger": "train the multi-task tagger",
        "eval": "run the full pipeline and write metric reports",
        "search": "random hyperparameter search",
        "incremental": "train on corpus fractions, report mAP per fraction",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=None, help="override worker/concurrency count")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    command = args.command
    out_dir = args.out_dir
    if out_dir is None and command not in ("synth", "vocab"):
        data = _load_config(args.config)
        exp = data.get("experiment", data)
        if isinstance(exp, str):
            exp = _load_config(exp)
        out_dir = exp.get("out_dir", ".")
    out_dir = out_dir or "."

    handlers = {
        "synth": _cmd_synth,
        "vocab": _cmd_vocab,
        "search": _cmd_search,
        "incremental": _cmd_incremental,
    }
    try:
        if command in handlers:
            outputs = handlers[command](args)
        else:
            outputs = _cmd_pipeline(args, command)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _write_manifest(out_dir, command, args, "error", [], started, error=str(exc))
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        traceback.print_exc()
        _write_manifest(out_dir, command, args, "error", [], started, error=str(exc))
        return 1
    _write_manifest(out_dir, command, args, "ok", outputs, started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
