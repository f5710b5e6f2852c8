"""Experiment driver: end-to-end pipelines, corpus subsampling, random
hyperparameter search and the incremental-training study.

A pipeline run is ingest -> split -> train embedder -> embed all
documents -> train tagger -> evaluate on the test split -> write
reports. Every stage's artifact lands in the run's output directory
next to a key file holding a content hash of the stage's configuration
and inputs; a rerun with matching keys reuses the artifact instead of
recomputing. Training subsampling (the incremental study) draws from
the train and validation documents only; the test split is never
touched.
"""

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import aggregate, baselines, doc2vec, tagging, word2vec
from .corpus import IngestCounters, TokenizedDocument, TokenizerConfig, read_tokenized_corpus
from .splitting import SplitAssignment, SplitExample, split_corpus
from .synth import load_tag_dataset
from .utils import stable_token_seed
from .vocab import Vocabulary, build_vocab, load_vocab, prune_high_df, save_vocab, top_k

logger = logging.getLogger(__name__)

EMBEDDERS = ("random", "bow", "tfidf", "word2vec", "word2vec-warm", "doc2vec", "attention")

# Searched hyperparameter grids; learning rate is drawn log-uniformly
# over LR_RANGE instead of from a grid.
SEARCH_GRIDS: dict[str, list] = {
    "embedding_dim": [128, 256, 512],
    "dropout": [round(0.1 * k, 1) for k in range(1, 10)],
    "dense_layers": [1, 2, 4, 8],
    "dense_size": [8, 16, 32, 64, 128, 256, 512],
    "attention_probes": [4, 8, 16, 32],
    "attention_map_dim": [4, 8, 16, 32],
}
LR_RANGE = (1e-5, 1e-1)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# Corpus subsampling
# ---------------------------------------------------------------------------

def subsample_corpus(docs: Sequence, fraction: float, seed: int) -> list:
    """Uniform sample without replacement of round(fraction * N) documents."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(docs)
    size = round(fraction * n)
    if size == 0:
        raise ValueError(f"fraction {fraction} of {n} documents rounds to zero")
    if size == n:
        return list(docs)
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(n, size=size, replace=False))
    return [docs[i] for i in picked]


# ---------------------------------------------------------------------------
# Random hyperparameter search
# ---------------------------------------------------------------------------

@dataclass
class SearchSpace:
    grids: dict[str, list] = field(default_factory=dict)
    log_uniform: dict[str, tuple[float, float]] = field(default_factory=dict)

    def draw(self, rng: np.random.Generator) -> dict:
        params = {}
        for name in sorted(self.grids):
            values = self.grids[name]
            params[name] = values[int(rng.integers(0, len(values)))]
        for name in sorted(self.log_uniform):
            lo, hi = self.log_uniform[name]
            params[name] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        return params

    def is_empty(self) -> bool:
        return not self.grids and not self.log_uniform


def default_search_space(embedder: str) -> SearchSpace:
    grids = {
        "embedding_dim": SEARCH_GRIDS["embedding_dim"],
        "dropout": SEARCH_GRIDS["dropout"],
        "dense_layers": SEARCH_GRIDS["dense_layers"],
        "dense_size": SEARCH_GRIDS["dense_size"],
    }
    if embedder == "attention":
        grids["attention_probes"] = SEARCH_GRIDS["attention_probes"]
        grids["attention_map_dim"] = SEARCH_GRIDS["attention_map_dim"]
    if embedder == "word2vec-warm":
        del grids["embedding_dim"]  # dimension is inherited from the pretrained file
    return SearchSpace(grids=grids, log_uniform={"learning_rate": LR_RANGE})


def random_search(
    space: SearchSpace,
    objective: Callable[[dict], float],
    trials: int = 100,
    concurrency: int = 20,
    seed: int = 0,
) -> tuple[Optional[dict], list[dict]]:
    """Seeded uniform draws from the space, objective = validation mAP.

    All draws happen up front from one rng, so the trial parameter list
    does not depend on scheduling. Failed trials are recorded and the
    search continues. Returns (best trial entry or None, full log).
    """
    if space.is_empty():
        raise ValueError("search space is empty")
    rng = np.random.default_rng(seed)
    drawn = [space.draw(rng) for _ in range(trials)]

    def run(i: int) -> dict:
        try:
            score = float(objective(drawn[i]))
            return {"trial": i, "params": drawn[i], "map": score, "error": None}
        except Exception as exc:  # noqa: BLE001 - trial isolation is the contract
            logger.warning("trial %d failed: %s", i, exc)
            return {"trial": i, "params": drawn[i], "map": None, "error": str(exc)}

    if concurrency <= 1:
        log = [run(i) for i in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            log = list(pool.map(run, range(trials)))
    scored = [entry for entry in log if entry["map"] is not None]
    best = max(scored, key=lambda e: e["map"]) if scored else None
    return best, log


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    corpus: str
    tag_files: list[str]
    out_dir: str
    embedder: str = "word2vec"
    embed_params: dict = field(default_factory=dict)
    tagger: dict = field(default_factory=dict)
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    fraction: float = 1.0
    seed: int = 0
    threads: int = 1
    use_cache: bool = True
    language: str = "en"
    max_doc_tokens: int = 512

    def __post_init__(self):
        if self.embedder not in EMBEDDERS:
            raise ValueError(f"unknown embedder {self.embedder!r}; choose from {EMBEDDERS}")
        self.ratios = tuple(self.ratios)

    def to_dict(self) -> dict:
        data = vars(self).copy()
        data["ratios"] = list(self.ratios)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Stage cache
# ---------------------------------------------------------------------------

def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_key(stage: str, config_slice: dict, input_hashes: Sequence[str]) -> str:
    payload = json.dumps(
        {"stage": stage, "config": config_slice, "inputs": list(input_hashes)},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _cache_valid(marker_path, key: str, artifacts: Sequence[str]) -> bool:
    if not os.path.exists(marker_path):
        return False
    with open(marker_path, "r", encoding="utf-8") as fh:
        if fh.read().strip() != key:
            return False
    return all(os.path.exists(a) for a in artifacts)


def _write_marker(marker_path, key: str) -> None:
    with open(marker_path, "w", encoding="utf-8") as fh:
        fh.write(key + "\n")


# ---------------------------------------------------------------------------
# Embedders
# ---------------------------------------------------------------------------

def _word2vec_config(params: dict, seed: int, workers: int = 1) -> word2vec.Word2vecConfig:
    return word2vec.Word2vecConfig(
        dim=int(params.get("dim", 128)),
        architecture=params.get("architecture", "cbow"),
        window=int(params.get("window", 5)),
        negatives=int(params.get("negatives", 5)),
        epochs=int(params.get("epochs", 5)),
        min_count=int(params.get("min_count", 5)),
        lr=float(params.get("lr", 0.025)),
        subsample=float(params.get("subsample", 1e-3)),
        seed=int(params.get("seed", seed)),
        workers=int(params.get("workers", workers)),
    )


def _baseline_vocab(train_docs, params: dict) -> Vocabulary:
    vocab = build_vocab(train_docs, min_count=int(params.get("min_count", 1)))
    vocab = prune_high_df(vocab, float(params.get("max_df_ratio", 0.9)))
    return top_k(vocab, int(params.get("dim", 128)))


def _train_embedder(cfg: ExperimentConfig, train_docs: list[TokenizedDocument], art_dir: str) -> dict:
    """Train (or derive) the embedder and persist it under art_dir.
    Returns the metadata dict that _load_embedder needs."""
    params = cfg.embed_params
    os.makedirs(art_dir, exist_ok=True)
    meta: dict = {"embedder": cfg.embedder, "params": params, "seed": cfg.seed}
    if cfg.embedder == "random":
        pass  # nothing to train; vectors are hash-seeded on the fly
    elif cfg.embedder in ("bow", "tfidf"):
        vocab = _baseline_vocab(train_docs, params)
        save_vocab(vocab, os.path.join(art_dir, "vocab.tsv"))
    elif cfg.embedder in ("word2vec", "word2vec-warm"):
        w2v_cfg = _word2vec_config(params, cfg.seed, cfg.threads)
        vocab = build_vocab(train_docs, w2v_cfg.min_count)
        initial = None
        if cfg.embedder == "word2vec-warm":
            pretrained = word2vec.load_pretrained_binary(params["pretrained_path"])
            initial = word2vec.warm_start_init(pretrained, vocab, w2v_cfg.seed)
        emb = word2vec.train_word2vec(train_docs, w2v_cfg, vocab=vocab, initial=initial)
        word2vec.save_pretrained_binary(emb, os.path.join(art_dir, "words.bin"))
    elif cfg.embedder == "doc2vec":
        w2v_cfg = _word2vec_config(params, cfg.seed, cfg.threads)
        model = doc2vec.train_doc2vec(train_docs, w2v_cfg, infer_steps=int(params.get("infer_steps", 50)))
        word2vec.save_pretrained_binary(model.words, os.path.join(art_dir, "words.bin"))
        out = word2vec.EmbeddingMatrix(model.words.tokens, model.words.out_vectors)
        word2vec.save_pretrained_binary(out, os.path.join(art_dir, "words_out.bin"))
        save_vocab(model.vocab, os.path.join(art_dir, "vocab.tsv"))
        baselines.write_doc_embeddings(os.path.join(art_dir, "docs.lyre"),
                                       model.doc_ids, model.doc_vectors)
        meta["w2v_config"] = vars(w2v_cfg).copy()
        meta["infer_steps"] = model.infer_steps
    elif cfg.embedder == "attention":
        w2v_cfg = _word2vec_config(params, cfg.seed, cfg.threads)
        emb = word2vec.train_word2vec(train_docs, w2v_cfg)
        word2vec.save_pretrained_binary(emb, os.path.join(art_dir, "words.bin"))
        proxy = aggregate.build_proxy_dataset(
            train_docs, n_artists=int(params.get("n_artists", 1000)), seed=cfg.seed,
        )
        attn_cfg = aggregate.AttentionConfig(
            n_probes=int(params.get("n_probes", 8)),
            map_dim=int(params.get("map_dim", 8)),
            dense_layers=int(params.get("dense_layers", 1)),
            dense_size=int(params.get("dense_size", 64)),
            dropout=float(params.get("dropout", 0.0)),
            lr=float(params.get("attention_lr", 1e-3)),
            batch_size=int(params.get("batch_size", 64)),
            epochs=int(params.get("attention_epochs", 20)),
            seed=cfg.seed,
        )
        probe, history = aggregate.train_attention_aggregator(proxy, emb, attn_cfg)
        aggregate.save_probe(probe, os.path.join(art_dir, "probe.bin"))
        meta["proxy_history"] = history
    with open(os.path.join(art_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta


def _embed_all(cfg: ExperimentConfig, art_dir: str, docs: list[TokenizedDocument]) -> np.ndarray:
    """Embed every document with the persisted embedder artifact."""
    params = cfg.embed_params
    name = cfg.embedder
    if name == "random":
        dim = int(params.get("dim", 128))
        cache: dict[str, np.ndarray] = {}
        return np.stack([
            baselines.random_embed_doc(doc, dim=dim, seed=cfg.seed, cache=cache) for doc in docs
        ])
    if name in ("bow", "tfidf"):
        vocab = load_vocab(os.path.join(art_dir, "vocab.tsv"))
        if name == "bow":
            return np.stack([baselines.bow_vector(d, vocab).to_dense() for d in docs])
        return np.stack([baselines.tfidf_vector(d, vocab).to_dense() for d in docs])
    if name in ("word2vec", "word2vec-warm"):
        emb = word2vec.load_pretrained_binary(os.path.join(art_dir, "words.bin"))
        return np.stack([aggregate.average_embed(d.tokens, emb) for d in docs])
    if name == "doc2vec":
        model = _load_doc2vec(art_dir)
        rows = []
        for doc in docs:
            if doc.doc_id in model.doc2row:
                rows.append(model.doc_vector(doc.doc_id).astype(np.float64))
            else:
                seed = stable_token_seed(cfg.seed, doc.doc_id)
                rows.append(doc2vec.infer_vector(doc.tokens, model, seed=seed).astype(np.float64))
        return np.stack(rows)
    if name == "attention":
        emb = word2vec.load_pretrained_binary(os.path.join(art_dir, "words.bin"))
        probe = aggregate.load_probe(os.path.join(art_dir, "probe.bin"))
        return np.stack([aggregate.attention_embed(d.tokens, probe, emb) for d in docs])
    raise ValueError(f"unknown embedder {name!r}")


def _load_doc2vec(art_dir: str) -> doc2vec.Doc2vecModel:
    with open(os.path.join(art_dir, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    words_in = word2vec.load_pretrained_binary(os.path.join(art_dir, "words.bin"))
    words_out = word2vec.load_pretrained_binary(os.path.join(art_dir, "words_out.bin"))
    emb = word2vec.EmbeddingMatrix(words_in.tokens, words_in.vectors, words_out.vectors)
    vocab = load_vocab(os.path.join(art_dir, "vocab.tsv"))
    doc_ids, doc_vectors = baselines.read_doc_embeddings(os.path.join(art_dir, "docs.lyre"))
    cfg = word2vec.Word2vecConfig(**meta["w2v_config"])
    return doc2vec.Doc2vecModel(emb, vocab, doc_ids, doc_vectors, cfg, meta["infer_steps"])


# ---------------------------------------------------------------------------
# The pipeline
# ---------------------------------------------------------------------------

def _split_labels(docs: list[TokenizedDocument], dataset: tagging.TagDataset) -> list[SplitExample]:
    examples = []
    row_of = {d: i for i, d in enumerate(dataset.doc_ids)}
    for doc in docs:
        labels = []
        row = row_of[doc.doc_id]
        for task in dataset.tasks:
            if task.mask[row] > 0:
                labels.extend(
                    f"{task.vocab.name}:{task.vocab.tags[j]}"
                    for j in np.flatnonzero(task.labels[row] > 0)
                )
        examples.append(SplitExample(doc.doc_id, doc.album_id, labels))
    return examples


def run_experiment(cfg: ExperimentConfig, stop_after: Optional[str] = None) -> dict:
    """Run the pipeline (optionally only up to a named stage: "split",
    "train-embed", "embed" or "train-tagger"); returns paths, and for a
    full run the metric report and overall test mAP. Raises StageError
    naming the failing stage."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    paths = {
        "split": os.path.join(cfg.out_dir, "split.csv"),
        "embedder_dir": os.path.join(cfg.out_dir, "embedder"),
        "embeddings": os.path.join(cfg.out_dir, "embeddings.lyre"),
        "model": os.path.join(cfg.out_dir, "tagger.bin"),
        "history": os.path.join(cfg.out_dir, "tagger_history.json"),
        "metrics_json": os.path.join(cfg.out_dir, "metrics.json"),
        "metrics_csv": os.path.join(cfg.out_dir, "metrics.csv"),
        "predictions": os.path.join(cfg.out_dir, "predictions.csv"),
    }

    # --- ingest -----------------------------------------------------------
    try:
        input_hashes = [_file_hash(cfg.corpus)] + [_file_hash(p) for p in cfg.tag_files]
        counters = IngestCounters()
        tok_cfg = TokenizerConfig(language=cfg.language, max_doc_tokens=cfg.max_doc_tokens)
        docs = read_tokenized_corpus(cfg.corpus, tok_cfg, counters)
        if not docs:
            raise ValueError("corpus is empty after ingestion")
        dataset = load_tag_dataset(cfg.tag_files, [d.doc_id for d in docs])
    except Exception as exc:
        raise StageError("ingest", exc) from exc

    # --- split ------------------------------------------------------------
    try:
        split_cfg = {"ratios": list(cfg.ratios), "seed": cfg.seed,
                     "language": cfg.language, "max_doc_tokens": cfg.max_doc_tokens}
        key = _stage_key("split", split_cfg, input_hashes)
        marker = paths["split"] + ".key"
        if not (cfg.use_cache and _cache_valid(marker, key, [paths["split"]])):
            assignment = split_corpus(_split_labels(docs, dataset), ratios=cfg.ratios, seed=cfg.seed)
            assignment.save_csv(paths["split"])
            _write_marker(marker, key)
        else:
            logger.info("split: reusing cached %s", paths["split"])
        split = SplitAssignment.load_csv(paths["split"], ratios=cfg.ratios).assignment
    except StageError:
        raise
    except Exception as exc:
        raise StageError("split", exc) from exc
    if stop_after == "split":
        return {"out_dir": cfg.out_dir, "paths": paths}

    # --- embedder training --------------------------------------------------
    try:
        trainval = [d for d in docs if split.get(d.doc_id) in ("train", "validation")]
        if cfg.fraction < 1.0:
            trainval = subsample_corpus(trainval, cfg.fraction, cfg.seed)
        sampled_ids = {d.doc_id for d in trainval}
        embed_cfg = {"embedder": cfg.embedder, "params": cfg.embed_params,
                     "fraction": cfg.fraction, "seed": cfg.seed, "split": split_cfg}
        key = _stage_key("embedder", embed_cfg, input_hashes)
        marker = os.path.join(paths["embedder_dir"], "stage.key")
        meta_path = os.path.join(paths["embedder_dir"], "meta.json")
        if not (cfg.use_cache and _cache_valid(marker, key, [meta_path])):
            _train_embedder(cfg, trainval, paths["embedder_dir"])
            _write_marker(marker, key)
        else:
            logger.info("embedder: reusing cached %s", paths["embedder_dir"])
    except StageError:
        raise
    except Exception as exc:
        raise StageError("train-embed", exc) from exc
    if stop_after == "train-embed":
        return {"out_dir": cfg.out_dir, "paths": paths}

    # --- embed all documents ------------------------------------------------
    try:
        key = _stage_key("embeddings", embed_cfg, input_hashes)
        marker = paths["embeddings"] + ".key"
        if not (cfg.use_cache and _cache_valid(marker, key, [paths["embeddings"]])):
            matrix = _embed_all(cfg, paths["embedder_dir"], docs)
            baselines.write_doc_embeddings(paths["embeddings"], [d.doc_id for d in docs], matrix)
            _write_marker(marker, key)
        else:
            logger.info("embeddings: reusing cached %s", paths["embeddings"])
        # The tagger always consumes the file contents (float32), so fresh
        # and cached reruns train on identical bytes.
        emb_ids, embeddings = baselines.read_doc_embeddings(paths["embeddings"])
        if emb_ids != [d.doc_id for d in docs]:
            raise ValueError("embedding file does not align with the corpus")
        embeddings = embeddings.astype(np.float64)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("embed", exc) from exc
    if stop_after == "embed":
        return {"out_dir": cfg.out_dir, "paths": paths}

    # --- tagger -------------------------------------------------------------
    try:
        tagger_cfg = tagging.TaggerConfig(
            hidden_layers=int(cfg.tagger.get("hidden_layers", 2)),
            hidden_size=int(cfg.tagger.get("hidden_size", 128)),
            dropout=float(cfg.tagger.get("dropout", 0.0)),
            lr=float(cfg.tagger.get("lr", 1e-3)),
            batch_size=int(cfg.tagger.get("batch_size", 256)),
            max_epochs=int(cfg.tagger.get("max_epochs", 200)),
            patience=int(cfg.tagger.get("patience", 10)),
            seed=cfg.seed,
        )
        # Training docs outside the subsample are dropped from the tagger's
        # view; the test split stays intact.
        tagger_split = {
            d: s for d, s in split.items()
            if s == "test" or d in sampled_ids
        }
        stage_cfg = {"embed": embed_cfg, "tagger": vars(tagger_cfg).copy()}
        key = _stage_key("tagger", stage_cfg, input_hashes)
        marker = paths["model"] + ".key"
        if not (cfg.use_cache and _cache_valid(marker, key, [paths["model"], paths["history"]])):
            model, history = tagging.train_tagger(embeddings, dataset, tagger_split, tagger_cfg)
            tagging.save_tagger(model, paths["model"])
            with open(paths["history"], "w", encoding="utf-8") as fh:
                json.dump(history, fh, indent=2, sort_keys=True)
                fh.write("\n")
            _write_marker(marker, key)
        else:
            logger.info("tagger: reusing cached %s", paths["model"])
            model = tagging.load_tagger(paths["model"])
            with open(paths["history"], "r", encoding="utf-8") as fh:
                history = json.load(fh)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("train-tagger", exc) from exc
    if stop_after == "train-tagger":
        return {"out_dir": cfg.out_dir, "paths": paths, "history": history}

    # --- evaluation -----------------------------------------------------------
    try:
        test_idx = np.asarray([i for i, d in enumerate(dataset.doc_ids) if split.get(d) == "test"])
        if test_idx.size == 0:
            raise ValueError("test split is empty")
        report = tagging.validation_report(model, embeddings, dataset, test_idx,
                                           epoch=history.get("best_epoch"))
        report.to_json(paths["metrics_json"])
        report.to_csv(paths["metrics_csv"])
        scores = tagging.predict(embeddings[test_idx], model)
        tagging.write_predictions(
            paths["predictions"], [dataset.doc_ids[i] for i in test_idx], scores, model.vocabs,
        )
    except StageError:
        raise
    except Exception as exc:
        raise StageError("eval", exc) from exc

    logger.info("experiment %s: overall test mAP %.4f", cfg.out_dir, report.overall or 0.0)
    return {
        "out_dir": cfg.out_dir,
        "paths": paths,
        "report": report,
        "overall_map": report.overall,
        "history": history,
    }


# ---------------------------------------------------------------------------
# Higher-level protocols
# ---------------------------------------------------------------------------

def incremental_study(base: ExperimentConfig, fractions: Sequence[float]) -> list[dict]:
    """One pipeline run per training fraction, full test set retained.
    Writes incremental.csv (fraction,overall_map) under base.out_dir."""
    rows = []
    for fraction in fractions:
        sub = ExperimentConfig.from_dict({
            **base.to_dict(),
            "fraction": float(fraction),
            "out_dir": os.path.join(base.out_dir, f"fraction_{fraction:g}"),
        })
        result = run_experiment(sub)
        rows.append({"fraction": float(fraction), "overall_map": result["overall_map"]})
    os.makedirs(base.out_dir, exist_ok=True)
    with open(os.path.join(base.out_dir, "incremental.csv"), "w", encoding="utf-8") as fh:
        fh.write("fraction,overall_map\n")
        for row in rows:
            fh.write(f"{row['fraction']:g},{'' if row['overall_map'] is None else repr(row['overall_map'])}\n")
    return rows


def apply_search_params(base: ExperimentConfig, params: dict, out_dir: str) -> ExperimentConfig:
    """Map drawn search parameters onto an experiment configuration."""
    data = base.to_dict()
    data["out_dir"] = out_dir
    embed_params = dict(data.get("embed_params", {}))
    tagger = dict(data.get("tagger", {}))
    if "embedding_dim" in params:
        embed_params["dim"] = int(params["embedding_dim"])
    if "attention_probes" in params:
        embed_params["n_probes"] = int(params["attention_probes"])
    if "attention_map_dim" in params:
        embed_params["map_dim"] = int(params["attention_map_dim"])
    if "dropout" in params:
        tagger["dropout"] = float(params["dropout"])
    if "dense_layers" in params:
        tagger["hidden_layers"] = int(params["dense_layers"])
    if "dense_size" in params:
        tagger["hidden_size"] = int(params["dense_size"])
    if "learning_rate" in params:
        tagger["lr"] = float(params["learning_rate"])
    data["embed_params"] = embed_params
    data["tagger"] = tagger
    return ExperimentConfig.from_dict(data)


def search_experiment(
    base: ExperimentConfig,
    space: Optional[SearchSpace] = None,
    trials: int = 100,
    concurrency: int = 20,
    seed: int = 0,
) -> tuple[Optional[dict], list[dict]]:
    """Random search where each trial is a full pipeline run scored by
    VALIDATION mAP (the tagger's best validation epoch); the winning
    configuration should be re-evaluated on test separately."""
    space = space or default_search_space(base.embedder)

    def objective(params: dict) -> float:
        trial_dir = os.path.join(base.out_dir, "trials",
                                 hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:12])
        cfg = apply_search_params(base, params, trial_dir)
        result = run_experiment(cfg)
        best_epoch = result["history"]["best_epoch"]
        return float(result["history"]["val_map"][best_epoch - 1])

    best, log = random_search(space, objective, trials=trials, concurrency=concurrency, seed=seed)
    os.makedirs(base.out_dir, exist_ok=True)
    with open(os.path.join(base.out_dir, "trials.jsonl"), "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    with open(os.path.join(base.out_dir, "best.json"), "w", encoding="utf-8") as fh:
        json.dump(best, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return best, log
