"""Ranking metrics: per-tag average precision, per-vocabulary mAP, the
tag-count-weighted overall mAP, and the patience-based stopping rule.

AP is non-interpolated. Ranking is deterministic: descending score,
ties broken by ascending doc_id.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


def rank_order(scores: Sequence[float], doc_ids: Optional[Sequence[str]] = None) -> np.ndarray:
    """Indices sorted by descending score, ties by ascending doc_id.

    Without doc_ids, the original position stands in as the id.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if doc_ids is None:
        tie_key = np.arange(len(scores))
    else:
        if len(doc_ids) != len(scores):
            raise ValueError("doc_ids and scores must have equal length")
        tie_key = np.asarray(doc_ids)
    # lexsort: last key is primary
    return np.lexsort((tie_key, -scores))


def average_precision(
    scores: Sequence[float],
    labels: Sequence[int],
    doc_ids: Optional[Sequence[str]] = None,
) -> Optional[float]:
    """Mean over positive ranks k of precision@k; None when no positives.

    Tags without positives are skipped by callers (and excluded from their
    vocabulary's mean) rather than scored zero.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    if not labels.any():
        return None
    order = rank_order(scores, doc_ids)
    ranked = labels[order].astype(np.float64)
    cum_pos = np.cumsum(ranked)
    precision_at = cum_pos / np.arange(1, len(ranked) + 1)
    return float(precision_at[ranked > 0].mean())


def mean_average_precision(
    scores: np.ndarray,
    labels: np.ndarray,
    doc_ids: Optional[Sequence[str]] = None,
) -> tuple[Optional[float], list[Optional[float]]]:
    """Per-tag APs over the columns of (docs x tags) arrays, and their mean
    over tags that had positives. Returns (mAP or None, per-tag APs)."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    aps = [average_precision(scores[:, j], labels[:, j], doc_ids) for j in range(scores.shape[1])]
    scored = [ap for ap in aps if ap is not None]
    return (float(np.mean(scored)) if scored else None), aps


def overall_map(per_vocab_map: Sequence[float], tag_counts: Sequence[int]) -> float:
    """Mean of per-vocabulary mAPs weighted by each vocabulary's tag count."""
    if len(per_vocab_map) == 0:
        raise ValueError("overall_map needs at least one vocabulary")
    if len(per_vocab_map) != len(tag_counts):
        raise ValueError("per_vocab_map and tag_counts must have equal length")
    counts = np.asarray(tag_counts, dtype=np.float64)
    if (counts < 1).any():
        raise ValueError("tag counts must be >= 1")
    return float(np.dot(per_vocab_map, counts) / counts.sum())


def early_stop(history: Sequence[float], patience: int = 10) -> tuple[bool, int]:
    """(stop, best_epoch): stop once the best value has gone `patience`
    consecutive epochs without improving. Epochs are 1-based; ties keep
    the earliest best."""
    if len(history) == 0:
        raise ValueError("history must be non-empty")
    values = np.asarray(history, dtype=np.float64)
    best_idx = int(np.argmax(values))  # argmax returns the first maximum
    stop = (len(values) - 1 - best_idx) >= patience
    return stop, best_idx + 1


@dataclass
class MetricReport:
    """Per-tag APs keyed by vocabulary name, with roll-ups.

    ``per_tag_ap[vocab][tag]`` is None for tags skipped for having no
    positives; those are excluded from the vocabulary mean and listed in
    ``skipped_tags``.
    """
    per_tag_ap: dict[str, dict[str, Optional[float]]]
    per_vocab_map: dict[str, Optional[float]]
    tag_counts: dict[str, int]
    overall: Optional[float]
    epoch: Optional[int] = None
    skipped_tags: list[str] = field(default_factory=list)

    @classmethod
    def from_task_results(
        cls,
        results: dict[str, tuple[list[str], list[Optional[float]]]],
        epoch: Optional[int] = None,
    ) -> "MetricReport":
        """Build from {vocab_name: (tag names, per-tag APs or None)}."""
        per_tag: dict[str, dict[str, Optional[float]]] = {}
        per_vocab: dict[str, Optional[float]] = {}
        tag_counts: dict[str, int] = {}
        skipped: list[str] = []
        for name, (tags, aps) in results.items():
            per_tag[name] = dict(zip(tags, aps))
            tag_counts[name] = len(tags)
            scored = [ap for ap in aps if ap is not None]
            per_vocab[name] = float(np.mean(scored)) if scored else None
            skipped.extend(f"{name}:{tag}" for tag, ap in zip(tags, aps) if ap is None)
        evaluable = {n: m for n, m in per_vocab.items() if m is not None}
        overall = (
            overall_map([evaluable[n] for n in evaluable], [tag_counts[n] for n in evaluable])
            if evaluable
            else None
        )
        if skipped:
            logger.info("tags skipped for zero positives: %s", ", ".join(skipped))
        return cls(per_tag, per_vocab, tag_counts, overall, epoch, skipped)

    def to_json(self, path) -> None:
        payload = {
            "overall_map": self.overall,
            "per_vocab_map": self.per_vocab_map,
            "per_tag_ap": self.per_tag_ap,
            "tag_counts": self.tag_counts,
            "epoch": self.epoch,
            "skipped_tags": self.skipped_tags,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "MetricReport":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(
            per_tag_ap=payload["per_tag_ap"],
            per_vocab_map=payload["per_vocab_map"],
            tag_counts=payload["tag_counts"],
            overall=payload["overall_map"],
            epoch=payload.get("epoch"),
            skipped_tags=payload.get("skipped_tags", []),
        )

    def to_csv(self, path) -> None:
        """Summary rows `vocab,tag,ap` (skipped tags get an empty ap)."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("vocab,tag,ap\n")
            for vocab_name in sorted(self.per_tag_ap):
                for tag, ap in self.per_tag_ap[vocab_name].items():
                    fh.write(f"{vocab_name},{tag},{'' if ap is None else repr(ap)}\n")
