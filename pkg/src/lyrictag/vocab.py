"""Vocabulary construction and pruning.

Ids are dense in [0, |V|) and assigned in (count descending, token
ascending) order, which makes every derived operation deterministic:
top_k is a prefix, ties always break lexicographically.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .corpus import TokenizedDocument

logger = logging.getLogger(__name__)


@dataclass
class Vocabulary:
    tokens: list[str]
    counts: dict[str, int]
    doc_freqs: dict[str, int]
    total_docs: int
    token2id: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.token2id = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token2id

    def id_for(self, token: str) -> int:
        return self.token2id[token]

    def count_of(self, token: str) -> int:
        return self.counts[token]

    def ids(self, tokens: Iterable[str]) -> list[int]:
        """Ids of the in-vocabulary tokens, OOV skipped, order preserved."""
        t2i = self.token2id
        return [t2i[t] for t in tokens if t in t2i]


def _ordered(tokens: Iterable[str], counts: dict[str, int]) -> list[str]:
    return sorted(tokens, key=lambda t: (-counts[t], t))


def build_vocab(corpus: Iterable[TokenizedDocument], min_count: int = 5) -> Vocabulary:
    """Count tokens and document frequencies; keep tokens with corpus
    count >= min_count ("fewer than min_count" are dropped)."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter = Counter()
    doc_freqs: Counter = Counter()
    total_docs = 0
    for doc in corpus:
        total_docs += 1
        counts.update(doc.tokens)
        doc_freqs.update(set(doc.tokens))
    kept = {t: c for t, c in counts.items() if c >= min_count}
    if total_docs == 0:
        logger.warning("building vocabulary from an empty corpus")
    elif not kept:
        logger.warning("no token reached min_count=%d; vocabulary is empty", min_count)
    return Vocabulary(
        tokens=_ordered(kept, kept),
        counts=kept,
        doc_freqs={t: doc_freqs[t] for t in kept},
        total_docs=total_docs,
    )


def prune_high_df(vocab: Vocabulary, max_df_ratio: float = 0.9) -> Vocabulary:
    """Drop tokens appearing in at least max_df_ratio of all documents."""
    if not 0 < max_df_ratio <= 1:
        raise ValueError(f"max_df_ratio must be in (0, 1], got {max_df_ratio}")
    if vocab.total_docs == 0:
        return vocab
    kept = [t for t in vocab.tokens if vocab.doc_freqs[t] / vocab.total_docs < max_df_ratio]
    if not kept and len(vocab):
        logger.warning("df pruning at ratio %.2f removed every token", max_df_ratio)
    return Vocabulary(
        tokens=kept,
        counts={t: vocab.counts[t] for t in kept},
        doc_freqs={t: vocab.doc_freqs[t] for t in kept},
        total_docs=vocab.total_docs,
    )


def top_k(vocab: Vocabulary, d: int) -> Vocabulary:
    """The d most frequent tokens, count ties broken lexicographically."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if d > len(vocab):
        logger.warning("top_k d=%d exceeds vocabulary size %d; returning all", d, len(vocab))
        d = len(vocab)
    kept = vocab.tokens[:d]
    return Vocabulary(
        tokens=kept,
        counts={t: vocab.counts[t] for t in kept},
        doc_freqs={t: vocab.doc_freqs[t] for t in kept},
        total_docs=vocab.total_docs,
    )


def save_vocab(vocab: Vocabulary, path) -> None:
    """Write `#docs N` header then one `token<TAB>count<TAB>doc_freq` line
    per token in id order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#docs {vocab.total_docs}\n")
        for token in vocab.tokens:
            fh.write(f"{token}\t{vocab.counts[token]}\t{vocab.doc_freqs[token]}\n")


def load_vocab(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#docs "):
            raise ValueError(f"{path}: missing '#docs' header")
        total_docs = int(header.split()[1])
        tokens: list[str] = []
        counts: dict[str, int] = {}
        doc_freqs: dict[str, int] = {}
        for line in fh:
            if not line.strip():
                continue
            token, count, doc_freq = line.rstrip("\n").split("\t")
            tokens.append(token)
            counts[token] = int(count)
            doc_freqs[token] = int(doc_freq)
    return Vocabulary(tokens=tokens, counts=counts, doc_freqs=doc_freqs, total_docs=total_docs)
