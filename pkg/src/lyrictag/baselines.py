"""Sparse and random baseline document representations.

Three baselines: raw bag-of-words counts over a pruned vocabulary,
smoothed TF-IDF with L2 normalization, and deterministic random
per-token embeddings averaged over the document (a word-level control
directly comparable with trained-embedding averaging).

Also home of the shared dense document-embedding file used by every
embedder: binary, header ``magic "LYRE" | u32 version | u64 n_docs |
u32 dim``, then per document a u16 doc_id byte length, the doc_id bytes
(UTF-8) and dim float32 little-endian values. All header integers are
little-endian.
"""

import logging
import math
import struct
from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import TokenizedDocument
from .utils import rng_for_token
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

EMBED_MAGIC = b"LYRE"
EMBED_VERSION = 1


@dataclass
class SparseVector:
    """Indices strictly increasing, values finite, no duplicates."""
    dim: int
    indices: np.ndarray
    values: np.ndarray

    @property
    def is_empty(self) -> bool:
        return len(self.indices) == 0

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        dense = np.zeros(self.dim, dtype=dtype)
        dense[self.indices] = self.values
        return dense

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))


def _doc_term_counts(doc: TokenizedDocument, vocab: Vocabulary) -> Counter:
    return Counter(vocab.token2id[t] for t in doc.tokens if t in vocab.token2id)


def bow_vector(doc: TokenizedDocument, vocab: Vocabulary, flags: Optional[Counter] = None) -> SparseVector:
    """Term counts of in-vocabulary tokens; OOV tokens ignored."""
    term_counts = _doc_term_counts(doc, vocab)
    if not term_counts:
        if flags is not None:
            flags["all_oov"] += 1
        return SparseVector(len(vocab), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))
    indices = np.array(sorted(term_counts), dtype=np.int64)
    values = np.array([term_counts[i] for i in indices], dtype=np.float64)
    return SparseVector(len(vocab), indices, values)


def idf(doc_freq: int, total_docs: int) -> float:
    """Smoothed inverse document frequency: ln((1 + N) / (1 + df)) + 1."""
    return math.log((1.0 + total_docs) / (1.0 + doc_freq)) + 1.0


def tfidf_vector(
    doc: TokenizedDocument,
    vocab: Vocabulary,
    total_docs: Optional[int] = None,
    flags: Optional[Counter] = None,
) -> SparseVector:
    """tf * idf per term, then L2-normalized over the document vector.

    A document with no in-vocabulary tokens comes back as the (flagged)
    zero vector, which cannot be normalized.
    """
    n_docs = vocab.total_docs if total_docs is None else total_docs
    vec = bow_vector(doc, vocab, flags=flags)
    if vec.is_empty:
        return vec
    id2token = vocab.tokens
    weights = np.array([idf(vocab.doc_freqs[id2token[i]], n_docs) for i in vec.indices])
    values = vec.values * weights
    norm = np.linalg.norm(values)
    if norm > 0.0:
        values = values / norm
    return SparseVector(vec.dim, vec.indices, values)


def random_token_vector(token: str, dim: int = 128, seed: int = 0) -> np.ndarray:
    """Standard Gaussian vector drawn from an rng seeded by (seed, token);
    the same token always maps to the same vector."""
    return rng_for_token(seed, token).standard_normal(dim)


def random_embed_doc(
    doc: TokenizedDocument,
    dim: int = 128,
    seed: int = 0,
    cache: Optional[dict[str, np.ndarray]] = None,
    flags: Optional[Counter] = None,
) -> np.ndarray:
    """Mean of hash-seeded per-token Gaussian vectors; empty doc -> zeros.

    Pass a dict as ``cache`` when embedding a whole corpus so each distinct
    token is drawn once.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not doc.tokens:
        if flags is not None:
            flags["empty_doc"] += 1
        return np.zeros(dim, dtype=np.float64)
    total = np.zeros(dim, dtype=np.float64)
    for token in doc.tokens:
        if cache is not None:
            vec = cache.get(token)
            if vec is None:
                vec = cache[token] = random_token_vector(token, dim, seed)
        else:
            vec = random_token_vector(token, dim, seed)
        total += vec
    return total / len(doc.tokens)


def write_doc_embeddings(path, doc_ids: list[str], matrix: np.ndarray) -> None:
    """Write the shared dense embedding file (see module docstring)."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != len(doc_ids):
        raise ValueError(f"matrix shape {matrix.shape} does not match {len(doc_ids)} doc ids")
    data = matrix.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<IQI", EMBED_VERSION, len(doc_ids), matrix.shape[1]))
        for doc_id, row in zip(doc_ids, data):
            raw = doc_id.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"doc_id too long to serialize: {doc_id[:32]}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(row.tobytes())


def read_doc_embeddings(path) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMBED_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {EMBED_MAGIC!r}")
        version, n_docs, dim = struct.unpack("<IQI", fh.read(16))
        if version != EMBED_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        doc_ids = []
        matrix = np.empty((n_docs, dim), dtype=np.float32)
        for i in range(n_docs):
            (id_len,) = struct.unpack("<H", fh.read(2))
            doc_ids.append(fh.read(id_len).decode("utf-8"))
            row = fh.read(4 * dim)
            if len(row) != 4 * dim:
                raise ValueError(f"{path}: truncated at document {i}")
            matrix[i] = np.frombuffer(row, dtype="<f4")
    return doc_ids, matrix
