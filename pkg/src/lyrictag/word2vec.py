"""Word embedding training with negative sampling, from scratch.

CBOW (predict the center word from the mean of the context input
vectors, the default) and skip-gram, trained by SGD on the negative
sampling objective: for center w with output target c,

    log sigmoid(u_c . h) + sum over k sampled noise words n of
    log sigmoid(-u_n . h)

where h is the input-side activation. Noise words follow the
unigram^0.75 distribution, realized as a quantized inverse-CDF table.
The learning rate decays linearly to lr * lr_floor_ratio over the
expected number of center updates; frequent tokens are dropped per
update with probability 1 - sqrt(t / f), f being the token's corpus
frequency fraction.

Also the reader/writer for the classic word2vec binary vector format
(ASCII header "<count> <dim>\\n", then per entry the word bytes, one
space, dim little-endian float32 values, an optional trailing newline),
and warm-start initialization of a corpus vocabulary from a pretrained
matrix.

Single-worker runs are bit-reproducible for a fixed seed. With
workers > 1, threads update the shared matrices without locks (updates
may race, the standard lock-free SGD contract), so multi-worker output
is not reproducible.
"""

import logging
import re
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .utils import TrainingDivergedError
from .vocab import Vocabulary, build_vocab

logger = logging.getLogger(__name__)

ARCHITECTURES = ("cbow", "skipgram")


@dataclass
class Word2vecConfig:
    dim: int = 128
    architecture: str = "cbow"
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    min_count: int = 5
    lr: float = 0.025
    subsample: float = 1e-3
    seed: int = 1
    workers: int = 1
    table_size: int = 1_000_000
    lr_floor_ratio: float = 1e-4  # decays to lr / 10,000

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.epochs < 1 or self.window < 1 or self.negatives < 1:
            raise ValueError("epochs, window and negatives must all be >= 1")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


@dataclass
class EmbeddingMatrix:
    """Input vectors (and, while trainable, output vectors) over a token set."""
    tokens: list[str]
    vectors: np.ndarray                    # W, (|V|, d)
    out_vectors: Optional[np.ndarray] = None  # W', (|V|, d); None once inference-only
    token2id: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.token2id = {t: i for i, t in enumerate(self.tokens)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token2id

    def vector(self, token: str) -> np.ndarray:
        return self.vectors[self.token2id[token]]

    def ids(self, tokens: Sequence[str]) -> list[int]:
        t2i = self.token2id
        return [t2i[t] for t in tokens if t in t2i]

    @classmethod
    def random_init(cls, tokens: Sequence[str], dim: int, seed: int) -> "EmbeddingMatrix":
        rng = np.random.default_rng(seed)
        bound = 0.5 / dim
        vectors = rng.uniform(-bound, bound, size=(len(tokens), dim)).astype(np.float32)
        out = np.zeros((len(tokens), dim), dtype=np.float32)
        return cls(list(tokens), vectors, out)


# ---------------------------------------------------------------------------
# Negative sampling distribution
# ---------------------------------------------------------------------------

class UnigramTable:
    """P(token) proportional to count^0.75, sampled via a quantized table."""

    def __init__(self, counts: Sequence[float], table_size: int = 1_000_000, power: float = 0.75):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.size == 0:
            raise ValueError("need at least one token")
        if (counts <= 0).any():
            raise ValueError("counts must be positive")
        weights = counts ** power
        self.probabilities = weights / weights.sum()
        # Inverse CDF sampled at slot centers: token i fills ~p_i * size slots.
        cdf = np.cumsum(self.probabilities)
        slots = (np.arange(table_size) + 0.5) / table_size
        self.table = np.searchsorted(cdf, slots).astype(np.int64)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.table[rng.integers(0, self.table.size, size=n)]

    def sample_excluding(self, rng: np.random.Generator, n: int, forbidden: int) -> np.ndarray:
        """n draws, redrawing any that hit the forbidden (positive) id."""
        draws = self.sample(rng, n)
        while True:
            bad = draws == forbidden
            if not bad.any():
                return draws
            draws[bad] = self.sample(rng, int(bad.sum()))


def negative_sampling_table(counts: Sequence[float], table_size: int = 1_000_000) -> UnigramTable:
    return UnigramTable(counts, table_size=table_size)


# ---------------------------------------------------------------------------
# Per-example objective and exact gradients (pure; shared with doc2vec and
# used by the finite-difference test suite)
# ---------------------------------------------------------------------------

def negative_sampling_loss_and_grads(h: np.ndarray, out_vecs: np.ndarray):
    """Loss and exact gradients for one (activation, outputs) example.

    ``out_vecs`` has the positive target in row 0 and sampled noise rows
    after it. Loss is the negated objective
    -log sigmoid(z_0) - sum_j log sigmoid(-z_j). Returns
    (loss, grad wrt h, grad wrt out_vecs); gradients are of the loss.
    """
    z = out_vecs @ h
    f = expit(z)
    labels = np.zeros_like(f)
    labels[0] = 1.0
    # -log sigmoid(z) = log(1 + exp(-z)), computed stably via logaddexp.
    loss = float(np.logaddexp(0.0, -z[0]) + np.logaddexp(0.0, z[1:]).sum())
    residual = f - labels            # d loss / d z
    grad_h = residual @ out_vecs
    grad_out = np.outer(residual, h)
    return loss, grad_h, grad_out


def cbow_loss_and_grads(context_vecs: np.ndarray, out_vecs: np.ndarray):
    """CBOW example: h is the mean of context input rows.

    Returns (loss, grad wrt context rows, grad wrt output rows). The
    gradient of the mean spreads 1/n of grad_h onto every context row.
    """
    context_vecs = np.atleast_2d(context_vecs)
    h = context_vecs.mean(axis=0)
    loss, grad_h, grad_out = negative_sampling_loss_and_grads(h, out_vecs)
    grad_ctx = np.repeat(grad_h[None, :] / context_vecs.shape[0], context_vecs.shape[0], axis=0)
    return loss, grad_ctx, grad_out


def skipgram_loss_and_grads(center_vec: np.ndarray, out_vecs: np.ndarray):
    """Skip-gram example: h is the center word's input row."""
    loss, grad_h, grad_out = negative_sampling_loss_and_grads(center_vec, out_vecs)
    return loss, grad_h, grad_out


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def subsample_keep_probs(counts: np.ndarray, threshold: float) -> np.ndarray:
    """Per-token survival probability sqrt(t / f), clipped to 1; a zero
    threshold disables subsampling."""
    counts = np.asarray(counts, dtype=np.float64)
    if threshold <= 0:
        return np.ones_like(counts)
    freqs = counts / counts.sum()
    return np.minimum(1.0, np.sqrt(threshold / freqs))


class _Trainer:
    """Mutable training state shared by word2vec and doc2vec epochs."""

    def __init__(self, cfg: Word2vecConfig, vocab: Vocabulary, emb: EmbeddingMatrix):
        if len(vocab) == 0:
            raise ValueError("cannot train on an empty vocabulary")
        if emb.out_vectors is None:
            raise ValueError("embedding matrix has no output vectors; not trainable")
        self.cfg = cfg
        self.emb = emb
        self.counts = np.array([vocab.counts[t] for t in vocab.tokens], dtype=np.float64)
        self.keep_probs = subsample_keep_probs(self.counts, cfg.subsample)
        self.table = negative_sampling_table(self.counts, cfg.table_size)
        # Expected surviving center positions over the whole run; the lr
        # schedule is linear in this count.
        per_epoch = float((self.counts * self.keep_probs).sum())
        self.expected_updates = max(1.0, cfg.epochs * per_epoch)
        self.processed = 0
        self.lr_min = cfg.lr * cfg.lr_floor_ratio

    def current_lr(self) -> float:
        frac = min(1.0, self.processed / self.expected_updates)
        return max(self.lr_min, self.cfg.lr * (1.0 - frac))

    def survivors(self, ids: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if ids.size == 0:
            return ids
        draws = rng.random(ids.size)
        return ids[draws < self.keep_probs[ids]]

    def check_finite(self, epoch: int) -> None:
        for name, arr in (("input", self.emb.vectors), ("output", self.emb.out_vectors)):
            bad = ~np.isfinite(arr)
            if bad.any():
                rows = np.unique(np.nonzero(bad)[0])[:10]
                raise TrainingDivergedError(
                    f"non-finite {name} vectors after epoch {epoch + 1}, rows {rows.tolist()}"
                )


def _train_doc_cbow(trainer: _Trainer, ids: np.ndarray, rng: np.random.Generator, lr: float) -> int:
    kept = trainer.survivors(ids, rng)
    n = kept.size
    if n == 0:
        return 0
    W, Wp = trainer.emb.vectors, trainer.emb.out_vectors
    k = trainer.cfg.negatives
    spans = rng.integers(1, trainer.cfg.window + 1, size=n)
    for pos in range(n):
        b = int(spans[pos])
        ctx = np.concatenate((kept[max(0, pos - b):pos], kept[pos + 1:pos + 1 + b]))
        if ctx.size == 0:
            continue
        center = int(kept[pos])
        negs = trainer.table.sample_excluding(rng, k, center)
        targets = np.concatenate(([center], negs))
        h = W[ctx].mean(axis=0)
        u = Wp[targets]                      # copy; gradients use pre-update rows
        f = expit(u @ h)
        g = -f
        g[0] += 1.0
        g *= lr
        np.add.at(Wp, targets, g[:, None] * h[None, :])
        # Established mean-context convention: every context row takes the
        # full activation gradient (the exact per-row gradient would be a
        # 1/|ctx| share, which trains input vectors too slowly to
        # differentiate; cbow_loss_and_grads keeps the exact math).
        np.add.at(W, ctx, g @ u)
    return n


def _train_doc_skipgram(trainer: _Trainer, ids: np.ndarray, rng: np.random.Generator, lr: float) -> int:
    kept = trainer.survivors(ids, rng)
    n = kept.size
    if n == 0:
        return 0
    W, Wp = trainer.emb.vectors, trainer.emb.out_vectors
    k = trainer.cfg.negatives
    spans = rng.integers(1, trainer.cfg.window + 1, size=n)
    for pos in range(n):
        b = int(spans[pos])
        center = int(kept[pos])
        for cpos in range(max(0, pos - b), min(n, pos + 1 + b)):
            if cpos == pos:
                continue
            target = int(kept[cpos])
            negs = trainer.table.sample_excluding(rng, k, target)
            targets = np.concatenate(([target], negs))
            h = W[center].copy()
            u = Wp[targets]
            f = expit(u @ h)
            g = -f
            g[0] += 1.0
            g *= lr
            np.add.at(Wp, targets, g[:, None] * h[None, :])
            W[center] += g @ u
    return n


_DOC_KERNELS = {"cbow": _train_doc_cbow, "skipgram": _train_doc_skipgram}


def train_word2vec(
    corpus,
    cfg: Word2vecConfig,
    vocab: Optional[Vocabulary] = None,
    initial: Optional[EmbeddingMatrix] = None,
    epoch_callback: Optional[Callable[[int, EmbeddingMatrix], None]] = None,
) -> EmbeddingMatrix:
    """Train embeddings over a (re-iterable) tokenized corpus.

    ``initial`` warm-starts from an existing matrix (see warm_start_init);
    its token set must match the vocabulary, and its dimension overrides
    cfg.dim. ``epoch_callback(epoch_index, matrix)`` fires after each
    epoch's finiteness check, e.g. for held-out loss tracking.
    """
    docs = corpus if isinstance(corpus, list) else list(corpus)
    if vocab is None:
        vocab = build_vocab(docs, cfg.min_count)
    if len(vocab) == 0:
        raise ValueError("vocabulary is empty; nothing to train")

    if initial is not None:
        if initial.tokens != vocab.tokens:
            raise ValueError("initial matrix token set does not match the vocabulary")
        emb = initial
        if emb.out_vectors is None:
            emb.out_vectors = np.zeros_like(emb.vectors)
        if emb.dim != cfg.dim:
            cfg = replace(cfg, dim=emb.dim)
    else:
        emb = EmbeddingMatrix.random_init(vocab.tokens, cfg.dim, cfg.seed)

    trainer = _Trainer(cfg, vocab, emb)
    kernel = _DOC_KERNELS[cfg.architecture]
    id_lists = [np.asarray(vocab.ids(doc.tokens), dtype=np.int64) for doc in docs]
    logger.info(
        "training %s dim=%d over %d docs, |V|=%d, %d epochs",
        cfg.architecture, emb.dim, len(id_lists), len(vocab), cfg.epochs,
    )

    if cfg.workers <= 1:
        rng = np.random.default_rng(cfg.seed)
        for epoch in range(cfg.epochs):
            for ids in id_lists:
                lr = trainer.current_lr()
                trainer.processed += kernel(trainer, ids, rng, lr)
            trainer.check_finite(epoch)
            if epoch_callback is not None:
                epoch_callback(epoch, emb)
    else:
        _train_hogwild(trainer, kernel, id_lists, cfg, epoch_callback)
    return emb


def _train_hogwild(trainer, kernel, id_lists, cfg, epoch_callback) -> None:
    """Lock-free threaded training: workers own disjoint document shards
    and race on the shared matrices. Not reproducible by design."""
    def run(worker: int, epoch: int) -> None:
        rng = np.random.default_rng([cfg.seed, worker, epoch])
        for ids in id_lists[worker::cfg.workers]:
            lr = trainer.current_lr()
            trainer.processed += kernel(trainer, ids, rng, lr)

    for epoch in range(cfg.epochs):
        threads = [threading.Thread(target=run, args=(w, epoch)) for w in range(cfg.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        trainer.check_finite(epoch)
        if epoch_callback is not None:
            epoch_callback(epoch, trainer.emb)


def estimate_pairs_loss(emb: EmbeddingMatrix, examples: Sequence[tuple]) -> float:
    """Mean negative-sampling loss over frozen (context_ids, center_id,
    negative_ids) triples; context_ids may be a single id for skip-gram."""
    total = 0.0
    for ctx_ids, center_id, neg_ids in examples:
        ctx = np.atleast_1d(np.asarray(ctx_ids, dtype=np.int64))
        out = emb.out_vectors[np.concatenate(([center_id], np.asarray(neg_ids, dtype=np.int64)))]
        h = emb.vectors[ctx].astype(np.float64).mean(axis=0)
        loss, _, _ = negative_sampling_loss_and_grads(h, out.astype(np.float64))
        total += loss
    return total / max(1, len(examples))


# ---------------------------------------------------------------------------
# Classic binary vector format
# ---------------------------------------------------------------------------

_HEADER_RE = re.compile(rb"^(\d+) (\d+)$")


class BinaryFormatError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: {message} (byte offset {offset})")
        self.offset = offset


def save_pretrained_binary(emb: EmbeddingMatrix, path) -> None:
    """Write the classic format; this writer does not emit per-entry
    trailing newlines (the loader tolerates files that do)."""
    with open(path, "wb") as fh:
        fh.write(f"{len(emb.tokens)} {emb.dim}\n".encode("ascii"))
        rows = np.asarray(emb.vectors, dtype="<f4")
        for token, row in zip(emb.tokens, rows):
            fh.write(token.encode("utf-8") + b" " + row.tobytes())


def load_pretrained_binary(path, max_word_bytes: int = 1000) -> EmbeddingMatrix:
    """Read the classic format into an inference-only matrix (no output
    vectors). Malformed header, truncation or a count mismatch raise
    BinaryFormatError with the failing byte offset."""
    with open(path, "rb") as fh:
        header = fh.readline(64)
        match = _HEADER_RE.match(header.rstrip(b"\n"))
        if not header.endswith(b"\n") or match is None:
            raise BinaryFormatError(path, 0, f"malformed header {header!r}")
        n_words, dim = int(match.group(1)), int(match.group(2))
        if n_words < 1 or dim < 1:
            raise BinaryFormatError(path, 0, f"non-positive header dims {n_words} x {dim}")

        tokens: list[str] = []
        seen: set[str] = set()
        rows: list[bytes] = []
        row_bytes = 4 * dim
        for i in range(n_words):
            word_start = fh.tell()
            word = bytearray()
            while True:
                ch = fh.read(1)
                if ch == b"":
                    raise BinaryFormatError(
                        path, fh.tell(), f"truncated: {i} of {n_words} entries read"
                    )
                if ch == b" ":
                    break
                if ch == b"\n" and not word:
                    continue  # tolerated newline left over from the previous entry
                word.extend(ch)
                if len(word) > max_word_bytes:
                    raise BinaryFormatError(path, word_start, "unterminated word")
            try:
                token = word.decode("utf-8")
            except UnicodeDecodeError:
                raise BinaryFormatError(path, word_start, f"undecodable word {bytes(word)!r}")
            if token in seen:
                raise BinaryFormatError(path, word_start, f"duplicate word {token!r}")
            payload = fh.read(row_bytes)
            if len(payload) != row_bytes:
                raise BinaryFormatError(
                    path, fh.tell(), f"truncated vector for word {token!r} ({i + 1} of {n_words})"
                )
            seen.add(token)
            tokens.append(token)
            rows.append(payload)
        trailer_offset = fh.tell()
        trailer = fh.read()
        if trailer not in (b"", b"\n"):
            raise BinaryFormatError(
                path, trailer_offset, f"{len(trailer)} unexpected trailing bytes after {n_words} entries"
            )

    matrix = np.frombuffer(b"".join(rows), dtype="<f4").reshape(n_words, dim)
    return EmbeddingMatrix(tokens, matrix.copy(), out_vectors=None)


def warm_start_init(pretrained: EmbeddingMatrix, corpus_vocab: Vocabulary, seed: int) -> EmbeddingMatrix:
    """Merge a pretrained matrix into a corpus vocabulary for retraining.

    The result covers exactly the corpus vocabulary: tokens known to the
    pretrained matrix copy their rows, the rest draw uniform +-0.5/dim
    starting rows. Pretrained-only tokens are dropped (they would never
    receive corpus gradients). The result trains with unchanged
    hyperparameters apart from its inherited dimension.
    """
    dim = pretrained.dim
    emb = EmbeddingMatrix.random_init(corpus_vocab.tokens, dim, seed)
    for i, token in enumerate(corpus_vocab.tokens):
        j = pretrained.token2id.get(token)
        if j is not None:
            emb.vectors[i] = pretrained.vectors[j]
    return emb
