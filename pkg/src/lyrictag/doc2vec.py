"""Paragraph vectors, distributed-memory flavor.

Each document owns a trainable vector that joins the context words in
predicting the center word: the input activation is the mean of the
context input vectors and the document vector, trained with the same
negative-sampling objective, epoch count and learning-rate schedule as
the word-vector trainer. Vectors for unseen documents are inferred by
fresh gradient passes with the word matrices frozen.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .vocab import Vocabulary, build_vocab
from .word2vec import (
    EmbeddingMatrix,
    Word2vecConfig,
    _Trainer,
    negative_sampling_loss_and_grads,
)

logger = logging.getLogger(__name__)

INFER_STEPS = 50
INFER_LR_FLOOR_RATIO = 0.01  # inference lr decays to lr / 100


@dataclass
class Doc2vecModel:
    words: EmbeddingMatrix
    vocab: Vocabulary
    doc_ids: list[str]
    doc_vectors: np.ndarray
    config: Word2vecConfig
    infer_steps: int = INFER_STEPS
    doc2row: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.doc2row = {d: i for i, d in enumerate(self.doc_ids)}

    @property
    def dim(self) -> int:
        return self.doc_vectors.shape[1]

    def doc_vector(self, doc_id: str) -> np.ndarray:
        return self.doc_vectors[self.doc2row[doc_id]]

    def _infer_state(self) -> _Trainer:
        # Rebuilding the sampling table per inferred document would dominate
        # inference time, so keep one read-only trainer around.
        cached = getattr(self, "_cached_trainer", None)
        if cached is None:
            cached = _Trainer(self.config, self.vocab, self.words)
            object.__setattr__(self, "_cached_trainer", cached)
        return cached


def pvdm_loss_and_grads(doc_vec: np.ndarray, context_vecs: np.ndarray, out_vecs: np.ndarray):
    """Loss and exact gradients for one PV-DM example.

    The activation is the mean of the document vector and the context
    rows (context may be empty). Returns (loss, grad wrt doc vector,
    grad wrt context rows, grad wrt output rows).
    """
    context_vecs = np.asarray(context_vecs).reshape(-1, doc_vec.shape[0])
    rows = np.vstack([doc_vec[None, :], context_vecs])
    h = rows.mean(axis=0)
    loss, grad_h, grad_out = negative_sampling_loss_and_grads(h, out_vecs)
    share = grad_h / rows.shape[0]
    grad_ctx = np.repeat(share[None, :], context_vecs.shape[0], axis=0)
    return loss, share, grad_ctx, grad_out


def _pvdm_pass(
    trainer: _Trainer,
    ids: np.ndarray,
    doc_vec: np.ndarray,
    rng: np.random.Generator,
    lr: float,
    learn_words: bool,
) -> int:
    """One pass over a document; mutates doc_vec in place (and, when
    learn_words, the shared word matrices)."""
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
        center = int(kept[pos])
        negs = trainer.table.sample_excluding(rng, k, center)
        targets = np.concatenate(([center], negs))
        contributors = ctx.size + 1
        h = (W[ctx].sum(axis=0) + doc_vec) / contributors
        u = Wp[targets]
        f = expit(u @ h)
        g = -f
        g[0] += 1.0
        g *= lr
        if learn_words:
            np.add.at(Wp, targets, g[:, None] * h[None, :])
        # Mean-context convention as in the word trainer: each contributor
        # (document vector and every context row) takes the full activation
        # gradient; pvdm_loss_and_grads keeps the exact 1/n-share math.
        step = g @ u
        if learn_words and ctx.size:
            np.add.at(W, ctx, step)
        doc_vec += step
    return n


def train_doc2vec(
    corpus,
    cfg: Word2vecConfig,
    vocab: Optional[Vocabulary] = None,
    infer_steps: int = INFER_STEPS,
    epoch_callback: Optional[Callable[[int, "Doc2vecModel"], None]] = None,
) -> Doc2vecModel:
    """Train word and document vectors jointly over a tokenized corpus.

    Single-worker and seeded, hence bit-reproducible; the document list
    order defines the document-vector row order.
    """
    docs = corpus if isinstance(corpus, list) else list(corpus)
    if vocab is None:
        vocab = build_vocab(docs, cfg.min_count)
    if len(vocab) == 0:
        raise ValueError("vocabulary is empty; nothing to train")
    emb = EmbeddingMatrix.random_init(vocab.tokens, cfg.dim, cfg.seed)

    doc_rng = np.random.default_rng([cfg.seed, 1])
    bound = 0.5 / cfg.dim
    doc_vectors = doc_rng.uniform(-bound, bound, size=(len(docs), cfg.dim)).astype(np.float32)
    doc_ids = [d.doc_id for d in docs]

    trainer = _Trainer(cfg, vocab, emb)
    id_lists = [np.asarray(vocab.ids(doc.tokens), dtype=np.int64) for doc in docs]
    model = Doc2vecModel(emb, vocab, doc_ids, doc_vectors, cfg, infer_steps)
    logger.info(
        "training pv-dm dim=%d over %d docs, |V|=%d, %d epochs",
        cfg.dim, len(docs), len(vocab), cfg.epochs,
    )

    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        for row, ids in enumerate(id_lists):
            lr = trainer.current_lr()
            trainer.processed += _pvdm_pass(trainer, ids, doc_vectors[row], rng, lr, learn_words=True)
        trainer.check_finite(epoch)
        if not np.isfinite(doc_vectors).all():
            raise ValueError(f"non-finite document vectors after epoch {epoch + 1}")
        if epoch_callback is not None:
            epoch_callback(epoch, model)
    return model


def infer_vector(
    tokens: list[str],
    model: Doc2vecModel,
    steps: Optional[int] = None,
    seed: int = 0,
    flags: Optional[Counter] = None,
) -> np.ndarray:
    """Vector for an unseen document: random start, `steps` gradient
    passes with the word matrices frozen, learning rate decaying from the
    training rate to 1/100 of it. Empty or fully out-of-vocabulary token
    lists come back as a flagged zero vector.
    """
    steps = model.infer_steps if steps is None else steps
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    dim = model.dim
    ids = np.asarray(model.vocab.ids(tokens), dtype=np.int64)
    if ids.size == 0:
        if flags is not None:
            flags["empty_inference_doc"] += 1
        return np.zeros(dim, dtype=np.float32)

    rng = np.random.default_rng(seed)
    bound = 0.5 / dim
    vec = rng.uniform(-bound, bound, size=dim).astype(np.float32)
    trainer = model._infer_state()
    lr0 = model.config.lr
    lr_end = lr0 * INFER_LR_FLOOR_RATIO
    delta = (lr0 - lr_end) / max(steps - 1, 1)
    lr = lr0
    for _ in range(steps):
        _pvdm_pass(trainer, ids, vec, rng, lr, learn_words=False)
        lr -= delta
    return vec
