"""Token-to-document aggregation: averaging and the attention probe.

Averaging is the unsupervised path. The attention probe is supervised
on an artist-identification proxy task: k learned probe vectors score
tokens through a shared tanh mapping, each probe softmax-weights the
token embeddings into a context vector, and the concatenated contexts
(k * d_emb, the document embedding handed downstream) feed a dense
classifier over artist classes. Word embeddings stay frozen during
probe training unless fine-tuning is explicitly switched on.

Neither aggregator uses token positions; both are permutation-invariant
by construction.
"""

import logging
import struct
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import TokenizedDocument
from .nn import Adam, DenseStack, Linear, softmax, softmax_cross_entropy
from .utils import TrainingDivergedError
from .word2vec import EmbeddingMatrix

logger = logging.getLogger(__name__)

PROBE_MAGIC = b"LYRP"
PROBE_VERSION = 1


def average_embed(
    tokens: Sequence[str],
    emb: EmbeddingMatrix,
    flags: Optional[Counter] = None,
) -> np.ndarray:
    """Arithmetic mean of in-vocabulary input vectors; OOV tokens are
    skipped, and a document with none left becomes a flagged zero vector."""
    ids = emb.ids(tokens)
    if not ids:
        if flags is not None:
            flags["all_oov"] += 1
        return np.zeros(emb.dim, dtype=np.float64)
    return emb.vectors[ids].astype(np.float64).mean(axis=0)


# ---------------------------------------------------------------------------
# Proxy task dataset
# ---------------------------------------------------------------------------

@dataclass
class ProxyDataset:
    """Balanced artist-identification examples: every class has exactly
    per_class documents."""
    examples: list[tuple[TokenizedDocument, int]]
    artists: list[str]        # class id -> artist id
    per_class: int

    @property
    def n_classes(self) -> int:
        return len(self.artists)


def build_proxy_dataset(
    docs: Sequence[TokenizedDocument],
    n_artists: int = 1000,
    seed: int = 0,
) -> ProxyDataset:
    """Top n_artists by song count; each contributes the minimum selected
    song count, sampled uniformly without replacement."""
    by_artist: dict[str, list[TokenizedDocument]] = {}
    for doc in docs:
        by_artist.setdefault(doc.artist_id, []).append(doc)
    if len(by_artist) < n_artists:
        raise ValueError(f"need {n_artists} distinct artists, corpus has {len(by_artist)}")
    selected = sorted(by_artist, key=lambda a: (-len(by_artist[a]), a))[:n_artists]
    per_class = min(len(by_artist[a]) for a in selected)
    rng = np.random.default_rng(seed)
    examples: list[tuple[TokenizedDocument, int]] = []
    for class_id, artist in enumerate(selected):
        songs = sorted(by_artist[artist], key=lambda d: d.doc_id)
        picked = rng.choice(len(songs), size=per_class, replace=False)
        examples.extend((songs[i], class_id) for i in picked)
    logger.info("proxy dataset: %d artists x %d songs", n_artists, per_class)
    return ProxyDataset(examples, list(selected), per_class)


# ---------------------------------------------------------------------------
# Attention probe
# ---------------------------------------------------------------------------

@dataclass
class AttentionProbe:
    mapping: np.ndarray    # (d_emb, d_map)
    probes: np.ndarray     # (k, d_map)
    stack: DenseStack      # hidden layers over the k * d_emb embedding
    head: Linear           # last hidden -> n_classes

    @property
    def n_probes(self) -> int:
        return self.probes.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.mapping.shape[0]

    @property
    def output_dim(self) -> int:
        return self.n_probes * self.embed_dim

    @property
    def params(self) -> list[np.ndarray]:
        return [self.mapping, self.probes] + self.stack.params + self.head.params

    @classmethod
    def init(
        cls,
        embed_dim: int,
        n_probes: int,
        map_dim: int,
        hidden_sizes: Sequence[int],
        n_classes: int,
        rng: np.random.Generator,
    ) -> "AttentionProbe":
        mapping = rng.standard_normal((embed_dim, map_dim)) / np.sqrt(embed_dim)
        probes = rng.standard_normal((n_probes, map_dim)) / np.sqrt(map_dim)
        stack = DenseStack.init([n_probes * embed_dim, *hidden_sizes], rng)
        head = Linear.init(hidden_sizes[-1] if hidden_sizes else n_probes * embed_dim, n_classes, rng)
        return cls(mapping, probes, stack, head)


def attention_weights(token_vecs: np.ndarray, probe: AttentionProbe) -> np.ndarray:
    """(tokens, probes) softmax weights: column i sums to 1."""
    mapped = np.tanh(token_vecs @ probe.mapping)       # (T, d_map)
    scores = mapped @ probe.probes.T                   # (T, k)
    return softmax(scores, axis=0)


def _attention_forward(token_vecs: np.ndarray, probe: AttentionProbe):
    mapped = np.tanh(token_vecs @ probe.mapping)
    scores = mapped @ probe.probes.T
    weights = softmax(scores, axis=0)
    contexts = weights.T @ token_vecs                  # (k, d_emb)
    return contexts, (token_vecs, mapped, weights)


def _attention_backward(d_contexts: np.ndarray, cache, probe: AttentionProbe, need_d_tokens: bool = False):
    token_vecs, mapped, weights = cache
    d_weights = token_vecs @ d_contexts.T              # (T, k)
    # softmax Jacobian per probe column
    d_scores = weights * (d_weights - (d_weights * weights).sum(axis=0, keepdims=True))
    d_mapped = d_scores @ probe.probes                 # (T, d_map)
    d_probes = d_scores.T @ mapped
    d_pre_tanh = d_mapped * (1.0 - mapped ** 2)
    d_mapping = token_vecs.T @ d_pre_tanh
    d_tokens = None
    if need_d_tokens:
        d_tokens = weights @ d_contexts + d_pre_tanh @ probe.mapping.T
    return d_mapping, d_probes, d_tokens


def attention_embed(
    tokens: Sequence[str],
    probe: AttentionProbe,
    emb: EmbeddingMatrix,
    flags: Optional[Counter] = None,
) -> np.ndarray:
    """Concatenated per-probe context vectors (k * d_emb); documents with
    no in-vocabulary tokens become a flagged zero vector."""
    ids = emb.ids(tokens)
    if not ids:
        if flags is not None:
            flags["all_oov"] += 1
        return np.zeros(probe.output_dim, dtype=np.float64)
    token_vecs = emb.vectors[ids].astype(np.float64)
    contexts, _ = _attention_forward(token_vecs, probe)
    return contexts.reshape(-1)


def classify_logits(token_vecs: np.ndarray, probe: AttentionProbe) -> np.ndarray:
    contexts, _ = _attention_forward(token_vecs, probe)
    hidden, _ = probe.stack.forward(contexts.reshape(1, -1))
    return probe.head.forward(hidden)[0]


def classifier_loss_and_grads(
    probe: AttentionProbe,
    token_vec_list: Sequence[np.ndarray],
    labels: np.ndarray,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    need_d_tokens: bool = False,
):
    """Mean cross-entropy over a batch of documents and its exact gradient
    for every probe parameter (ordered as probe.params). Optionally also
    returns per-document gradients with respect to the token embeddings
    (for fine-tuning); otherwise that slot is None.
    """
    feats = np.empty((len(token_vec_list), probe.output_dim))
    caches = []
    for row, token_vecs in enumerate(token_vec_list):
        contexts, cache = _attention_forward(token_vecs, probe)
        feats[row] = contexts.reshape(-1)
        caches.append(cache)
    hidden, stack_cache = probe.stack.forward(feats, dropout=dropout, rng=rng)
    logits = probe.head.forward(hidden)
    loss, d_logits = softmax_cross_entropy(logits, labels)
    d_head_w, d_head_b, d_hidden = probe.head.backward(hidden, d_logits)
    d_stack_w, d_stack_b, d_feats = probe.stack.backward(d_hidden, stack_cache)
    d_mapping = np.zeros_like(probe.mapping)
    d_probes = np.zeros_like(probe.probes)
    d_tokens: Optional[list[np.ndarray]] = [] if need_d_tokens else None
    for row in range(len(token_vec_list)):
        d_contexts = d_feats[row].reshape(probe.n_probes, probe.embed_dim)
        dm, dp, dt = _attention_backward(d_contexts, caches[row], probe, need_d_tokens)
        d_mapping += dm
        d_probes += dp
        if need_d_tokens:
            d_tokens.append(dt)
    grads = [d_mapping, d_probes, *d_stack_w, *d_stack_b, d_head_w, d_head_b]
    return loss, grads, d_tokens


@dataclass
class AttentionConfig:
    n_probes: int = 8
    map_dim: int = 8
    dense_layers: int = 1
    dense_size: int = 64
    dropout: float = 0.0
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    val_fraction: float = 0.1
    seed: int = 0
    fine_tune: bool = False   # when on, embedding rows take plain SGD steps


def train_attention_aggregator(
    proxy: ProxyDataset,
    emb: EmbeddingMatrix,
    cfg: AttentionConfig,
) -> tuple[AttentionProbe, dict]:
    """Minimize softmax cross-entropy over artist classes with Adam.

    Returns the trained probe and a history dict with per-epoch train
    loss and held-out categorical accuracy. The embedding matrix is left
    byte-identical unless cfg.fine_tune is set.
    """
    rng = np.random.default_rng(cfg.seed)
    n_classes = proxy.n_classes
    hidden = [cfg.dense_size] * cfg.dense_layers
    probe = AttentionProbe.init(emb.dim, cfg.n_probes, cfg.map_dim, hidden, n_classes, rng)
    optimizer = Adam(probe.params, cfg.lr)

    id_lists = [np.asarray(emb.ids(doc.tokens), dtype=np.int64) for doc, _ in proxy.examples]
    labels = np.asarray([cls for _, cls in proxy.examples], dtype=np.int64)
    usable = [i for i, ids in enumerate(id_lists) if ids.size > 0]
    if len(usable) < len(id_lists):
        logger.warning("%d proxy documents have no in-vocab tokens; excluded",
                       len(id_lists) - len(usable))

    # Stratified held-out split: the same number of documents per class.
    val_per_class = max(1, int(round(cfg.val_fraction * proxy.per_class)))
    by_class: dict[int, list[int]] = {}
    for i in usable:
        by_class.setdefault(int(labels[i]), []).append(i)
    val_idx, train_idx = [], []
    for cls in sorted(by_class):
        members = np.asarray(by_class[cls])
        order = rng.permutation(len(members))
        val_idx.extend(members[order[:val_per_class]].tolist())
        train_idx.extend(members[order[val_per_class:]].tolist())
    train_idx = np.asarray(train_idx)
    val_idx = np.asarray(val_idx)

    history = {"train_loss": [], "val_accuracy": []}
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx.size)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, train_idx.size, cfg.batch_size):
            batch = train_idx[order[start:start + cfg.batch_size]]
            token_vec_list = [emb.vectors[id_lists[i]].astype(np.float64) for i in batch]
            loss, grads, d_tokens = classifier_loss_and_grads(
                probe, token_vec_list, labels[batch],
                dropout=cfg.dropout, rng=rng if cfg.dropout else None,
                need_d_tokens=cfg.fine_tune,
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"proxy loss is not finite at epoch {epoch + 1}")
            optimizer.step(grads)
            if cfg.fine_tune:
                for i, dt in zip(batch, d_tokens):
                    np.add.at(emb.vectors, id_lists[i], (-cfg.lr * dt).astype(emb.vectors.dtype))
            epoch_loss += loss
            n_batches += 1
        history["train_loss"].append(epoch_loss / max(1, n_batches))
        history["val_accuracy"].append(
            proxy_accuracy(probe, emb, [id_lists[i] for i in val_idx], labels[val_idx])
        )
        logger.info("proxy epoch %d: loss %.4f, val accuracy %.3f",
                    epoch + 1, history["train_loss"][-1], history["val_accuracy"][-1])
    return probe, history


def proxy_accuracy(
    probe: AttentionProbe,
    emb: EmbeddingMatrix,
    id_lists: Sequence[np.ndarray],
    labels: np.ndarray,
) -> float:
    hits = 0
    for ids, label in zip(id_lists, labels):
        token_vecs = emb.vectors[ids].astype(np.float64)
        logits = classify_logits(token_vecs, probe)
        hits += int(np.argmax(logits) == label)
    return hits / max(1, len(id_lists))


# ---------------------------------------------------------------------------
# Serialization: shapes, then row-major little-endian float32 parameters
# ---------------------------------------------------------------------------

def save_probe(probe: AttentionProbe, path) -> None:
    hidden_sizes = [w.shape[1] for w in probe.stack.weights]
    with open(path, "wb") as fh:
        fh.write(PROBE_MAGIC)
        fh.write(struct.pack("<I", PROBE_VERSION))
        fh.write(struct.pack("<IIII", probe.embed_dim, probe.mapping.shape[1],
                             probe.n_probes, probe.head.weight.shape[1]))
        fh.write(struct.pack("<I", len(hidden_sizes)))
        for size in hidden_sizes:
            fh.write(struct.pack("<I", size))
        for arr in probe.params:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_probe(path) -> AttentionProbe:
    with open(path, "rb") as fh:
        if fh.read(4) != PROBE_MAGIC:
            raise ValueError(f"{path}: not an attention probe file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != PROBE_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        embed_dim, map_dim, n_probes, n_classes = struct.unpack("<IIII", fh.read(16))
        (n_hidden,) = struct.unpack("<I", fh.read(4))
        hidden_sizes = [struct.unpack("<I", fh.read(4))[0] for _ in range(n_hidden)]

        def read_array(shape):
            n = int(np.prod(shape))
            data = fh.read(4 * n)
            if len(data) != 4 * n:
                raise ValueError(f"{path}: truncated parameter payload")
            return np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(shape)

        mapping = read_array((embed_dim, map_dim))
        probes = read_array((n_probes, map_dim))
        sizes = [n_probes * embed_dim, *hidden_sizes]
        weights = [read_array((a, b)) for a, b in zip(sizes, sizes[1:])]
        biases = [read_array((b,)) for b in sizes[1:]]
        head_w = read_array((sizes[-1], n_classes))
        head_b = read_array((n_classes,))
    return AttentionProbe(mapping, probes, DenseStack(weights, biases), Linear(head_w, head_b))
