"""Multi-task multi-label tagging network and its masked loss.

One shared ReLU stack feeds one linear head per tag vocabulary; every
tag gets an independent sigmoid (several tags of one vocabulary can be
active at once). The per-document loss is

    L_d = sum_i weight_i * mask_{i,d} * L_{i,d}

with L_{i,d} the mean binary cross-entropy over vocabulary i's tags and
mask_{i,d} zero when document d has no annotations for task i, which
also zeroes every gradient that task would otherwise contribute. Batch
loss is the mean of per-document losses. Probabilities are clamped to
[1e-7, 1 - 1e-7] inside the loss to keep it finite.
"""

import logging
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .evaluation import MetricReport, average_precision, early_stop
from .nn import Adam, DenseStack, Linear
from .utils import TrainingDivergedError

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"LYRM"
MODEL_VERSION = 1
PROB_EPS = 1e-7


@dataclass
class TagVocabulary:
    name: str
    tags: list[str]

    def __post_init__(self):
        if not self.tags:
            raise ValueError(f"tag vocabulary {self.name!r} has no tags")
        if len(set(self.tags)) != len(self.tags):
            raise ValueError(f"tag vocabulary {self.name!r} has duplicate tags")

    def __len__(self) -> int:
        return len(self.tags)


@dataclass
class TagTask:
    """One annotation task: labels, per-document presence mask, loss weight."""
    vocab: TagVocabulary
    labels: np.ndarray   # (n_docs, n_tags), 0/1
    mask: np.ndarray     # (n_docs,), 0/1
    weight: float = 1.0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.labels.shape[1] != len(self.vocab):
            raise ValueError(
                f"task {self.vocab.name!r}: {self.labels.shape[1]} label columns "
                f"vs {len(self.vocab)} tags"
            )
        if self.labels.shape[0] != self.mask.shape[0]:
            raise ValueError(f"task {self.vocab.name!r}: labels and mask row counts differ")


@dataclass
class TagDataset:
    doc_ids: list[str]
    tasks: list[TagTask]

    def __post_init__(self):
        for task in self.tasks:
            if task.labels.shape[0] != len(self.doc_ids):
                raise ValueError(f"task {task.vocab.name!r} rows do not match doc_ids")


class TaggerModel:
    """Shared dense stack plus one linear head per task, sigmoid outputs."""

    def __init__(self, stack: DenseStack, heads: list[Linear], vocabs: list[TagVocabulary],
                 input_dim: int, dropout: float = 0.0):
        self.stack = stack
        self.heads = heads
        self.vocabs = vocabs
        self.input_dim = input_dim
        self.dropout = dropout

    @property
    def params(self) -> list[np.ndarray]:
        params = self.stack.params
        for head in self.heads:
            params = params + head.params
        return params

    @classmethod
    def init(cls, input_dim: int, hidden_sizes: Sequence[int], vocabs: list[TagVocabulary],
             dropout: float, rng: np.random.Generator) -> "TaggerModel":
        stack = DenseStack.init([input_dim, *hidden_sizes], rng)
        top = hidden_sizes[-1] if hidden_sizes else input_dim
        heads = [Linear.init(top, len(v), rng) for v in vocabs]
        return cls(stack, heads, vocabs, input_dim, dropout)


def forward(embeddings: np.ndarray, model: TaggerModel) -> list[np.ndarray]:
    """Per-task probability matrices for a batch (dropout off)."""
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise ValueError(f"embedding dim {x.shape[1]} does not match model input {model.input_dim}")
    hidden, _ = model.stack.forward(x)
    return [expit(head.forward(hidden)) for head in model.heads]


def predict(embeddings: np.ndarray, model: TaggerModel) -> list[np.ndarray]:
    """Batch scores per task, row order preserved."""
    return forward(embeddings, model)


def masked_multitask_loss(
    preds: Sequence[np.ndarray],
    labels: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    weights: Sequence[float],
) -> float:
    """Mean over documents of sum_i weight_i * mask_i * mean-tag BCE."""
    n_docs = np.atleast_2d(preds[0]).shape[0]
    total = np.zeros(n_docs)
    for p, y, a, w in zip(preds, labels, masks, weights):
        p = np.clip(np.atleast_2d(p), PROB_EPS, 1.0 - PROB_EPS)
        y = np.atleast_2d(y)
        bce = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean(axis=1)
        total += w * np.asarray(a, dtype=np.float64) * bce
    return float(total.mean())


def _loss_and_grads(model: TaggerModel, x: np.ndarray, labels, masks, weights,
                    dropout_rng: Optional[np.random.Generator] = None):
    """Batch loss and gradients for every parameter, in model.params order."""
    n_docs = x.shape[0]
    use_dropout = model.dropout > 0.0 and dropout_rng is not None
    hidden, cache = model.stack.forward(
        x, dropout=model.dropout if use_dropout else 0.0, rng=dropout_rng
    )
    loss = 0.0
    d_hidden = np.zeros_like(hidden)
    head_grads: list[np.ndarray] = []
    for head, y, a, w in zip(model.heads, labels, masks, weights):
        logits = head.forward(hidden)
        p = expit(logits)
        p_hat = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
        scale = (w * np.asarray(a, dtype=np.float64))[:, None] / (y.shape[1] * n_docs)
        bce = -(y * np.log(p_hat) + (1.0 - y) * np.log(1.0 - p_hat)).sum(axis=1, keepdims=True)
        loss += float((scale * bce).sum())
        # d loss / d logit = (p - y) where the clamp is inactive, 0 where it
        # clipped (the loss is flat in p there).
        active = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
        d_logits = scale * (p - y) * active
        d_w, d_b, dh = head.backward(hidden, d_logits)
        head_grads.extend([d_w, d_b])
        d_hidden += dh
    stack_w, stack_b, _ = model.stack.backward(d_hidden, cache)
    return loss, stack_w + stack_b + head_grads


@dataclass
class TaggerConfig:
    hidden_layers: int = 2
    hidden_size: int = 128
    dropout: float = 0.0
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0


def validation_report(
    model: TaggerModel,
    embeddings: np.ndarray,
    dataset: TagDataset,
    doc_indices: np.ndarray,
    epoch: Optional[int] = None,
) -> MetricReport:
    """mAP over one split: per task, AP of each tag over the documents the
    task actually annotates (mask 1); positive-free tags are skipped."""
    scores = predict(embeddings[doc_indices], model)
    doc_ids = [dataset.doc_ids[i] for i in doc_indices]
    results = {}
    for task, task_scores in zip(dataset.tasks, scores):
        present = np.flatnonzero(task.mask[doc_indices] > 0)
        y = task.labels[doc_indices][present]
        s = task_scores[present]
        ids = [doc_ids[i] for i in present]
        aps = [
            average_precision(s[:, j], y[:, j], ids) if present.size else None
            for j in range(len(task.vocab))
        ]
        results[task.vocab.name] = (task.vocab.tags, aps)
    return MetricReport.from_task_results(results, epoch=epoch)


def train_tagger(
    embeddings: np.ndarray,
    dataset: TagDataset,
    split: dict[str, str],
    cfg: TaggerConfig,
) -> tuple[TaggerModel, dict]:
    """Adam mini-batch training with mAP early stopping.

    ``split`` maps doc_id to "train"/"validation"/"test"; training stops
    once validation overall mAP has not improved for cfg.patience epochs
    (or at cfg.max_epochs) and the best-mAP parameters are returned.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.shape[0] != len(dataset.doc_ids):
        raise ValueError("embeddings row count does not match dataset doc_ids")
    train_idx = np.asarray([i for i, d in enumerate(dataset.doc_ids) if split.get(d) == "train"])
    val_idx = np.asarray([i for i, d in enumerate(dataset.doc_ids) if split.get(d) == "validation"])
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("split must provide non-empty train and validation sets")

    rng = np.random.default_rng(cfg.seed)
    model = TaggerModel.init(
        embeddings.shape[1], [cfg.hidden_size] * cfg.hidden_layers,
        [t.vocab for t in dataset.tasks], cfg.dropout, rng,
    )
    optimizer = Adam(model.params, cfg.lr)
    weights = [t.weight for t in dataset.tasks]

    history: dict = {"val_map": [], "train_loss": []}
    best_params: list[np.ndarray] = [p.copy() for p in model.params]
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(train_idx.size)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, train_idx.size, cfg.batch_size):
            batch = train_idx[order[start:start + cfg.batch_size]]
            x = embeddings[batch]
            labels = [t.labels[batch] for t in dataset.tasks]
            masks = [t.mask[batch] for t in dataset.tasks]
            loss, grads = _loss_and_grads(model, x, labels, masks, weights, dropout_rng=rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"tagger loss is not finite at epoch {epoch}")
            optimizer.step(grads)
            epoch_loss += loss
            n_batches += 1
        report = validation_report(model, embeddings, dataset, val_idx, epoch=epoch)
        val_map = report.overall if report.overall is not None else 0.0
        history["train_loss"].append(epoch_loss / max(1, n_batches))
        history["val_map"].append(val_map)
        # Strict improvement mirrors early_stop's earliest-argmax tie rule.
        if val_map > max(history["val_map"][:-1], default=-np.inf):
            best_params = [p.copy() for p in model.params]
        stop, _ = early_stop(history["val_map"], cfg.patience)
        logger.info("tagger epoch %d: loss %.4f, val mAP %.4f", epoch,
                    history["train_loss"][-1], val_map)
        if stop:
            break
    _, best_epoch = early_stop(history["val_map"], cfg.patience)
    history["best_epoch"] = best_epoch
    history["stopped_epoch"] = len(history["val_map"])
    for current, best in zip(model.params, best_params):
        current[...] = best
    return model, history


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _write_str(fh, text: str) -> None:
    raw = text.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<H", fh.read(2))
    return fh.read(n).decode("utf-8")


def save_tagger(model: TaggerModel, path) -> None:
    hidden_sizes = [w.shape[1] for w in model.stack.weights]
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", MODEL_VERSION))
        fh.write(struct.pack("<If", model.input_dim, model.dropout))
        fh.write(struct.pack("<I", len(hidden_sizes)))
        for size in hidden_sizes:
            fh.write(struct.pack("<I", size))
        fh.write(struct.pack("<I", len(model.vocabs)))
        for vocab in model.vocabs:
            _write_str(fh, vocab.name)
            fh.write(struct.pack("<I", len(vocab.tags)))
            for tag in vocab.tags:
                _write_str(fh, tag)
        for arr in model.params:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_tagger(path) -> TaggerModel:
    with open(path, "rb") as fh:
        if fh.read(4) != MODEL_MAGIC:
            raise ValueError(f"{path}: not a tagger model file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        input_dim, dropout = struct.unpack("<If", fh.read(8))
        (n_hidden,) = struct.unpack("<I", fh.read(4))
        hidden_sizes = [struct.unpack("<I", fh.read(4))[0] for _ in range(n_hidden)]
        (n_tasks,) = struct.unpack("<I", fh.read(4))
        vocabs = []
        for _ in range(n_tasks):
            name = _read_str(fh)
            (n_tags,) = struct.unpack("<I", fh.read(4))
            vocabs.append(TagVocabulary(name, [_read_str(fh) for _ in range(n_tags)]))

        def read_array(shape):
            n = int(np.prod(shape))
            data = fh.read(4 * n)
            if len(data) != 4 * n:
                raise ValueError(f"{path}: truncated parameter payload")
            return np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(shape)

        sizes = [input_dim, *hidden_sizes]
        stack = DenseStack(
            [read_array((a, b)) for a, b in zip(sizes, sizes[1:])],
            [read_array((b,)) for b in sizes[1:]],
        )
        top = hidden_sizes[-1] if hidden_sizes else input_dim
        heads = [Linear(read_array((top, len(v))), read_array((len(v),))) for v in vocabs]
    return TaggerModel(stack, heads, vocabs, input_dim, dropout)


def write_predictions(path, doc_ids: Sequence[str], scores: Sequence[np.ndarray],
                      vocabs: Sequence[TagVocabulary]) -> None:
    """CSV rows `doc_id,task,tag,score`; score text round-trips floats
    exactly (shortest repr)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("doc_id,task,tag,score\n")
        for task_scores, vocab in zip(scores, vocabs):
            for row, doc_id in enumerate(doc_ids):
                for col, tag in enumerate(vocab.tags):
                    fh.write(f"{doc_id},{vocab.name},{tag},{float(task_scores[row, col])!r}\n")


def read_predictions(path) -> dict[tuple[str, str, str], float]:
    out: dict[tuple[str, str, str], float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "doc_id,task,tag,score":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            doc_id, task, tag, score = line.rstrip("\n").split(",")
            out[(doc_id, task, tag)] = float(score)
    return out
