"""Corpus ingestion: stream lyric documents, tokenize, filter, truncate.

Corpus files are JSON-lines, one document object per line with keys
``doc_id``, ``artist_id``, ``album_id`` (string or null), ``language``
(ISO 639-1) and ``text``. Unknown keys are ignored. Tokenization
lowercases, folds accents to ASCII, splits on anything that is not a
letter and keeps tokens of 2 to 15 characters. Token sequences are
truncated once at ingestion, for every downstream consumer.
"""

import json
import logging
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

logger = logging.getLogger(__name__)

MIN_TOKEN_LEN = 2
MAX_TOKEN_LEN = 15
MAX_DOC_TOKENS = 512

_LETTERS = re.compile(r"[a-z]+")

_REQUIRED_KEYS = ("doc_id", "artist_id", "language", "text")


@dataclass
class RawDocument:
    doc_id: str
    artist_id: str
    album_id: Optional[str]
    language: str
    text: str


@dataclass
class TokenizedDocument:
    doc_id: str
    artist_id: str
    album_id: Optional[str]
    tokens: list[str]

    @property
    def is_empty(self) -> bool:
        """True when tokenization left nothing; such documents are kept so
        tag datasets stay aligned, and embedders decide their handling."""
        return not self.tokens


@dataclass
class LineError:
    """A recoverable per-line parse failure, with its 1-based line number."""
    line_no: int
    message: str


@dataclass
class TokenizerConfig:
    """Preprocessing knobs; defaults match the documented constants."""
    min_token_len: int = MIN_TOKEN_LEN
    max_token_len: int = MAX_TOKEN_LEN
    max_doc_tokens: int = MAX_DOC_TOKENS
    language: str = "en"


def load_corpus(path, errors: Optional[list[LineError]] = None) -> Iterator[RawDocument]:
    """Stream RawDocuments from a JSON-lines file, in file order.

    Malformed lines are reported (logged, and appended to ``errors`` when a
    list is supplied) and skipped; well-formed lines are still yielded. An
    unreadable file raises OSError.
    """
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                _report_line(errors, line_no, f"invalid JSON: {exc.msg}")
                continue
            if not isinstance(obj, dict):
                _report_line(errors, line_no, "line is not a JSON object")
                continue
            missing = [k for k in _REQUIRED_KEYS if k not in obj]
            if missing:
                _report_line(errors, line_no, f"missing keys: {', '.join(missing)}")
                continue
            try:
                doc = RawDocument(
                    doc_id=str(obj["doc_id"]),
                    artist_id=str(obj["artist_id"]),
                    album_id=None if obj.get("album_id") is None else str(obj["album_id"]),
                    language=str(obj["language"]),
                    text=str(obj["text"]),
                )
            except (TypeError, ValueError) as exc:
                _report_line(errors, line_no, f"bad field value: {exc}")
                continue
            if not doc.doc_id:
                _report_line(errors, line_no, "empty doc_id")
                continue
            yield doc


def _report_line(errors: Optional[list[LineError]], line_no: int, message: str) -> None:
    logger.warning("corpus line %d: %s", line_no, message)
    if errors is not None:
        errors.append(LineError(line_no, message))


def fold_accents(text: str) -> str:
    """Strip combining marks after NFKD decomposition (e.g. 'Déjà' -> 'Deja')."""
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch))


def tokenize(text: str, min_len: int = MIN_TOKEN_LEN, max_len: int = MAX_TOKEN_LEN) -> list[str]:
    """Lowercase, fold accents, split on non-letters, keep tokens of
    min_len..max_len ASCII letters, order preserved."""
    if not text:
        return []
    lowered = fold_accents(text).lower()
    return [t for t in _LETTERS.findall(lowered) if min_len <= len(t) <= max_len]


def truncate_tokens(tokens: list[str], max_len: int = MAX_DOC_TOKENS) -> list[str]:
    """First min(len, max_len) tokens, order preserved."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    return tokens[:max_len]


@dataclass
class IngestCounters:
    """Bookkeeping from a full ingestion pass."""
    read: int = 0
    skipped_language: int = 0
    empty_after_tokenize: int = 0
    line_errors: list[LineError] = field(default_factory=list)


def tokenize_document(doc: RawDocument, config: TokenizerConfig = TokenizerConfig()) -> TokenizedDocument:
    tokens = tokenize(doc.text, config.min_token_len, config.max_token_len)
    return TokenizedDocument(
        doc_id=doc.doc_id,
        artist_id=doc.artist_id,
        album_id=doc.album_id,
        tokens=truncate_tokens(tokens, config.max_doc_tokens),
    )


def iter_tokenized(
    path,
    config: TokenizerConfig = TokenizerConfig(),
    counters: Optional[IngestCounters] = None,
) -> Iterator[TokenizedDocument]:
    """Full ingestion pipeline: load, language-filter, tokenize, truncate.

    Documents whose language differs from config.language are skipped and
    counted. Documents that tokenize to nothing are retained (flagged via
    ``is_empty``) so downstream label matrices stay aligned.
    """
    counters = counters if counters is not None else IngestCounters()
    for raw in load_corpus(path, errors=counters.line_errors):
        counters.read += 1
        if config.language and raw.language != config.language:
            counters.skipped_language += 1
            continue
        doc = tokenize_document(raw, config)
        if doc.is_empty:
            counters.empty_after_tokenize += 1
        yield doc


def read_tokenized_corpus(
    path,
    config: TokenizerConfig = TokenizerConfig(),
    counters: Optional[IngestCounters] = None,
) -> list[TokenizedDocument]:
    """Materialize iter_tokenized; trainers need multiple epochs over it."""
    return list(iter_tokenized(path, config, counters))


@dataclass
class CorpusStats:
    n_docs: int
    n_tokens: int
    max_seq_len: int
    n_empty: int
    token_counts: Counter


def corpus_stats(docs: Iterable[TokenizedDocument]) -> CorpusStats:
    """Single-pass corpus statistics (token count, longest document, ...)."""
    n_docs = n_tokens = max_seq = n_empty = 0
    counts: Counter = Counter()
    for doc in docs:
        n_docs += 1
        n_tokens += len(doc.tokens)
        max_seq = max(max_seq, len(doc.tokens))
        if doc.is_empty:
            n_empty += 1
        counts.update(doc.tokens)
    return CorpusStats(n_docs, n_tokens, max_seq, n_empty, counts)
