import json

import numpy as np
import pytest

from lyrictag.corpus import TokenizedDocument


def make_doc(doc_id, tokens, artist="artist0", album=None):
    return TokenizedDocument(doc_id, artist, album, list(tokens))


@pytest.fixture
def tiny_corpus():
    return [
        make_doc("d1", ["love", "love", "me", "do"]),
        make_doc("d2", ["love", "you", "do"]),
        make_doc("d3", ["she", "loves", "you"]),
    ]


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def corpus_record(doc_id, text, artist="artist0", album=None, language="en"):
    return {
        "doc_id": doc_id,
        "artist_id": artist,
        "album_id": album,
        "language": language,
        "text": text,
    }


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def central_difference(func, arr, eps=1e-6):
    """Finite-difference gradient of scalar func with respect to arr."""
    grad = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + eps
        up = func()
        arr[idx] = orig - eps
        down = func()
        arr[idx] = orig
        grad[idx] = (up - down) / (2 * eps)
        it.iternext()
    return grad
