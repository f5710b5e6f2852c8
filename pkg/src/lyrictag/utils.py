"""Shared helpers: stable seeding and tiny numeric utilities."""

import hashlib

import numpy as np


class TrainingDivergedError(RuntimeError):
    """Raised when a training loop produces non-finite parameters or loss."""


def stable_token_seed(seed: int, token: str) -> int:
    """Map (seed, token) to a 64-bit seed, stable across processes.

    Python's builtin hash() is salted per process, so it cannot back any
    determinism contract; blake2b is used instead.
    """
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, salt=str(seed).encode("utf-8")[:16])
    return int.from_bytes(h.digest(), "little")


def rng_for_token(seed: int, token: str) -> np.random.Generator:
    return np.random.default_rng(stable_token_seed(seed, token))


def l2_normalize(vec: np.ndarray) -> np.ndarray:
    """Return vec / ||vec||, or vec unchanged when the norm is zero."""
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        return vec
    return vec / norm
