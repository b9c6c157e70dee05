"""Signed feature hashing of character trigrams into a fixed-size unit vector."""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np

__all__ = ["EMBED_DIM", "default_embed", "cosine"]

EMBED_DIM = 256


@lru_cache(maxsize=65536)
def _embed(text: str, dim: int) -> np.ndarray:
    vec = np.zeros(dim, dtype=np.float64)
    if text:
        padded = f" {text.lower()} "
        for i in range(len(padded) - 2):
            h = int.from_bytes(hashlib.blake2b(padded[i : i + 3].encode("utf-8"), digest_size=8).digest(), "little")
            vec[h % dim] += 1.0 if (h >> 63) & 1 else -1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
    vec.setflags(write=False)
    return vec


def default_embed(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Unit-norm hashed trigram vector; the empty string maps to the zero vector."""
    return _embed(text, dim)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))
