"""Deterministic stand-in for a pretrained text encoder.

Each case-folded whitespace token is hashed (BLAKE2b, 64-bit digest) into the seed of a
Gaussian embedding, so equal words always get equal vectors and distinct
words collide only when their 64-bit digests do.  Any callable with the
signature of :func:`encode_language` can replace it.
"""

from __future__ import annotations

import hashlib

import numpy as np

N_LANG_TOKENS = 77
PAD = "<pad>"


def _word_vector(word: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}\x00{word}".encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim) / np.sqrt(dim)


def encode_language(text: str, dim: int, n_tokens: int = N_LANG_TOKENS, seed: int = 0) -> np.ndarray:
    """``(n_tokens, dim)`` embedding of ``text``: padded or truncated word vectors."""
    words = text.lower().split()[:n_tokens]
    words += [PAD] * (n_tokens - len(words))
    cache: dict[str, np.ndarray] = {}
    rows = []
    for w in words:
        if w not in cache:
            cache[w] = _word_vector(w, dim, seed)
        rows.append(cache[w])
    return np.stack(rows)
