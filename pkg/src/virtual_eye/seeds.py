"""Splitting one root seed into independent per-purpose streams."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *labels) -> int:
    """Stable 63-bit seed for ``(root, labels...)``; unrelated labels give unrelated streams."""
    text = "\x1f".join([str(int(root))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little") >> 1


def rng_for(root: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *labels))
