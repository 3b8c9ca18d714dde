"""Splittable deterministic random streams.

All randomness in the package flows from one integer seed through
:func:`stream`, which derives statistically independent Philox
(counter-based) generators from the seed and a path of labels. Equal
(seed, path) pairs give identical streams regardless of creation order,
so serial and parallel runs consume identical numbers.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "derive_seed"]


def _digest(seed: int, path: tuple) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode())
    for part in path:
        if not isinstance(part, (int, str, np.integer)):
            raise TypeError(f"stream path parts must be int or str, got {type(part).__name__}")
        h.update(b"\x1f")
        h.update(f"{type(part).__name__}:{part}".encode())
    return h.digest()


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Independent generator for (seed, *path)."""
    key = np.frombuffer(_digest(seed, path), dtype="<u8")
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, *path: int | str) -> int:
    """A 63-bit integer seed derived from (seed, *path), stable across runs."""
    return int.from_bytes(_digest(seed, path)[:8], "little") >> 1
