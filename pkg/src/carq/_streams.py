"""Deterministic random substreams.

A stream is identified by a tuple of non-negative integers (for example a
master seed, a hashed cell key and a replication index). The leading words
are hashed by :class:`numpy.random.SeedSequence` into a 128-bit Philox key;
the last word goes into the high 64 bits of the Philox counter. Streams with
different last words therefore never overlap (each would have to consume
2**192 blocks first), and a stream can be rebuilt from its path alone, so
results do not depend on evaluation order or on how work is split across
processes.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Union

import numpy as np

SeedLike = Union[int, Iterable[int]]


def seed_words(seed: SeedLike) -> tuple:
    if isinstance(seed, (int, np.integer)):
        words = (int(seed),)
    else:
        words = tuple(int(x) for x in seed)
    if not words or any(w < 0 for w in words):
        raise ValueError("seeds must be non-negative integers")
    return words


def philox_key(*words: int) -> np.ndarray:
    return np.random.SeedSequence(list(words)).generate_state(2, np.uint64)


def substream(seed: SeedLike, index: int) -> np.random.Generator:
    """Generator for stream ``index`` under ``seed``."""
    key = philox_key(*seed_words(seed))
    return np.random.Generator(
        np.random.Philox(key=key, counter=[0, 0, 0, int(index)]))


def substreams(seed: SeedLike, indices):
    key = philox_key(*seed_words(seed))
    for b in indices:
        yield np.random.Generator(
            np.random.Philox(key=key, counter=[0, 0, 0, int(b)]))


def stable_hash(text: str) -> int:
    """63-bit hash of a string, stable across processes and platforms."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
