"""Deterministic stream derivation for Monte Carlo components.

Every random draw in the package comes from a Philox generator keyed by
``(master_seed, tag, *indices)``.  Streams are addressable (O(1) access by
index, no sequential dependence between components), so a run is bit-for-bit
reproducible from its master seed regardless of evaluation order, and two
components never share a stream.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "stream_key"]


def _tag_word(tag: str) -> int:
    # crc32 rather than hash(): stable across processes and Python versions.
    return zlib.crc32(tag.encode("utf-8"))


def stream_key(master_seed: int, tag: str, *indices: int) -> tuple[int, ...]:
    """Entropy tuple identifying one logical stream."""
    if master_seed < 0:
        raise ValueError("master seed must be nonnegative")
    return (int(master_seed), _tag_word(tag), *(int(i) for i in indices))


def stream(master_seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Independent generator for component ``tag`` at position ``indices``."""
    ss = np.random.SeedSequence(stream_key(master_seed, tag, *indices))
    return np.random.Generator(np.random.Philox(ss))
