"""Deterministic counter-based random streams and fixed-order reductions.

Replicate loops are split into fixed-size blocks.  Block ``b`` of a job
draws from ``Philox`` keyed by ``(seed, *key, b)``, so the numbers a
replicate sees depend only on the seed and its block index, never on how
blocks are distributed over workers.  Partial results are combined with a
pairwise tree in block order, which makes every estimate bitwise
reproducible for any worker count.
"""

from __future__ import annotations

import numpy as np

# Fixed block size; part of the reproducibility contract.
BLOCK_SIZE = 1 << 14


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the Philox stream addressed by (seed, key...)."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def iter_blocks(total: int, block_size: int = BLOCK_SIZE):
    """Yield (block_index, count) pairs covering ``total`` replicates."""
    b = 0
    done = 0
    while done < total:
        count = min(block_size, total - done)
        yield b, count
        done += count
        b += 1


def pairwise_sum(values):
    """Sum a list of floats (or arrays) with a fixed pairwise tree."""
    items = list(values)
    if not items:
        return 0.0
    while len(items) > 1:
        merged = []
        for i in range(0, len(items) - 1, 2):
            merged.append(items[i] + items[i + 1])
        if len(items) % 2:
            merged.append(items[-1])
        items = merged
    return items[0]
