"""Deterministic seeding helpers.

All randomness in the package flows through named Philox streams so that
results depend only on (seed, stream name) and never on execution order,
thread count, or platform hash salting.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stable_seed", "stream", "block_standard_normal"]

# Fixed block length for partitioned draws; workers may own any subset of
# blocks without changing the assembled matrix.
DRAW_BLOCK = 256


def stable_seed(seed: int, *tokens) -> int:
    """Derive a child seed from a root seed and hashable name tokens.

    Uses blake2b, not the builtin hash(), so the value is stable across
    processes and Python versions.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for tok in tokens:
        h.update(b"\x1f")
        h.update(str(tok).encode())
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *tokens) -> np.random.Generator:
    """A Philox generator keyed by ``stable_seed(seed, *tokens)``."""
    return np.random.Generator(np.random.Philox(key=stable_seed(seed, *tokens)))


def block_standard_normal(seed: int, n_rows: int, n_cols: int, *tokens) -> np.ndarray:
    """Standard normal matrix assembled from fixed-size seeded blocks.

    Row block ``b`` is generated from its own stream keyed by
    ``(seed, *tokens, b)``, so any partition of blocks across workers
    reproduces the identical matrix.
    """
    out = np.empty((n_rows, n_cols))
    for b in range(0, n_rows, DRAW_BLOCK):
        hi = min(b + DRAW_BLOCK, n_rows)
        g = stream(seed, *tokens, b // DRAW_BLOCK)
        out[b:hi] = g.standard_normal((hi - b, n_cols))
    return out
