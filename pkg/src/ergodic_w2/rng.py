"""Counter-based Gaussian streams keyed by (seed, replication, block).

Every block of ``BLOCK`` consecutive time steps of a replication gets its own
Philox generator whose key is derived from ``(seed, replication, block)``.
Increments for step ``n`` of replication ``r`` therefore never depend on how
many other replications ran, in which order, or on which worker.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

BLOCK = 4096


# stream tags keep independent uses of one seed apart
PATH, REFERENCE, WARM, PARTNER, AUX = range(5)


def path_key(seed: int, replication: int, stream: int = PATH) -> tuple:
    return (int(seed), int(stream), int(replication))


@lru_cache(maxsize=65536)
def _philox_key(key: tuple, block: int) -> tuple[int, int]:
    state = np.random.SeedSequence([*key, block]).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def block_normals(key: tuple, block: int, q: int) -> np.ndarray:
    """Standard normals of shape ``(BLOCK, q)`` for one block of one stream key."""
    if min(key) < 0 or block < 0:
        raise ValueError("key entries and block index must be non-negative")
    state = np.array(_philox_key(tuple(int(k) for k in key), int(block)), dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=state))
    return gen.standard_normal((BLOCK, q))


def normals(keys, start: int, n: int, q: int) -> np.ndarray:
    """Standard normals for steps ``start .. start+n-1`` of each stream key.

    Returns an array of shape ``(len(keys), n, q)``.
    """
    out = np.empty((len(keys), n, q))
    if n == 0:
        return out
    first, last = start // BLOCK, (start + n - 1) // BLOCK
    for r, key in enumerate(keys):
        pos = 0
        for b in range(first, last + 1):
            block = block_normals(key, b, q)
            lo = max(start - b * BLOCK, 0)
            hi = min(start + n - b * BLOCK, BLOCK)
            out[r, pos:pos + hi - lo] = block[lo:hi]
            pos += hi - lo
    return out


def brownian_increments(keys, start: int, n: int, q: int, dt: float) -> np.ndarray:
    """Brownian increments over steps of length ``dt``; shape ``(R, n, q)``."""
    return np.sqrt(dt) * normals(keys, start, n, q)


def coarsen(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum groups of ``factor`` consecutive increments along the step axis.

    The result drives a scheme with step ``factor*dt`` along the same Brownian
    path, which is how dt-halving studies stay pathwise comparable.
    """
    increments = np.asarray(increments)
    n = increments.shape[-2]
    if n % factor:
        raise ValueError(f"{n} steps are not divisible by factor {factor}")
    shape = increments.shape[:-2] + (n // factor, factor, increments.shape[-1])
    return increments.reshape(shape).sum(axis=-2)


def generator(seed: int, *stream) -> np.random.Generator:
    """Independent generator for auxiliary draws (samplers, bootstraps)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))
