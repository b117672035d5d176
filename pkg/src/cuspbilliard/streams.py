"""Counter-based random streams and a deterministic chunked executor.

Orbit ``i`` of an experiment always lives in chunk ``i // CHUNK`` and draws its
uniforms from a Philox stream keyed by (seed, tag) with the chunk index in the
high counter word. Results therefore do not depend on how chunks are
scheduled across workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

CHUNK = 1 << 14

# stream tags; resampling attempt k of orbit starts uses START + k
START = 0
STABLE = 1 << 20
AUX = 1 << 21


def _generator(seed: int, tag: int, chunk: int) -> np.random.Generator:
    key = (int(seed) % (1 << 64)) + (int(tag) << 64)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, int(chunk)]))


def chunk_uniforms(seed: int, tag: int, chunk: int, k: int, n: int = CHUNK) -> np.ndarray:
    """(n, k) uniforms in the open interval (0, 1) for the orbits of one chunk."""
    raw = _generator(seed, tag, chunk).bit_generator.random_raw(n * k)
    return (((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53).reshape(n, k)


def uniforms(seed: int, tag: int, ids: np.ndarray, k: int) -> np.ndarray:
    """Uniform rows for arbitrary orbit ids (row i depends only on ids[i])."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.empty((ids.size, k))
    chunks = ids // CHUNK
    for c in np.unique(chunks):
        sel = chunks == c
        block = chunk_uniforms(seed, tag, int(c), k)
        out[sel] = block[ids[sel] - c * CHUNK]
    return out


def generator(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    """A numpy Generator for auxiliary draws (stable samples, bootstrap)."""
    return _generator(seed, tag, index)


def default_workers() -> int:
    env = os.environ.get("BILLIARD_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def chunk_ranges(m: int, size: int = CHUNK) -> list[tuple[int, int]]:
    return [(a, min(a + size, m)) for a in range(0, m, size)]


def run_chunks(fn: Callable[[int, int], object], m: int, workers: int | None = None,
               size: int = CHUNK) -> list:
    """Apply ``fn(lo, hi)`` to fixed id ranges; results come back in id order."""
    ranges = chunk_ranges(m, size)
    workers = workers or default_workers()
    if workers <= 1 or len(ranges) <= 1:
        return [fn(a, b) for a, b in ranges]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda ab: fn(*ab), ranges))


def concat(parts: Sequence[dict]) -> dict:
    """Merge per-chunk dicts of arrays (concatenated) and counters (summed)."""
    out = {}
    for key in parts[0]:
        vals = [p[key] for p in parts]
        if isinstance(vals[0], np.ndarray):
            out[key] = np.concatenate(vals)
        else:
            out[key] = sum(vals)
    return out
