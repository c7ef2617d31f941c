"""Shared helpers: worker-count resolution and deterministic chunked maps."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "NBTC_THREADS"


def resolve_workers(requested: int | None = None) -> int:
    """Worker count from the argument or the NBTC_THREADS variable (0 = auto)."""
    if requested is None:
        raw = os.environ.get(THREADS_ENV, "0")
        try:
            requested = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if requested < 0:
        raise ValueError("worker count must be >= 0")
    if requested == 0:
        requested = min(4, os.cpu_count() or 1)
    return requested


def map_chunks(fn, n_items: int, chunk_size: int = 65536, workers: int | None = None):
    """Apply `fn(start, stop)` over fixed chunk boundaries and concatenate.

    Chunk boundaries depend only on `chunk_size`, never on the worker count,
    and results are reassembled in order, so output is identical for any
    level of parallelism (fn must be pure per chunk).
    """
    bounds = [(s, min(s + chunk_size, n_items)) for s in range(0, n_items, chunk_size)]
    if not bounds:
        return []
    workers = resolve_workers(workers)
    if workers <= 1 or len(bounds) == 1:
        parts = [fn(s, e) for s, e in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: fn(*b), bounds))
    return parts


def texel_center_grid(width: int, height: int) -> np.ndarray:
    """(H*W, 2) uv coordinates of every texel center, row-major."""
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    uu, vv = np.meshgrid(xs, ys)
    return np.stack([uu.ravel(), vv.ravel()], axis=1)
