"""Small shared runtime helpers."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    """Worker cap from UVSPLAT_THREADS, defaulting to hardware parallelism."""
    env = os.environ.get("UVSPLAT_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Map fn over items, preserving order; threads capped by UVSPLAT_THREADS.

    Each item must be independent; results are collected in input order so
    downstream reductions stay deterministic.
    """
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
