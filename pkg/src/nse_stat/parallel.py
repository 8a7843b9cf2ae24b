"""Deterministic fan-out over independent work items.

Reductions elsewhere always consume results in input order, so runs are
bit-reproducible regardless of the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, threads: int = 1) -> list:
    """Apply fn to each item, preserving input order in the result list."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
