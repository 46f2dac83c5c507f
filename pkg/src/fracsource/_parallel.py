"""Thread-cap helper honoring the FRACSOURCE_THREADS environment variable."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def max_threads(default: int = 2) -> int:
    raw = os.environ.get("FRACSOURCE_THREADS", "")
    try:
        cap = int(raw)
    except ValueError:
        cap = 0
    if cap <= 0:
        cap = default
    return max(1, min(cap, os.cpu_count() or 1))


def map_maybe_parallel(fn, items):
    """Run fn over items with at most max_threads() workers; serial when 1."""
    items = list(items)
    workers = min(max_threads(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
