"""Worker-pool helpers. SG_THREADS caps parallelism (default: all cores)."""

import os
from concurrent.futures import ThreadPoolExecutor

_pool = None
_pool_size = None


def worker_count():
    env = os.environ.get("SG_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Map fn over items, preserving order. Results are identical to a plain
    loop regardless of worker count; callers must reduce in list order."""
    global _pool, _pool_size
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    if _pool is None or _pool_size != n:
        if _pool is not None:
            _pool.shutdown(wait=True)
        _pool = ThreadPoolExecutor(max_workers=n)
        _pool_size = n
    return list(_pool.map(fn, items))
