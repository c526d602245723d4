"""Process pool with schedule-independent results.

Work is always cut into the same chunks regardless of the worker count, and
results are returned in task order, so outputs never depend on ``--threads``.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

_workers = 1


def set_workers(n: int) -> int:
    """Set the pool size; 0 means one worker per available core."""
    global _workers
    n = int(n)
    if n < 0:
        raise ValueError(f"worker count must be >= 0, got {n}")
    _workers = (os.cpu_count() or 1) if n == 0 else n
    return _workers


def get_workers() -> int:
    return _workers


def map_tasks(fn, tasks):
    tasks = list(tasks)
    if _workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(_workers, len(tasks))) as pool:
        return list(pool.map(fn, *zip(*tasks)))
