"""Optional worker pool over independent runs.

Worker count comes from ``BASINLAB_THREADS`` (default 1 = serial). Results
do not depend on the worker count: every task derives its own RNG stream
from stable keys, and outputs are collected in task order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def worker_count() -> int:
    raw = os.environ.get("BASINLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"BASINLAB_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def run_tasks(fn, tasks: list) -> list:
    """Apply ``fn`` to each task, in order, serially or in a process pool."""
    n = worker_count()
    if n <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * n))))
