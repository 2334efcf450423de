"""Fixed-partition task execution.

Work is always split into the same blocks, whatever the worker count, so
results are bitwise identical for any number of threads.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

CELL_BLOCK = 8


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get("ESBGK_WORKERS")
        workers = int(env) if env else 1
    return max(1, int(workers))


def blocks(n: int, size: int = CELL_BLOCK) -> list[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def run_blocks(fn, parts, workers: int = 1):
    """Apply ``fn`` to every part, returning results in part order."""
    if workers <= 1 or len(parts) <= 1:
        return [fn(p) for p in parts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, parts))
