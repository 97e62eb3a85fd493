"""Replica fan-out over processes. Results are merged by summation, so they never depend on scheduling."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

WORKERS_ENV = "BROWNPERC_WORKERS"


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def sum_over_replicas(block_fn: Callable, payload, start: int, stop: int):
    """Sum block_fn(payload, lo, hi) over replica blocks covering [start, stop)."""
    n = stop - start
    if n <= 0:
        return block_fn(payload, start, start)
    workers = min(worker_count(), n)
    if workers <= 1:
        return block_fn(payload, start, stop)
    n_blocks = min(n, workers * 4)
    edges = np.linspace(start, stop, n_blocks + 1).round().astype(int)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(block_fn, payload, int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
        parts = [f.result() for f in futures]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total
