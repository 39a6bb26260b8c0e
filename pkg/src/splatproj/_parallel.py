"""Contiguous band partitioning over a thread pool.

Kernels handed to :func:`run_bands` are numba functions compiled with
``nogil=True`` and write disjoint output slices, so results never depend on
the number of bands.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np


def bands(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(int(parts), max(n, 1)))
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def run_bands(fn: Callable[[int, int], object], n: int, threads: int = 1) -> list:
    """Call ``fn(start, stop)`` on ``threads`` contiguous slices of ``range(n)``."""
    parts = bands(n, threads)
    if len(parts) <= 1:
        return [fn(a, b) for a, b in parts]
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        futures = [pool.submit(fn, a, b) for a, b in parts]
        return [f.result() for f in futures]
