"""Reproducible random streams for replicate ensembles.

Every replicate gets its own counter-based generator derived from
``(seed, replicate)``, so results do not depend on execution order or on
how replicates are spread across workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def stream(seed: int, replicate: int = 0) -> np.random.Generator:
    """Return the Philox generator for replicate ``replicate`` of ``seed``."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(replicate)])
    return np.random.Generator(np.random.Philox(ss))


def worker_count(default: int = 1) -> int:
    """Worker count, overridable through ``PHYLOSIM_THREADS``."""
    raw = os.environ.get("PHYLOSIM_THREADS")
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


def run_replicates(
    fn: Callable[[int, np.random.Generator], T],
    replicates: int,
    seed: int,
    workers: int | None = None,
) -> list[T]:
    """Run ``fn(k, stream(seed, k))`` for every replicate, results in index order."""
    workers = worker_count() if workers is None else workers
    idx: Sequence[int] = range(replicates)
    if workers <= 1:
        return [fn(k, stream(seed, k)) for k in idx]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda k: fn(k, stream(seed, k)), idx))
