"""
sigpricer/services/rng.py – reproducible per-path random streams and ordered fan-out.

Every path m draws from its own Philox (counter-based) generator keyed by
(master seed, m, attempt), so a path is the same whether it is simulated alone,
in a batch, serially or on a worker thread. Results are always reduced in
path-index order.
"""
from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def path_generator(seed: int, index: int, attempt: int = 0) -> np.random.Generator:
    """Independent generator for path `index`; `attempt` > 0 gives a resample stream."""
    sequence = np.random.SeedSequence(seed, spawn_key=(int(index), int(attempt)))
    return np.random.Generator(np.random.Philox(sequence))


def brownian_increments(
    seed: int,
    indices: Sequence[int],
    steps: int,
    dt: float,
    attempts: Sequence[int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Independent increments (ΔW, ΔB), each of shape (len(indices), steps) and variance dt."""
    attempts = attempts if attempts is not None else [0] * len(indices)
    normals = np.empty((len(indices), 2, steps))
    for row, (index, attempt) in enumerate(zip(indices, attempts, strict=True)):
        normals[row] = path_generator(seed, index, attempt).standard_normal((2, steps))
    scale = np.sqrt(dt)
    return scale * normals[:, 0, :], scale * normals[:, 1, :]


def chunked(indices: Sequence[int], size: int) -> list[np.ndarray]:
    indices = np.asarray(indices, dtype=int)
    size = max(int(size), 1)
    return [indices[k : k + size] for k in range(0, indices.size, size)]


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Map in input order; with workers > 1 the calls run on a thread pool."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug("Fanning out work items", extra={"items": len(items), "workers": workers})
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
