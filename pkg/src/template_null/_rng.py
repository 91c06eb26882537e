"""Seed derivation and an order-preserving parallel map.

Every random stream is keyed by ``(seed, *key)`` through ``SeedSequence``
spawn keys, so results never depend on how work is split across workers.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "TEMPLATE_NULL_THREADS"

# Spawn-key tags; fixed forever so stored seeds stay meaningful.
CHAIN = 1
INIT = 2
TEMPLATE = 3
TRAIN = 10
TEST_SUBJECT = 11
DIST_A = 12
FIT = 13
JOINT = 14
POWER = 15


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit child seed, stable for a given ``(seed, key)``."""
    state = np.random.SeedSequence(int(seed), spawn_key=tuple(key)).generate_state(1, np.uint64)
    return int(state[0])


def worker_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            n = 0
        if n >= 1:
            return n
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int | None = None) -> list[R]:
    """``[fn(x) for x in items]``, fanned out over processes when workers > 1."""
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def chunks(n: int, size: int) -> Iterable[range]:
    for start in range(0, n, size):
        yield range(start, min(n, start + size))
