"""Seed plumbing for reproducible parallel Monte Carlo.

Paths are grouped into fixed-size chunks; chunk ``i`` always draws from the
``i``-th child of the master ``SeedSequence``.  Results are concatenated in
chunk order, so they do not depend on the number of worker threads.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar, Union

import numpy as np

RngLike = Union[int, np.random.SeedSequence, np.random.Generator, None]
T = TypeVar("T")

CHUNK_SIZE = 32768
_threads = int(os.environ.get("ARCHETYPAL_THREADS", "1"))


def set_threads(n: int) -> None:
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    return _threads


def as_seed_sequence(rng: RngLike) -> np.random.SeedSequence:
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        # advances the generator, so repeated calls give fresh streams
        return np.random.SeedSequence(rng.integers(0, 2**63, size=4).tolist())
    return np.random.SeedSequence(rng)


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(as_seed_sequence(rng))


def chunked_map(
    fn: Callable[[int, np.random.Generator], T],
    n_items: int,
    rng: RngLike,
    threads: int | None = None,
    chunk: int = CHUNK_SIZE,
) -> list[T]:
    """Apply ``fn(size, generator)`` to consecutive chunks of ``n_items``."""
    if n_items <= 0:
        return []
    sizes = [chunk] * (n_items // chunk)
    if n_items % chunk:
        sizes.append(n_items % chunk)
    children = as_seed_sequence(rng).spawn(len(sizes))
    gens = [np.random.default_rng(s) for s in children]
    workers = threads or _threads
    if workers <= 1 or len(sizes) == 1:
        return [fn(n, g) for n, g in zip(sizes, gens)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, sizes, gens))
