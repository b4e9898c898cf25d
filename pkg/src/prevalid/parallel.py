"""Order-preserving map over replicate indices, optionally in worker processes.

Replicates draw their randomness from ``substream(seed, ..., index)``, so the
result list is identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, TypeVar

T = TypeVar("T")


def map_reps(fn: Callable[[int], T], count: int, workers: int = 1) -> list[T]:
    """``[fn(i) for i in range(count)]``, spread over ``workers`` processes.

    ``fn`` must be picklable (a module-level function or a ``functools.partial``
    of one) when ``workers > 1``.
    """
    if workers is None or workers <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    chunk = max(1, count // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(count), chunksize=chunk))
