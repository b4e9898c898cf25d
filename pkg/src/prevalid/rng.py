"""Named random substreams.

Every random draw in the package flows from one integer seed through
``substream(seed, *keys)``.  Keys are ints or strings; strings are hashed
with CRC32 so the mapping is stable across platforms and Python versions
(``hash()`` is salted per process and must not be used here).
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream", "stream_key"]


def stream_key(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"substream keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return an independent generator keyed by ``(seed, *keys)``.

    Two calls with the same arguments give identical streams; any change
    in a key gives a statistically independent stream.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(stream_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
