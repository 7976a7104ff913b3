"""Named, splittable random streams.

Every draw in a simulation is traceable to ``(master_seed, stream_name,
trial_index)``. Streams are derived with :class:`numpy.random.SeedSequence`
spawn keys, so adding trials or new stream names never perturbs existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "stream_key"]


def stream_key(name: str) -> int:
    """Stable 32-bit key for a stream name (independent of ``PYTHONHASHSEED``)."""
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, trial: int = 0, *extra: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, name, trial, *extra)``."""
    seq = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFF_FFFF_FFFF_FFFF,
        spawn_key=(stream_key(name), int(trial), *map(int, extra)),
    )
    return np.random.Generator(np.random.PCG64(seq))
