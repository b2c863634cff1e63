"""Named random streams derived from one root seed.

``substream(42, "train", "cnn")`` always yields the same generator, and
adding a new name elsewhere never shifts an existing stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(*names) -> tuple[int, ...]:
    return tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)


def subseed(seed: int, *names) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=stream_key(*names))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def substream(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=stream_key(*names)))
