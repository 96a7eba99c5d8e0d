"""Named random sub-streams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, *names: str) -> np.random.Generator:
    """Independent generator for ``(seed, *names)``.

    ``stream(7, "data", "train")`` and ``stream(7, "init")`` never share
    state, so e.g. changing the model does not change the generated data.
    """
    key = tuple(zlib.crc32(n.encode("utf-8")) for n in names)
    ss = np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.default_rng(ss)
