"""Named, counter-based random substreams derived from one root seed.

Every consumer asks for ``substream(root, "name", *counters)``; streams for
different names or counters are statistically independent, and the same key
always yields the same stream, regardless of call order.
"""
from __future__ import annotations

import os
import zlib

import numpy as np

ENV_SEED = "HYPERCONDENSE_SEED"
DEFAULT_SEED = 0


def root_seed(explicit: int | None = None) -> int:
    if explicit is not None:
        return int(explicit)
    env = os.environ.get(ENV_SEED)
    if env is not None and env.strip():
        return int(env)
    return DEFAULT_SEED


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *counters: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFF, int(seed) >> 32 & 0xFFFFFFFF, _key(name)]
    entropy.extend(int(c) for c in counters)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
