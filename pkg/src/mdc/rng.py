"""Named random streams derived from one 64-bit seed.

A stream is keyed by ``(seed, label, index)``: the label is hashed with CRC32
and the triple seeds a counter-based Philox generator. Streams with different
keys are independent, and the same key always gives the same stream.
"""

from __future__ import annotations

import os
import zlib

import numpy as np

SEED_ENV = "MDC_SEED"


def stream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    ss = np.random.SeedSequence([int(seed), zlib.crc32(label.encode("utf-8")), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def resolve_seed(flag: int | None, default: int = 0) -> int:
    """``--seed`` wins; otherwise ``MDC_SEED``; otherwise ``default``."""
    if flag is not None:
        return int(flag)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        return int(env)
    return default
