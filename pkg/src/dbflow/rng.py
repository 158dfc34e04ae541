"""Seed-stream convention shared by every experiment.

A stream is keyed by ``(experiment, seed, purpose)``.  The string parts are
hashed with CRC32 so the key is stable across Python processes (unlike
``hash()``), and the triple feeds a ``SeedSequence``.  Two cells never share
a stream, so a seed gives the same numbers whether it runs alone or inside a
parallel sweep.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def stream(experiment: str, seed: int, purpose: str) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), _tag(experiment), _tag(purpose)]))
