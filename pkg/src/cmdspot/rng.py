"""Deterministic, splittable random streams.

Every stochastic component draws from a stream derived from a global seed
plus a tuple of context keys (utterance id, epoch, purpose tag...).  Streams
for distinct keys are statistically independent, and data-parallel workers
can reproduce any utterance's randomness without sharing a sequential
generator.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Return a generator keyed by ``(seed, *keys)``.

    Keys are stringified and hashed, so any mix of ints and strings works.
    The derivation is stable across platforms and Python processes (no
    reliance on ``hash()``).
    """
    material = "\x1f".join(str(k) for k in keys).encode("utf-8")
    digest = hashlib.blake2b(material, digest_size=16).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    ss = np.random.SeedSequence(entropy=[int(seed) & 0xFFFFFFFFFFFFFFFF, *words])
    return np.random.default_rng(ss)
