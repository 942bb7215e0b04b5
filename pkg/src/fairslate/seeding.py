"""Deterministic RNG substreams.

All randomness in the package flows from a single integer seed.  Components
derive their own generator via a stable label hash, so adding a consumer
never perturbs the draws of another.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream"]


def substream(seed: int, *labels: object) -> np.random.Generator:
    """Generator for the substream named by ``labels`` under ``seed``.

    The label hash is platform-independent (blake2b over the repr of each
    label), so the same (seed, labels) pair yields the same stream anywhere.
    """
    h = hashlib.blake2b(digest_size=8)
    for lab in labels:
        h.update(repr(lab).encode("utf-8"))
        h.update(b"\x1f")
    tag = int.from_bytes(h.digest(), "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, tag]))
