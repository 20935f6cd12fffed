"""Named, seed-derived random substreams.

All randomness in a simulation flows from one 64-bit scenario seed.  Each
consumer (device i, its PRR draws, its IRR draws, its sensor trace, the
verifier's keys, ...) gets its own substream addressed by a label path, so
any component can be replayed in isolation and adding draws to one stream
never perturbs another.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np


def derive_bytes(seed: int, *labels: str, n: int = 32) -> bytes:
    """Deterministic n-byte material for (seed, label path); n <= 32."""
    hasher = hashlib.sha256()
    hasher.update(struct.pack("<Q", seed & (2**64 - 1)))
    for label in labels:
        hasher.update(b"/")
        hasher.update(label.encode("utf-8"))
    return hasher.digest()[:n]


def substream(seed: int, *labels: str) -> np.random.Generator:
    """Independent generator for (seed, label path)."""
    material = derive_bytes(seed, *labels, n=32)
    return np.random.default_rng(int.from_bytes(material[:16], "little"))
