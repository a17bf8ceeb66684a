"""Counter-based random streams.

Every seeded operation in the toolkit derives its own independent stream
from a single 64-bit user seed plus a tuple of string/int tags.  The tags
are hashed into a Philox key, so streams are replayable, independent of
call order, and stable across platforms and numpy versions.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(seed: int, tags: tuple) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest(), "little")


def substream(seed: int, *tags) -> np.random.Generator:
    """Return a Generator unique to (seed, *tags)."""
    return np.random.Generator(np.random.Philox(key=_key(seed, tags)))


def derive_seed(seed: int, *tags) -> int:
    """Collapse (seed, *tags) into a new 63-bit seed for nested seeding."""
    return _key(seed, tags) & 0x7FFF_FFFF_FFFF_FFFF
