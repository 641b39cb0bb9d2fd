"""Stable 64-bit hashing shared by the tokenizer, shingles, and seed derivation.

Everything here must produce identical values across processes and platforms,
so Python's salted ``hash()`` is never used.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Iterable

MASK64 = (1 << 64) - 1


def hash_bytes(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def hash_text(text: str) -> int:
    return hash_bytes(text.encode("utf-8"))


def hash_ints(values: Iterable[int]) -> int:
    vals = list(values)
    return hash_bytes(struct.pack("<%dq" % len(vals), *vals))


def derive_seed(*parts: int) -> int:
    """Deterministic child seed from a run seed plus indices (63-bit)."""
    return hash_ints(parts) >> 1
