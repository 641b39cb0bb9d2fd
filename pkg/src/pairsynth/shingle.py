"""Fixed-width token shingling, exact Jaccard, and MinHash estimation.

Shared by pair near-duplicate filtering and the duplicate-rate metric.
All operations are pure; sets and signatures are immutable.
"""

from __future__ import annotations

import struct
import unicodedata
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import HashTokenizer
from .hashing import hash_ints

DEFAULT_WIDTH = 13
DEFAULT_MINHASH_K = 128

_EMPTY_SENTINEL = np.uint64(0xFFFFFFFFFFFFFFFF)


class WidthMismatchError(ValueError):
    pass


class SignatureMismatchError(ValueError):
    pass


def normalize_surface(text: str) -> str:
    """Lowercase and strip punctuation and digits ahead of shingling."""
    out = []
    for ch in text:
        cat = unicodedata.category(ch)
        if cat.startswith("P") or cat == "Nd":
            continue
        out.append(ch.lower())
    return "".join(out)


def normalize_for_shingling(text: str, tokenizer: HashTokenizer | None = None) -> list[int]:
    tokenizer = tokenizer or HashTokenizer()
    return tokenizer.tokenize(normalize_surface(text))


@dataclass(frozen=True)
class ShingleSet:
    doc_id: int
    width: int
    hashes: frozenset[int]

    def __len__(self) -> int:
        return len(self.hashes)


def shingles(tokens: Sequence[int], width: int = DEFAULT_WIDTH, doc_id: int = 0) -> ShingleSet:
    """Hash every contiguous ``width``-token window (stride 1) into a set.

    Documents shorter than ``width`` tokens produce the empty set.
    """
    if width < 1:
        raise ValueError("shingle width must be >= 1")
    toks = list(tokens)
    hashes = frozenset(
        hash_ints(toks[i : i + width]) for i in range(len(toks) - width + 1)
    )
    return ShingleSet(doc_id=doc_id, width=width, hashes=hashes)


def jaccard(a: ShingleSet, b: ShingleSet) -> float:
    """|a ∩ b| / |a ∪ b|; two empty sets score 0 (never duplicates)."""
    if a.width != b.width:
        raise WidthMismatchError(f"widths differ: {a.width} vs {b.width}")
    if not a.hashes and not b.hashes:
        return 0.0
    inter = len(a.hashes & b.hashes)
    union = len(a.hashes | b.hashes)
    return inter / union


@dataclass(frozen=True)
class MinHashSignature:
    doc_id: int
    seed: int
    n_items: int
    minima: np.ndarray  # (k,) uint64

    @property
    def k(self) -> int:
        return int(self.minima.shape[0])


def _hash_params(k: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    # odd multipliers for multiply-shift hashing on wrapping uint64
    a = rng.integers(0, 1 << 63, size=k, dtype=np.uint64) * np.uint64(2) + np.uint64(1)
    b = rng.integers(0, 1 << 63, size=k, dtype=np.uint64)
    return a, b


def minhash(sset: ShingleSet, k: int = DEFAULT_MINHASH_K, seed: int = 0) -> MinHashSignature:
    """k-permutation MinHash signature via multiply-shift hashing on uint64."""
    a, b = _hash_params(k, seed)
    if not sset.hashes:
        minima = np.full(k, _EMPTY_SENTINEL, dtype=np.uint64)
    else:
        xs = np.fromiter(sset.hashes, dtype=np.uint64, count=len(sset.hashes))
        vals = a[:, None] * xs[None, :] + b[:, None]  # wraps mod 2^64 by design
        minima = vals.min(axis=1)
    return MinHashSignature(doc_id=sset.doc_id, seed=seed, n_items=len(sset.hashes), minima=minima)


def estimate_jaccard(s1: MinHashSignature, s2: MinHashSignature) -> float:
    """Unbiased Jaccard estimate: fraction of matching minima."""
    if s1.k != s2.k or s1.seed != s2.seed:
        raise SignatureMismatchError("signatures use different k or seed")
    if s1.n_items == 0 and s2.n_items == 0:
        return 0.0
    return float(np.mean(s1.minima == s2.minima))


def write_signatures(path, signatures: Sequence[MinHashSignature]) -> None:
    """Dump format: per record, LE u64 doc_id followed by k LE u64 minima."""
    with open(path, "wb") as fh:
        for sig in signatures:
            fh.write(struct.pack("<Q", sig.doc_id))
            fh.write(sig.minima.astype("<u8").tobytes())


def read_signatures(path, k: int, seed: int) -> list[MinHashSignature]:
    sigs = []
    rec = 8 + 8 * k
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) % rec:
        raise ValueError("signature file length is not a whole number of records")
    for i in range(len(data) // rec):
        chunk = data[i * rec : (i + 1) * rec]
        (doc_id,) = struct.unpack("<Q", chunk[:8])
        minima = np.frombuffer(chunk[8:], dtype="<u8").astype(np.uint64)
        # an all-sentinel row can only come from the empty set
        items = 0 if bool((minima == _EMPTY_SENTINEL).all()) else 1
        sigs.append(MinHashSignature(doc_id=doc_id, seed=seed, n_items=items, minima=minima))
    return sigs
