"""Document embeddings: file formats plus a deterministic toy embedder.

The toy embedder (hashed bag-of-tokens, signed buckets, unit-normalized)
exists so the search and pairing stages can be exercised without an external
embedding model; production embeddings are ingested from files.
"""

from __future__ import annotations

import json
import struct
from typing import Sequence

import numpy as np

from .hashing import hash_ints

DEFAULT_DIM = 1024


def toy_embed(tokens: Sequence[int], dim: int = DEFAULT_DIM, seed: int = 0) -> np.ndarray:
    """Hashed bag-of-tokens embedding on the unit sphere (float32)."""
    if dim < 1:
        raise ValueError("dim must be positive")
    vec = np.zeros(dim, dtype=np.float64)
    for tok in tokens:
        h = hash_ints([seed, tok])
        bucket = h % dim
        sign = 1.0 if (h >> 63) & 1 else -1.0
        vec[bucket] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        vec[0] = 1.0
        norm = 1.0
    return (vec / norm).astype(np.float32)


def embed_corpus(handle, dim: int = DEFAULT_DIM, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Toy-embed every document; returns (ids, matrix) in corpus order."""
    ids = np.array(handle.ids(), dtype=np.uint64)
    mat = np.empty((len(ids), dim), dtype=np.float32)
    for row, doc in enumerate(handle):
        mat[row] = toy_embed(doc.tokens, dim=dim, seed=seed)
    return ids, mat


def write_matrix(path, matrix: np.ndarray) -> None:
    """Binary matrix: LE u64 header (N, d), then row-major LE float32 data."""
    mat = np.ascontiguousarray(matrix, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", mat.shape[0], mat.shape[1]))
        fh.write(mat.tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise ValueError(f"truncated matrix header in {path}")
        n, d = struct.unpack("<QQ", header)
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != n * d:
        raise ValueError(f"matrix payload size mismatch in {path}")
    return data.reshape(n, d).astype(np.float32)


def write_ids(path, ids: Sequence[int]) -> None:
    arr = np.asarray(ids, dtype="<u8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", arr.shape[0]))
        fh.write(arr.tobytes())


def read_ids(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        arr = np.frombuffer(fh.read(), dtype="<u8")
    if arr.size != n:
        raise ValueError(f"id file payload size mismatch in {path}")
    return arr.astype(np.uint64)


def read_embeddings_jsonl(path) -> tuple[np.ndarray, np.ndarray]:
    """JSON-lines alternative: one {"id": ..., "vector": [...]} per line."""
    ids, rows = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                ids.append(int(rec["id"]))
                rows.append(np.asarray(rec["vector"], dtype=np.float32))
    if not rows:
        return np.empty(0, dtype=np.uint64), np.empty((0, 0), dtype=np.float32)
    return np.array(ids, dtype=np.uint64), np.stack(rows)
