"""Quantized inner-product approximate nearest-neighbor search.

The index partitions unit vectors into roughly sqrt(N) leaves with spherical
k-means, scores candidates on 8-bit codes, and rescores a provably sufficient
pool at full precision.  An asymmetric sharding layer splits the database into
value shards (one partition tree each) and routes query key-shards to salted
copies of the searcher ensemble.

Exactness notes.  All full-precision scores are accumulated with a fixed
per-row summation (np.einsum), so scoring a row subset is bit-identical to
scoring the full matrix; with exhaustive probing the search therefore equals
the brute-force oracle.  The rescore pool keeps every candidate whose
quantized score is within twice the worst-case quantization error of the
k-th quantized score, which guarantees the true top-k is rescored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import read_ids, read_matrix, write_ids, write_matrix

DEFAULT_TOP_K = 200
UNIT_NORM_TOL = 1e-4
QUANT_RANGE_TOL = 1e-6
SCHEMA_VERSION = 1

# worst-case per-component reconstruction error of the affine 8-bit scheme
QUANT_STEP = 1.0 / 255.0


class EmptyIndexError(ValueError):
    pass


class QuantizationRangeError(ValueError):
    pass


class ShardCoverageError(ValueError):
    pass


def quantize(vector: np.ndarray) -> np.ndarray:
    """Map components in [-1, 1] to uint8 via q = round_half_up((x+1)/2 * 255)."""
    x = np.asarray(vector, dtype=np.float64)
    if np.any(np.abs(x) > 1.0 + QUANT_RANGE_TOL):
        worst = float(np.max(np.abs(x)))
        raise QuantizationRangeError(f"component magnitude {worst} exceeds 1")
    x = np.clip(x, -1.0, 1.0)
    return np.floor((x + 1.0) * 0.5 * 255.0 + 0.5).astype(np.uint8)


def dequantize(codes: np.ndarray) -> np.ndarray:
    """Invert the affine map to bin centers: x = 2q/255 - 1."""
    return np.asarray(codes, dtype=np.float64) * (2.0 / 255.0) - 1.0


def exact_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Full-precision inner products with subset-stable summation order."""
    return np.einsum("ij,j->i", matrix, query)


def rank_topk(ids: np.ndarray, scores: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top-k by descending score, ties broken by ascending doc id."""
    order = np.lexsort((ids, -scores))[:k]
    return [(int(ids[i]), float(scores[i])) for i in order]


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    mat = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero vector cannot be normalized")
    return mat / norms[:, None]


@dataclass(frozen=True)
class EmbeddingRecord:
    doc_id: int
    vector: np.ndarray  # unit-norm float64
    codes: np.ndarray  # uint8

    @classmethod
    def from_vector(cls, doc_id: int, vector: np.ndarray) -> "EmbeddingRecord":
        vec = np.asarray(vector, dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError("zero vector")
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            vec = vec / norm
        return cls(doc_id=doc_id, vector=vec, codes=quantize(vec))


@dataclass
class PartitionTree:
    """Flat partition: leaf centroids plus per-leaf member row indices."""

    centroids: np.ndarray  # (L, d) float64, unit rows
    leaf_members: list[np.ndarray]  # row indices into the indexed matrix

    @property
    def n_leaves(self) -> int:
        return int(self.centroids.shape[0])


def default_leaves(n: int) -> int:
    return max(1, math.isqrt(n) + (0 if math.isqrt(n) ** 2 == n else 1))


def default_probe(n_leaves: int) -> int:
    return default_leaves(n_leaves)


def build_partition(
    vectors: np.ndarray,
    leaves: int | None = None,
    seed: int = 0,
    max_iters: int = 25,
) -> PartitionTree:
    """Spherical k-means with seeded k-means++ initialization.

    Deterministic given (vectors, leaves, seed).  Every row lands in exactly
    one leaf; empty leaves keep their previous centroid.
    """
    mat = normalize_rows(vectors)
    n = mat.shape[0]
    if n == 0:
        raise EmptyIndexError("cannot partition an empty set of vectors")
    n_leaves = default_leaves(n) if leaves is None else leaves
    if not 1 <= n_leaves <= n:
        raise ValueError(f"leaves must be in [1, {n}], got {n_leaves}")

    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    centroids = [mat[first]]
    d2 = np.maximum(2.0 - 2.0 * (mat @ centroids[0]), 0.0)
    for _ in range(n_leaves - 1):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids.append(mat[idx])
        d2 = np.maximum(np.minimum(d2, 2.0 - 2.0 * (mat @ centroids[-1])), 0.0)
    cents = np.stack(centroids)

    assign = np.argmax(mat @ cents.T, axis=1)
    for _ in range(max_iters):
        new_cents = cents.copy()
        for leaf in range(n_leaves):
            members = assign == leaf
            if members.any():
                mean = mat[members].sum(axis=0)
                norm = np.linalg.norm(mean)
                if norm > 0.0:
                    new_cents[leaf] = mean / norm
        new_assign = np.argmax(mat @ new_cents.T, axis=1)
        converged = np.array_equal(new_assign, assign) and np.allclose(new_cents, cents)
        cents, assign = new_cents, new_assign
        if converged:
            break
    members = [np.flatnonzero(assign == leaf) for leaf in range(n_leaves)]
    return PartitionTree(centroids=cents, leaf_members=members)


class Searcher:
    """Single-partition searcher over quantized codes with exact rescoring."""

    def __init__(
        self,
        ids: Sequence[int],
        vectors: np.ndarray,
        seed: int = 0,
        leaves: int | None = None,
        max_iters: int = 25,
        _tree: PartitionTree | None = None,
    ):
        self.ids = np.asarray(ids, dtype=np.uint64)
        if self.ids.shape[0] == 0:
            raise EmptyIndexError("searcher needs at least one vector")
        if len(set(int(i) for i in self.ids)) != self.ids.shape[0]:
            raise ValueError("doc ids must be unique")
        self.vectors = normalize_rows(vectors)
        self.codes = quantize(self.vectors)
        self._codes_f = dequantize(self.codes)
        self.seed = seed
        self.tree = _tree if _tree is not None else build_partition(
            self.vectors, leaves=leaves, seed=seed, max_iters=max_iters
        )
        d = self.vectors.shape[1]
        self._margin = 2.0 * math.sqrt(d) * QUANT_STEP + 1e-9

    @property
    def n_vectors(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def search(
        self,
        query: np.ndarray,
        k: int = DEFAULT_TOP_K,
        probe_leaves: int | None = None,
        rescore: bool = True,
        exclude_id: int | None = None,
    ) -> list[tuple[int, float]]:
        """Ranked (doc_id, score); scores are full-precision when rescoring."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(query, dtype=np.float64)
        n_probe = default_probe(self.tree.n_leaves) if probe_leaves is None else probe_leaves
        n_probe = max(1, min(n_probe, self.tree.n_leaves))

        leaf_scores = exact_scores(self.tree.centroids, q)
        leaf_order = np.lexsort((np.arange(self.tree.n_leaves), -leaf_scores))[:n_probe]
        cand = np.concatenate([self.tree.leaf_members[l] for l in leaf_order])
        if exclude_id is not None:
            cand = cand[self.ids[cand] != np.uint64(exclude_id)]
        if cand.size == 0:
            return []

        qscores = exact_scores(self._codes_f[cand], q)
        if not rescore:
            return rank_topk(self.ids[cand], qscores, k)
        if cand.size > k:
            kth = np.partition(qscores, cand.size - k)[cand.size - k]
            pool = cand[qscores >= kth - self._margin]
        else:
            pool = cand
        scores = exact_scores(self.vectors[pool], q)
        return rank_topk(self.ids[pool], scores, k)


def brute_force_topk(
    ids: Sequence[int],
    vectors: np.ndarray,
    query: np.ndarray,
    k: int,
    exclude_id: int | None = None,
) -> list[tuple[int, float]]:
    """Exact oracle: full-precision scores with the shared tie-break rule."""
    idarr = np.asarray(ids, dtype=np.uint64)
    mat = np.asarray(vectors, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    if exclude_id is not None:
        keep = idarr != np.uint64(exclude_id)
        idarr, mat = idarr[keep], mat[keep]
    if idarr.shape[0] == 0:
        return []
    return rank_topk(idarr, exact_scores(mat, q), k)


def merge_topk(result_lists: Sequence[Sequence[tuple[int, float]]], k: int) -> list[tuple[int, float]]:
    """Global top-k over per-searcher results under the shared tie-break rule."""
    merged = [item for results in result_lists for item in results]
    merged.sort(key=lambda item: (-item[1], item[0]))
    return merged[:k]


class ShardedSearcher:
    """Value-sharded searchers plus salted key-shard routing.

    Every value shard owns one partition tree; the full ensemble is logically
    replicated per salt, and each key shard is served by exactly one salted
    copy.  Results are independent of the routing, so salting only affects
    load placement.
    """

    def __init__(
        self,
        value_searchers: Sequence[Searcher],
        n_key_shards: int = 1,
        salts: int = 1,
        key_assignment: dict[int, int] | None = None,
    ):
        if not value_searchers:
            raise EmptyIndexError("need at least one value shard")
        if salts < 1:
            raise ValueError("salts must be >= 1")
        if n_key_shards < 1:
            raise ValueError("n_key_shards must be >= 1")
        self.value_searchers = list(value_searchers)
        self.salts = salts
        self.n_key_shards = n_key_shards
        if key_assignment is None:
            key_assignment = {ks: ks % salts for ks in range(n_key_shards)}
        self.key_assignment = dict(key_assignment)
        self._validate_assignment()

    def _validate_assignment(self) -> None:
        expected = set(range(self.n_key_shards))
        seen = set(self.key_assignment.keys())
        if seen != expected:
            missing = sorted(expected - seen)
            extra = sorted(seen - expected)
            raise ShardCoverageError(
                f"key shards must be covered exactly once (missing={missing}, unknown={extra})"
            )
        for ks, salt in self.key_assignment.items():
            if not 0 <= salt < self.salts:
                raise ShardCoverageError(f"key shard {ks} assigned to unknown salt {salt}")

    def key_shard_of(self, query_id: int) -> int:
        return int(query_id) % self.n_key_shards

    def salt_for(self, key_shard: int) -> int:
        if key_shard not in self.key_assignment:
            raise ShardCoverageError(f"uncovered key shard {key_shard}")
        return self.key_assignment[key_shard]

    def search(
        self,
        query: np.ndarray,
        k: int = DEFAULT_TOP_K,
        probe_leaves: int | None = None,
        rescore: bool = True,
        exclude_id: int | None = None,
        key_shard: int | None = None,
    ) -> list[tuple[int, float]]:
        if key_shard is not None:
            self.salt_for(key_shard)  # routing must be defined even off the hot path
        per_shard = [
            s.search(query, k=k, probe_leaves=probe_leaves, rescore=rescore, exclude_id=exclude_id)
            for s in self.value_searchers
        ]
        return merge_topk(per_shard, k)


def build_sharded_index(
    ids: Sequence[int],
    vectors: np.ndarray,
    value_shards: int = 1,
    n_key_shards: int = 1,
    salts: int = 1,
    key_assignment: dict[int, int] | None = None,
    seed: int = 0,
    leaves: int | None = None,
) -> ShardedSearcher:
    """Split rows into contiguous value shards and build one searcher each."""
    idarr = np.asarray(ids, dtype=np.uint64)
    mat = np.asarray(vectors, dtype=np.float64)
    n = idarr.shape[0]
    if n == 0:
        raise EmptyIndexError("cannot build an index over zero vectors")
    if not 1 <= value_shards <= n:
        raise ValueError(f"value_shards must be in [1, {n}]")
    bounds = np.linspace(0, n, value_shards + 1, dtype=int)
    searchers = []
    for i in range(value_shards):
        lo, hi = bounds[i], bounds[i + 1]
        searchers.append(
            Searcher(idarr[lo:hi], mat[lo:hi], seed=seed + i, leaves=leaves)
        )
    return ShardedSearcher(
        searchers, n_key_shards=n_key_shards, salts=salts, key_assignment=key_assignment
    )


def all_indexed(searcher: ShardedSearcher) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated (ids, vectors) actually held by the index, for oracle runs."""
    ids = np.concatenate([s.ids for s in searcher.value_searchers])
    vectors = np.concatenate([s.vectors for s in searcher.value_searchers])
    return ids, vectors


def save_index(searcher: ShardedSearcher, out_dir) -> None:
    """Persist a sharded index: manifest, centroids, postings, codes, vectors."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "value_shards": len(searcher.value_searchers),
        "salts": searcher.salts,
        "n_key_shards": searcher.n_key_shards,
        "key_assignment": {str(k): v for k, v in searcher.key_assignment.items()},
        "shards": [],
    }
    for i, s in enumerate(searcher.value_searchers):
        manifest["shards"].append(
            {"n": s.n_vectors, "d": s.dim, "leaves": s.tree.n_leaves, "seed": s.seed}
        )
        write_matrix(os.path.join(out_dir, f"vectors_{i}.bin"), s.vectors)
        write_matrix(os.path.join(out_dir, f"centroids_{i}.bin"), s.tree.centroids)
        write_ids(os.path.join(out_dir, f"ids_{i}.bin"), s.ids)
        with open(os.path.join(out_dir, f"codes_{i}.bin"), "wb") as fh:
            fh.write(s.codes.astype(np.uint8).tobytes())
        with open(os.path.join(out_dir, f"postings_{i}.json"), "w", encoding="utf-8") as fh:
            json.dump([m.tolist() for m in s.tree.leaf_members], fh, sort_keys=True)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_index(out_dir) -> ShardedSearcher:
    import os

    with open(os.path.join(out_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    searchers = []
    for i, shard in enumerate(manifest["shards"]):
        vectors = read_matrix(os.path.join(out_dir, f"vectors_{i}.bin")).astype(np.float64)
        centroids = read_matrix(os.path.join(out_dir, f"centroids_{i}.bin")).astype(np.float64)
        ids = read_ids(os.path.join(out_dir, f"ids_{i}.bin"))
        with open(os.path.join(out_dir, f"postings_{i}.json"), "r", encoding="utf-8") as fh:
            members = [np.asarray(m, dtype=int) for m in json.load(fh)]
        tree = PartitionTree(centroids=centroids, leaf_members=members)
        searchers.append(Searcher(ids, vectors, seed=shard["seed"], _tree=tree))
    return ShardedSearcher(
        searchers,
        n_key_shards=manifest["n_key_shards"],
        salts=manifest["salts"],
        key_assignment={int(k): v for k, v in manifest["key_assignment"].items()},
    )
