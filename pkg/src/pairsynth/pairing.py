"""Build the synthesizer-tuning pair set from thresholded neighbor lists.

Stage order: keep neighbors whose similarity strictly exceeds alpha, drop
pairs that share any normalized 13-token shingle, then emit a deterministic
context-capped dataset.  Both orderings of a mutual pair are emitted; the
conditional objective is directional.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import HashTokenizer
from .shingle import DEFAULT_WIDTH, normalize_for_shingling, shingles

DEFAULT_ALPHA = 0.75
DEFAULT_CONTEXT_CAP = 8192
SCHEMA_VERSION = 1


class DanglingDocError(KeyError):
    def __init__(self, doc_id):
        self.doc_id = doc_id
        super().__init__(f"pair references unknown document id {doc_id}")


@dataclass(frozen=True)
class PairRecord:
    seed_id: int
    target_id: int
    similarity: float


@dataclass
class PairDataset:
    records: list[PairRecord]
    alpha: float
    dedup_width: int
    context_cap: int
    seed: int
    pairs_before_dedup: int = 0
    pairs_after_dedup: int = 0

    def __len__(self) -> int:
        return len(self.records)


def pair_by_threshold(
    neighbors: Mapping[int, Sequence[tuple[int, float]]],
    alpha: float = DEFAULT_ALPHA,
) -> list[PairRecord]:
    """One ordered record per (query, neighbor) with similarity > alpha.

    Neighbor lists must already exclude self-matches.
    """
    if not -1.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [-1, 1], got {alpha}")
    records = []
    for seed_id in neighbors:
        for target_id, score in neighbors[seed_id]:
            if score > alpha:
                if target_id == seed_id:
                    raise ValueError(f"self-match in neighbor list for id {seed_id}")
                records.append(PairRecord(int(seed_id), int(target_id), float(score)))
    records.sort(key=lambda r: (r.seed_id, r.target_id))
    return records


class _ShingleCache:
    def __init__(self, docs, width: int, tokenizer: HashTokenizer | None):
        self._docs = docs
        self._width = width
        self._tokenizer = tokenizer or HashTokenizer()
        self._cache: dict[int, frozenset[int]] = {}

    def get(self, doc_id: int) -> frozenset[int]:
        if doc_id not in self._cache:
            try:
                doc = self._docs.get(doc_id) if hasattr(self._docs, "get") else self._docs[doc_id]
            except KeyError:
                doc = None
            if doc is None:
                raise DanglingDocError(doc_id)
            toks = normalize_for_shingling(doc.text, self._tokenizer)
            self._cache[doc_id] = shingles(toks, self._width, doc_id=doc_id).hashes
        return self._cache[doc_id]


def dedup_pairs(
    pairs: Sequence[PairRecord],
    docs,
    width: int = DEFAULT_WIDTH,
    tokenizer: HashTokenizer | None = None,
) -> list[PairRecord]:
    """Discard a pair iff its documents share any normalized width-token shingle."""
    cache = _ShingleCache(docs, width, tokenizer)
    kept = []
    for pair in pairs:
        if not (cache.get(pair.seed_id) & cache.get(pair.target_id)):
            kept.append(pair)
    return kept


def emit_pair_dataset(
    pairs: Sequence[PairRecord],
    docs,
    alpha: float = DEFAULT_ALPHA,
    dedup_width: int = DEFAULT_WIDTH,
    context_cap: int = DEFAULT_CONTEXT_CAP,
    seed: int = 0,
    pairs_before_dedup: int | None = None,
) -> PairDataset:
    """Filter pairs to the context cap and shuffle deterministically by seed."""
    import random

    def _count(doc_id: int) -> int:
        try:
            doc = docs.get(doc_id) if hasattr(docs, "get") else docs[doc_id]
        except KeyError:
            doc = None
        if doc is None:
            raise DanglingDocError(doc_id)
        return doc.token_count

    fitting = [
        p for p in pairs if _count(p.seed_id) + _count(p.target_id) <= context_cap
    ]
    fitting.sort(key=lambda r: (r.seed_id, r.target_id))
    random.Random(seed).shuffle(fitting)
    return PairDataset(
        records=fitting,
        alpha=alpha,
        dedup_width=dedup_width,
        context_cap=context_cap,
        seed=seed,
        pairs_before_dedup=pairs_before_dedup if pairs_before_dedup is not None else len(pairs),
        pairs_after_dedup=len(pairs),
    )


def similarity_histogram(
    records: Sequence[PairRecord], bins: int = 20, lo: float = -1.0, hi: float = 1.0
) -> list[tuple[float, float, int]]:
    """Fixed-width histogram of retained-pair similarities."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    width = (hi - lo) / bins
    counts = [0] * bins
    for rec in records:
        idx = min(int((rec.similarity - lo) / width), bins - 1)
        counts[max(idx, 0)] += 1
    return [(lo + i * width, lo + (i + 1) * width, counts[i]) for i in range(bins)]


def write_histogram_csv(path, hist: Sequence[tuple[float, float, int]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for lo, hi, count in hist:
            fh.write(f"{lo:.6f},{hi:.6f},{count}\n")


def write_pairs_jsonl(path, records: Sequence[PairRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {"seed_id": rec.seed_id, "target_id": rec.target_id, "similarity": rec.similarity},
                    sort_keys=True,
                )
            )
            fh.write("\n")


def read_pairs_jsonl(path) -> list[PairRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append(PairRecord(int(rec["seed_id"]), int(rec["target_id"]), float(rec["similarity"])))
    return out


def write_pair_manifest(path, dataset: PairDataset) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "alpha": dataset.alpha,
        "dedup_width": dataset.dedup_width,
        "context_cap": dataset.context_cap,
        "seed": dataset.seed,
        "pairs_before_dedup": dataset.pairs_before_dedup,
        "pairs_after_dedup": dataset.pairs_after_dedup,
        "pairs_emitted": len(dataset.records),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
