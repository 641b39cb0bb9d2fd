"""Deterministic corpus fixtures with planted structure.

Documents are built from alphabetic pseudo-words so shingle normalization
keeps every token.  Topic pools give same-topic documents high bag-of-words
similarity (pairing candidates) while per-document tag words inserted every
few positions guarantee that distinct documents never share a 13-token
window and that clean documents never repeat one internally.  Planted
repetition documents carry an exact duplicated 13-token block; planted
near-duplicates copy a long prefix of an earlier document.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

_CONSONANTS = "bcdfghjklmnpqrstvwz"
_VOWELS = "aeiou"

TAG_EVERY = 8  # a tag word at least this often keeps all 13-windows unique
REP_BLOCK = 13


def _word_inventory() -> list[str]:
    words = []
    for c1 in _CONSONANTS:
        for v in _VOWELS:
            for c2 in _CONSONANTS:
                words.append(c1 + v + c2)
    return words


def _alpha(n: int) -> str:
    chars = []
    while True:
        n, rem = divmod(n, 26)
        chars.append(chr(ord("a") + rem))
        if n == 0:
            break
    return "".join(reversed(chars))


def _tag(doc_index: int, slot: int) -> str:
    return f"x{_alpha(doc_index)}y{_alpha(slot)}"


@dataclass
class FixtureCorpus:
    records: list[dict] = field(default_factory=list)
    topic_of: dict[int, int] = field(default_factory=dict)
    repetition_ids: set[int] = field(default_factory=set)
    duplicate_ids: set[int] = field(default_factory=set)
    duplicate_source: dict[int, int] = field(default_factory=dict)

    @property
    def n_docs(self) -> int:
        return len(self.records)


def make_fixture_corpus(
    n_docs: int = 1000,
    seed: int = 0,
    n_topics: int = 25,
    topic_pool: int = 24,
    doc_len_range: tuple[int, int] = (96, 128),
    repetition_fraction: float = 0.05,
    duplicate_fraction: float = 0.10,
    duplicate_keep: float = 0.9,
) -> FixtureCorpus:
    """Build a seeded corpus with exact planted repetition/duplicate counts."""
    if n_docs < n_topics * 2:
        raise ValueError("need at least two documents per topic")
    rng = random.Random(seed)
    inventory = _word_inventory()
    rng.shuffle(inventory)
    need = n_topics * topic_pool
    if need > len(inventory):
        raise ValueError("topic pools exceed the word inventory")
    pools = [
        inventory[t * topic_pool : (t + 1) * topic_pool] for t in range(n_topics)
    ]

    n_rep = round(n_docs * repetition_fraction)
    n_dup = round(n_docs * duplicate_fraction)
    if n_rep + n_dup >= n_docs // 2:
        raise ValueError("planted fractions leave too few clean documents")
    # spread planted docs deterministically over the second half of the stream
    half = n_docs // 2
    special = list(range(half, n_docs))
    rng.shuffle(special)
    rep_ids = set(special[:n_rep])
    dup_ids = set(special[n_rep : n_rep + n_dup])

    fixture = FixtureCorpus()
    words_of: dict[int, list[str]] = {}

    def _clean_words(index: int, topic: int, drng: random.Random) -> list[str]:
        lo, hi = doc_len_range
        length = drng.randint(lo, hi)
        out = []
        slot = 0
        for pos in range(length):
            if pos % TAG_EVERY == TAG_EVERY - 1:
                out.append(_tag(index, slot))
                slot += 1
            else:
                out.append(drng.choice(pools[topic]))
        return out

    for index in range(n_docs):
        topic = index % n_topics
        drng = random.Random((seed << 20) ^ index)
        if index in dup_ids:
            # copy a long prefix of an earlier clean same-topic document
            candidates = [
                j
                for j in range(index)
                if j % n_topics == topic and j not in rep_ids and j not in dup_ids
            ]
            source = candidates[drng.randrange(len(candidates))]
            src_words = words_of[source]
            keep = max(REP_BLOCK + 1, int(len(src_words) * duplicate_keep))
            words = list(src_words[:keep])
            slot = 0
            for pos in range(keep, len(src_words)):
                if pos % TAG_EVERY == TAG_EVERY - 1:
                    words.append(_tag(index, slot))
                    slot += 1
                else:
                    words.append(drng.choice(pools[topic]))
            fixture.duplicate_ids.add(index + 1)
            fixture.duplicate_source[index + 1] = source + 1
        elif index in rep_ids:
            base = _clean_words(index, topic, drng)
            block = [drng.choice(pools[topic]) for _ in range(REP_BLOCK)]
            cut = len(base) // 2
            words = base[:cut] + block + block + base[cut:]
            fixture.repetition_ids.add(index + 1)
        else:
            words = _clean_words(index, topic, drng)
        words_of[index] = words
        fixture.records.append({"id": index + 1, "text": " ".join(words)})
        fixture.topic_of[index + 1] = topic
    return fixture


def write_fixture_jsonl(path, fixture: FixtureCorpus) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for rec in fixture.records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
