"""Thresholding, shingle dedup, and the exact pipeline-vs-oracle equivalence."""

import numpy as np
import pytest

from pairsynth import ann, corpus, embedding, fixtures, pairing, shingle


def _doc(doc_id, text):
    tok = corpus.HashTokenizer()
    return corpus.Document(id=doc_id, text=text, tokens=tuple(tok.tokenize(text)))


WORDS = fixtures._word_inventory()


class TestThreshold:
    def test_paper_threshold_example(self):
        neighbors = {1: [(2, 0.80), (3, 0.70)]}
        records = pairing.pair_by_threshold(neighbors, alpha=0.75)
        assert records == [pairing.PairRecord(1, 2, 0.80)]

    def test_strictly_greater(self):
        neighbors = {1: [(2, 0.75)]}
        assert pairing.pair_by_threshold(neighbors, alpha=0.75) == []

    def test_identical_vectors_similarity_one_emitted(self):
        neighbors = {1: [(2, 1.0)], 2: [(1, 1.0)]}
        records = pairing.pair_by_threshold(neighbors, alpha=0.75)
        assert len(records) == 2

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            pairing.pair_by_threshold({}, alpha=1.5)

    def test_self_match_rejected(self):
        with pytest.raises(ValueError):
            pairing.pair_by_threshold({1: [(1, 0.9)]}, alpha=0.5)

    def test_both_orderings_iff_mutual(self):
        neighbors = {1: [(2, 0.9)], 2: [(1, 0.9)], 3: [(1, 0.8)]}
        records = pairing.pair_by_threshold(neighbors, alpha=0.75)
        keys = {(r.seed_id, r.target_id) for r in records}
        assert (1, 2) in keys and (2, 1) in keys and (3, 1) in keys and (1, 3) not in keys

    def test_idempotent_refilter(self):
        neighbors = {1: [(2, 0.9), (3, 0.4)], 4: [(5, 0.77)]}
        once = pairing.pair_by_threshold(neighbors, alpha=0.75)
        refiltered = pairing.pair_by_threshold(
            {r.seed_id: [(r.target_id, r.similarity)] for r in once}, alpha=0.75
        )
        assert {(r.seed_id, r.target_id) for r in refiltered} == {
            (r.seed_id, r.target_id) for r in once
        }


class TestDedup:
    def test_shared_13_token_run_discarded(self):
        run = " ".join(WORDS[:13])
        d1 = _doc(1, " ".join(WORDS[100:150]) + " " + run)
        d2 = _doc(2, run + " " + " ".join(WORDS[200:250]))
        pairs = [pairing.PairRecord(1, 2, 0.9)]
        assert pairing.dedup_pairs(pairs, {1: d1, 2: d2}) == []

    def test_12_token_run_retained(self):
        run = " ".join(WORDS[:12])
        d1 = _doc(1, " ".join(WORDS[100:150]) + " " + run)
        d2 = _doc(2, run + " " + " ".join(WORDS[200:250]))
        pairs = [pairing.PairRecord(1, 2, 0.9)]
        assert len(pairing.dedup_pairs(pairs, {1: d1, 2: d2})) == 1

    def test_punctuated_copy_discarded(self):
        # oracle: normalization strips the edits, so the shingle sets coincide
        base = " ".join(WORDS[300:340])
        d1 = _doc(1, base)
        d2 = _doc(2, base.replace(" ", ", ", 5) + "!")
        toks1 = shingle.normalize_for_shingling(d1.text)
        toks2 = shingle.normalize_for_shingling(d2.text)
        assert shingle.shingles(toks1, 13).hashes & shingle.shingles(toks2, 13).hashes
        pairs = [pairing.PairRecord(1, 2, 0.95)]
        assert pairing.dedup_pairs(pairs, {1: d1, 2: d2}) == []

    def test_dangling_id_raises_with_id(self):
        d1 = _doc(1, "some text here")
        with pytest.raises(pairing.DanglingDocError) as err:
            pairing.dedup_pairs([pairing.PairRecord(1, 99, 0.9)], {1: d1})
        assert err.value.doc_id == 99

    def test_soundness_and_completeness_against_window_oracle(self):
        # oracle: direct tuple-window intersection on normalized tokens
        import random

        rng = random.Random(5)
        docs = {}
        for i in range(30):
            words = [WORDS[rng.randrange(400)] for _ in range(40)]
            docs[i] = _doc(i, " ".join(words))
        pairs = [
            pairing.PairRecord(a, b, 0.9)
            for a in range(30)
            for b in range(30)
            if a != b
        ]
        kept = {(p.seed_id, p.target_id) for p in pairing.dedup_pairs(pairs, docs, width=5)}
        for p in pairs:
            t1 = shingle.normalize_for_shingling(docs[p.seed_id].text)
            t2 = shingle.normalize_for_shingling(docs[p.target_id].text)
            w1 = {tuple(t1[i : i + 5]) for i in range(len(t1) - 4)}
            w2 = {tuple(t2[i : i + 5]) for i in range(len(t2) - 4)}
            overlap = bool(w1 & w2)
            assert ((p.seed_id, p.target_id) in kept) == (not overlap)


class TestEmitDataset:
    def test_boundary_pair_retained_at_cap(self):
        long_text = " ".join(f"{WORDS[i % len(WORDS)]}" for i in range(4096))
        d1 = _doc(1, long_text)
        d2 = _doc(2, long_text + " extra")  # 4097 tokens
        assert d1.token_count == 4096
        pairs = [pairing.PairRecord(1, 1, 0.9), pairing.PairRecord(1, 2, 0.9)]
        docs = {1: d1, 2: d2}
        ds = pairing.emit_pair_dataset([pairing.PairRecord(1, 1, 0.9)], docs)
        assert len(ds) == 1  # 4096 + 4096 == 8192 exactly
        ds2 = pairing.emit_pair_dataset([pairing.PairRecord(1, 2, 0.9)], docs)
        assert len(ds2) == 0  # 8193 over the cap

    def test_empty_pairs(self):
        assert len(pairing.emit_pair_dataset([], {})) == 0

    def test_shuffle_deterministic(self):
        docs = {i: _doc(i, " ".join(WORDS[i : i + 20])) for i in range(10)}
        pairs = [pairing.PairRecord(a, b, 0.8) for a in range(10) for b in range(10) if a != b]
        ds1 = pairing.emit_pair_dataset(pairs, docs, seed=3)
        ds2 = pairing.emit_pair_dataset(list(reversed(pairs)), docs, seed=3)
        assert ds1.records == ds2.records  # input order does not matter

    def test_histogram_counts(self):
        records = [pairing.PairRecord(0, 1, s) for s in (0.76, 0.80, 0.99)]
        hist = pairing.similarity_histogram(records, bins=8, lo=0.0, hi=1.0)
        assert sum(c for _, _, c in hist) == 3
        assert hist[-1][2] == 1  # 0.99 lands in the final bin

    def test_jsonl_round_trip(self, tmp_path):
        records = [pairing.PairRecord(1, 2, 0.8), pairing.PairRecord(2, 1, 0.8)]
        path = tmp_path / "pairs.jsonl"
        pairing.write_pairs_jsonl(path, records)
        assert pairing.read_pairs_jsonl(path) == records


class TestPipelineEquivalence:
    """Step-1 pipeline vs the O(N^2) exact-similarity + tuple-shingle oracle."""

    def _oracle_pairs(self, ids, vectors, docs, alpha, width):
        sims = vectors @ vectors.T
        raw = []
        n = len(ids)
        for i in range(n):
            for j in range(n):
                if i != j and sims[i, j] > alpha:
                    raw.append((int(ids[i]), int(ids[j]), float(sims[i, j])))
        windows = {}
        for doc_id, doc in docs.items():
            toks = shingle.normalize_for_shingling(doc.text)
            windows[doc_id] = {
                tuple(toks[k : k + 13]) for k in range(len(toks) - 12)
            }
        return {
            (a, b) for a, b, _ in raw if not (windows[a] & windows[b])
        }

    def test_small_corpus_equivalence(self):
        fixture = fixtures.make_fixture_corpus(
            n_docs=400, seed=9, n_topics=10, repetition_fraction=0.02, duplicate_fraction=0.05
        )
        handle = corpus.ingest(fixture.records)
        docs = {d.id: d for d in handle}
        ids, matrix = embedding.embed_corpus(handle, dim=64, seed=0)
        vectors = ann.normalize_rows(matrix.astype(np.float64))

        searcher = ann.build_sharded_index(ids, vectors, value_shards=2, seed=1)
        iid, ivec = ann.all_indexed(searcher)
        row_of = {int(i): r for r, i in enumerate(iid)}
        max_leaves = max(s.tree.n_leaves for s in searcher.value_searchers)
        neighbors = {}
        for doc_id in ids:
            doc_id = int(doc_id)
            res = searcher.search(
                ivec[row_of[doc_id]], k=200, probe_leaves=max_leaves, exclude_id=doc_id
            )
            neighbors[doc_id] = res
        thresholded = pairing.pair_by_threshold(neighbors, alpha=0.75)
        kept = pairing.dedup_pairs(thresholded, docs, width=13)
        got = {(p.seed_id, p.target_id) for p in kept}

        # the oracle must score the exact vectors the index holds
        oracle_vec = np.stack([ivec[row_of[int(i)]] for i in ids])
        want = self._oracle_pairs(ids, oracle_vec, docs, 0.75, 13)
        assert got == want
        assert len(got) > 0  # fixture actually produces pairs
