"""Conditional synthesis: fit p(target | seed document), sample, and filter.

The reference synthesizer is a count-based conditional n-gram: the context of
each target token is a bucketed multiset summary of the seed document plus
the last ``order - 1`` generated tokens, with add-lambda smoothing.  It
realizes the same contract a neural synthesizer would, while remaining
exactly analyzable against the latent-concept oracles.  External synthesizers
plug in over a line-delimited JSON process boundary.
"""

from __future__ import annotations

import json
import pickle
import random
import subprocess
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .hashing import derive_seed

EOD = -1  # end-of-document sentinel, never emitted in output sequences

DEFAULT_ORDER = 3
DEFAULT_FEATURE_BUCKETS = 16
DEFAULT_SMOOTHING = 0.1
DEFAULT_TEMPERATURE = 1.0
DEFAULT_TOP_P = 0.9
DEFAULT_MAX_TOKENS = 4096

KEPT = "kept"
DROPPED_REPETITION = "dropped_repetition"

DIST_SUM_TOL = 1e-6
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SynthesisRecord:
    record_id: int
    seed_id: int
    tokens: tuple[int, ...]
    temperature: float
    top_p: float
    seed: int
    filter_status: str


class ConditionalNgramModel:
    """Count-based conditional model of target tokens given a seed document.

    Contexts are ``(seed_features, last order-1 target tokens)`` where
    seed_features is the target-vocabulary-independent bucketed multiset of
    the seed document's tokens (bucket = token id mod feature_buckets).
    Prefixes shorter than the context width are padded, so early positions
    keep their own statistics.  Fitting is plain maximum likelihood; queries
    apply add-lambda smoothing over the observed vocabulary plus the
    end-of-document symbol.
    """

    _PAD = None

    def __init__(
        self,
        order: int = DEFAULT_ORDER,
        feature_buckets: int = DEFAULT_FEATURE_BUCKETS,
        smoothing: float = DEFAULT_SMOOTHING,
    ):
        if order < 1:
            raise ValueError("order must be >= 1")
        if feature_buckets < 1:
            raise ValueError("feature_buckets must be >= 1")
        if smoothing <= 0.0:
            raise ValueError("smoothing must be positive")
        self.order = order
        self.feature_buckets = feature_buckets
        self.smoothing = smoothing
        self._counts: dict[tuple, Counter] = defaultdict(Counter)
        self._totals: dict[tuple, int] = defaultdict(int)
        self._vocab: list[int] = []
        self._vocab_index: dict[int, int] = {}
        self.fitted = False

    def seed_features(self, seed_tokens: Sequence[int]) -> tuple[int, ...]:
        buckets = [0] * self.feature_buckets
        for tok in seed_tokens:
            buckets[int(tok) % self.feature_buckets] += 1
        return tuple(buckets)

    def _context(self, feat: tuple[int, ...], prefix: Sequence[int]) -> tuple:
        width = self.order - 1
        ctx = (self._PAD,) * max(0, width - len(prefix)) + tuple(prefix[-width:] if width else ())
        return (feat, ctx)

    def fit(self, pairs: Iterable[tuple[Sequence[int], Sequence[int]]]) -> "ConditionalNgramModel":
        vocab: set[int] = set()
        n_pairs = 0
        for seed_tokens, target_tokens in pairs:
            n_pairs += 1
            feat = self.seed_features(seed_tokens)
            seq = [int(t) for t in target_tokens]
            vocab.update(seq)
            prefix: list[int] = []
            for tok in seq + [EOD]:
                key = self._context(feat, prefix)
                self._counts[key][tok] += 1
                self._totals[key] += 1
                prefix.append(tok)
        if n_pairs == 0:
            raise ValueError("cannot fit a synthesizer on an empty pair dataset")
        self._vocab = sorted(vocab) + [EOD]
        self._vocab_index = {tok: i for i, tok in enumerate(self._vocab)}
        self.fitted = True
        return self

    @property
    def vocabulary(self) -> list[int]:
        return list(self._vocab)

    def next_token_dist(self, seed_tokens: Sequence[int], prefix: Sequence[int]) -> np.ndarray:
        """Smoothed next-token distribution over ``vocabulary`` (sums to 1)."""
        if not self.fitted:
            raise RuntimeError("model is not fitted")
        key = self._context(self.seed_features(seed_tokens), prefix)
        counts = self._counts.get(key)
        lam = self.smoothing
        probs = np.full(len(self._vocab), lam, dtype=np.float64)
        total = lam * len(self._vocab)
        if counts:
            for tok, cnt in counts.items():
                probs[self._vocab_index[tok]] += cnt
            total += self._totals[key]
        return probs / total

    def sequence_prob(self, seed_tokens: Sequence[int], target_tokens: Sequence[int]) -> float:
        """Probability of emitting exactly ``target_tokens`` then stopping."""
        prefix: list[int] = []
        prob = 1.0
        for tok in list(target_tokens) + [EOD]:
            dist = self.next_token_dist(seed_tokens, prefix)
            idx = self._vocab_index.get(int(tok))
            if idx is None:
                return 0.0
            prob *= float(dist[idx])
            prefix.append(int(tok))
        return prob

    def save(self, path) -> None:
        # contexts contain pad sentinels, so sort by repr for stable bytes
        state = {
            "order": self.order,
            "feature_buckets": self.feature_buckets,
            "smoothing": self.smoothing,
            "counts": {
                k: dict(sorted(v.items()))
                for k, v in sorted(self._counts.items(), key=lambda kv: repr(kv[0]))
            },
            "totals": dict(sorted(self._totals.items(), key=lambda kv: repr(kv[0]))),
            "vocab": self._vocab,
        }
        with open(path, "wb") as fh:
            pickle.dump(state, fh, protocol=4)

    @classmethod
    def load(cls, path) -> "ConditionalNgramModel":
        with open(path, "rb") as fh:
            state = pickle.load(fh)
        model = cls(state["order"], state["feature_buckets"], state["smoothing"])
        model._counts = defaultdict(Counter, {k: Counter(v) for k, v in state["counts"].items()})
        model._totals = defaultdict(int, state["totals"])
        model._vocab = state["vocab"]
        model._vocab_index = {tok: i for i, tok in enumerate(model._vocab)}
        model.fitted = True
        return model


def nucleus_filter(dist: np.ndarray, top_p: float = DEFAULT_TOP_P) -> np.ndarray:
    """Keep the minimal descending-probability prefix with mass >= top_p.

    Ties are broken by ascending index; the retained mass is renormalized and
    everything else zeroed.
    """
    if not 0.0 < top_p <= 1.0:
        raise ValueError("top_p must be in (0, 1]")
    probs = np.asarray(dist, dtype=np.float64)
    if abs(float(probs.sum()) - 1.0) > DIST_SUM_TOL:
        raise ValueError(f"distribution sums to {float(probs.sum())}, not 1")
    if top_p == 1.0:
        return probs.copy()
    order = np.lexsort((np.arange(probs.shape[0]), -probs))
    cum = np.cumsum(probs[order])
    cut = int(np.searchsorted(cum, top_p, side="left")) + 1
    keep = order[:cut]
    out = np.zeros_like(probs)
    out[keep] = probs[keep] / probs[keep].sum()
    return out


def apply_temperature(dist: np.ndarray, temperature: float) -> np.ndarray:
    """Scale log-probabilities by 1/temperature and renormalize."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive (use argmax for greedy)")
    probs = np.asarray(dist, dtype=np.float64)
    if temperature == 1.0:
        return probs.copy()
    with np.errstate(divide="ignore"):
        scaled = np.where(probs > 0.0, probs ** (1.0 / temperature), 0.0)
    return scaled / scaled.sum()


def sample_conditional(
    model: ConditionalNgramModel,
    seed_tokens: Sequence[int],
    temperature: float = DEFAULT_TEMPERATURE,
    top_p: float = DEFAULT_TOP_P,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    seed: int = 0,
    argmax: bool = False,
) -> tuple[int, ...]:
    """Autoregressive sampling; stops at end-of-document or max_tokens.

    Deterministic given (model, seed_tokens, params, seed).
    """
    rng = random.Random(seed)
    vocab = model.vocabulary
    out: list[int] = []
    while len(out) < max_tokens:
        dist = model.next_token_dist(seed_tokens, out)
        if argmax:
            idx = int(np.argmax(dist))  # first max = lowest token id
        else:
            dist = apply_temperature(dist, temperature)
            dist = nucleus_filter(dist, top_p)
            cum = np.cumsum(dist)
            cum[-1] = 1.0  # guard against rounding in the final bin
            idx = int(np.searchsorted(cum, rng.random(), side="right"))
        tok = vocab[idx]
        if tok == EOD:
            break
        out.append(tok)
    return tuple(out)


def post_filter_repetition(tokens: Sequence[int], width: int = 13) -> str:
    """Flag sequences containing any width-token window occurring twice."""
    toks = list(tokens)
    seen: set[tuple[int, ...]] = set()
    for i in range(len(toks) - width + 1):
        window = tuple(toks[i : i + width])
        if window in seen:
            return DROPPED_REPETITION
        seen.add(window)
    return KEPT


def hierarchical_sample(
    corpus,
    model: ConditionalNgramModel,
    n_docs: int,
    seed: int = 0,
    temperature: float = DEFAULT_TEMPERATURE,
    top_p: float = DEFAULT_TOP_P,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    filter_width: int = 13,
) -> list[SynthesisRecord]:
    """Draw a uniform seed document then a conditional sample, n_docs times.

    Per-record seeds are derived from (seed, index), so outputs do not depend
    on scheduling and any record can be regenerated in isolation.
    """
    if n_docs < 0:
        raise ValueError("n_docs must be >= 0")
    ids = corpus.ids() if hasattr(corpus, "ids") else list(range(len(corpus)))
    if not ids:
        raise ValueError("corpus is empty")
    records = []
    for index in range(n_docs):
        rec_seed = derive_seed(seed, index)
        rng = random.Random(rec_seed)
        seed_id = ids[rng.randrange(len(ids))]
        doc = corpus.get(seed_id) if hasattr(corpus, "get") else corpus[seed_id]
        seed_doc_tokens = doc.tokens if hasattr(doc, "tokens") else doc
        tokens = sample_conditional(
            model,
            seed_doc_tokens,
            temperature=temperature,
            top_p=top_p,
            max_tokens=max_tokens,
            seed=derive_seed(rec_seed, 1),
        )
        records.append(
            SynthesisRecord(
                record_id=index,
                seed_id=seed_id,
                tokens=tokens,
                temperature=temperature,
                top_p=top_p,
                seed=rec_seed,
                filter_status=post_filter_repetition(tokens, filter_width),
            )
        )
    return records


class ExternalSynthesizer:
    """Line-delimited JSON synthesizer boundary over a subprocess' stdio.

    Request: {"seed_text", "temperature", "top_p", "max_tokens", "seed"};
    response: {"text": ...}.  Any conforming process can serve as the
    synthesizer.
    """

    def __init__(self, argv: Sequence[str]):
        self._proc = subprocess.Popen(
            list(argv),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def sample(
        self,
        seed_text: str,
        temperature: float = DEFAULT_TEMPERATURE,
        top_p: float = DEFAULT_TOP_P,
        max_tokens: int = DEFAULT_MAX_TOKENS,
        seed: int = 0,
    ) -> str:
        if self._proc.poll() is not None:
            raise RuntimeError("external synthesizer process has exited")
        request = {
            "seed_text": seed_text,
            "temperature": temperature,
            "top_p": top_p,
            "max_tokens": max_tokens,
            "seed": seed,
        }
        assert self._proc.stdin is not None and self._proc.stdout is not None
        self._proc.stdin.write(json.dumps(request, sort_keys=True) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise RuntimeError("external synthesizer closed its output stream")
        response = json.loads(line)
        return response["text"]

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)

    def __enter__(self) -> "ExternalSynthesizer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def render_tokens(tokens: Sequence[int], vocab: dict[int, str] | None) -> str:
    """Render token ids back to text via the corpus vocabulary.

    Unknown ids fall back to a deterministic alphabetic encoding so the
    output stays friendly to shingle normalization.
    """
    pieces = []
    for tok in tokens:
        piece = vocab.get(tok) if vocab else None
        if piece is None:
            n, chars = int(tok), []
            while True:
                n, rem = divmod(n, 26)
                chars.append(chr(ord("a") + rem))
                if n == 0:
                    break
            piece = "q" + "".join(reversed(chars))
        pieces.append(piece)
    return " ".join(pieces)


def write_synthesis_jsonl(path, records: Sequence[SynthesisRecord], vocab=None, id_base: int = 1) -> None:
    """Kept records as JSON lines {id, seed_id, text}; ids offset by id_base."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if rec.filter_status == KEPT:
                fh.write(
                    json.dumps(
                        {
                            "id": id_base + rec.record_id,
                            "seed_id": rec.seed_id,
                            "text": render_tokens(rec.tokens, vocab),
                        },
                        sort_keys=True,
                    )
                )
                fh.write("\n")


def write_synthesis_manifest(path, records: Sequence[SynthesisRecord], params: dict) -> None:
    kept = sum(1 for r in records if r.filter_status == KEPT)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kept": kept,
        "dropped_repetition": len(records) - kept,
        "params": params,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
