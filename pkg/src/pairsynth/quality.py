"""Rule-based and judge-based quality metrics for corpora and pair sets.

Rule metrics (repetition rate, duplicate rate, pair copying) are pure
functions of content and configuration.  Judge metrics render prompt
templates and defer to an HTTP endpoint; with the bundled stub they are
fully reproducible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import judge as judge_mod
from .corpus import HashTokenizer
from .shingle import (
    DEFAULT_MINHASH_K,
    DEFAULT_WIDTH,
    ShingleSet,
    estimate_jaccard,
    jaccard,
    minhash,
    normalize_for_shingling,
    shingles,
)

RULE = "rule"
JUDGE = "judge"

DEFAULT_DUPLICATE_THRESHOLD = 0.6
DEFAULT_COPY_THRESHOLD = 0.9

# sample-size defaults for the judge-backed metrics
DEFAULT_JUDGE_SAMPLE = 1000
DEFAULT_FACTUALITY_SAMPLE = 10000
DEFAULT_DUPLICATE_SAMPLE = 1_000_000


class EmptySampleError(ValueError):
    pass


class DanglingPairError(KeyError):
    pass


@dataclass(frozen=True)
class MetricValue:
    fraction: float
    sample_size: int
    method: str


@dataclass
class QualityReport:
    metrics: dict[str, MetricValue] = field(default_factory=dict)
    run_id: str = ""

    def add(self, name: str, fraction: float, sample_size: int, method: str) -> None:
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"metric {name} outside [0, 1]: {fraction}")
        if sample_size <= 0:
            raise ValueError(f"metric {name} reported with empty sample")
        self.metrics[name] = MetricValue(fraction, sample_size, method)


def _has_repeated_window(tokens: Sequence[int], width: int) -> bool:
    seen: set[tuple[int, ...]] = set()
    toks = list(tokens)
    for i in range(len(toks) - width + 1):
        window = tuple(toks[i : i + width])
        if window in seen:
            return True
        seen.add(window)
    return False


def repetition_rate(token_docs: Sequence[Sequence[int]], width: int = DEFAULT_WIDTH) -> float:
    """Fraction of documents containing any width-token window twice."""
    if not token_docs:
        raise EmptySampleError("repetition rate needs a nonempty sample")
    flagged = sum(1 for toks in token_docs if _has_repeated_window(toks, width))
    return flagged / len(token_docs)


def duplicate_rate(
    texts: Sequence[str],
    threshold: float = DEFAULT_DUPLICATE_THRESHOLD,
    mode: str = "exact",
    width: int = DEFAULT_WIDTH,
    minhash_k: int = DEFAULT_MINHASH_K,
    seed: int = 0,
    tokenizer: HashTokenizer | None = None,
) -> float:
    """Greedy duplicate scan in sample order.

    Document i counts as a duplicate iff its (estimated) Jaccard similarity
    to some earlier retained document reaches the threshold; duplicates are
    not retained as future references.
    """
    if len(texts) < 2:
        raise EmptySampleError("duplicate rate needs at least two documents")
    if mode not in ("exact", "minhash"):
        raise ValueError(f"unknown mode {mode!r}")
    tokenizer = tokenizer or HashTokenizer()
    ssets = [
        shingles(normalize_for_shingling(t, tokenizer), width, doc_id=i)
        for i, t in enumerate(texts)
    ]
    if mode == "minhash":
        sigs = [minhash(s, k=minhash_k, seed=seed) for s in ssets]
    retained: list[int] = []
    duplicates = 0
    for i in range(len(texts)):
        is_dup = False
        for j in retained:
            sim = (
                jaccard(ssets[i], ssets[j])
                if mode == "exact"
                else estimate_jaccard(sigs[i], sigs[j])
            )
            if sim >= threshold:
                is_dup = True
                break
        if is_dup:
            duplicates += 1
        else:
            retained.append(i)
    return duplicates / len(texts)


def pair_copying_rate(
    pairs: Sequence[tuple[int, int]],
    docs: Mapping[int, str],
    threshold: float = DEFAULT_COPY_THRESHOLD,
    width: int = DEFAULT_WIDTH,
    tokenizer: HashTokenizer | None = None,
) -> float:
    """Fraction of pairs whose normalized shingle Jaccard reaches the threshold."""
    if not pairs:
        raise EmptySampleError("pair copying rate needs a nonempty sample")
    tokenizer = tokenizer or HashTokenizer()
    cache: dict[int, ShingleSet] = {}

    def _sset(doc_id: int) -> ShingleSet:
        if doc_id not in cache:
            if doc_id not in docs:
                raise DanglingPairError(f"pair references unknown document {doc_id}")
            cache[doc_id] = shingles(
                normalize_for_shingling(docs[doc_id], tokenizer), width, doc_id=doc_id
            )
        return cache[doc_id]

    copies = sum(
        1 for a, b in pairs if jaccard(_sset(a), _sset(b)) >= threshold
    )
    return copies / len(pairs)


@dataclass
class QualityConfig:
    repetition_width: int = DEFAULT_WIDTH
    duplicate_threshold: float = DEFAULT_DUPLICATE_THRESHOLD
    duplicate_mode: str = "exact"
    copy_threshold: float = DEFAULT_COPY_THRESHOLD
    judge_sample: int = DEFAULT_JUDGE_SAMPLE
    factuality_sample: int = DEFAULT_FACTUALITY_SAMPLE
    duplicate_sample: int = DEFAULT_DUPLICATE_SAMPLE
    seed: int = 0


def _sample(items: list, n: int, seed: int, salt: int) -> list:
    if n >= len(items):
        return list(items)
    rng = random.Random((seed << 8) ^ salt)
    return rng.sample(items, n)


def quality_report(
    corpus,
    pairs: Sequence[tuple[int, int]] | None = None,
    config: QualityConfig | None = None,
    judge_client: "judge_mod.JudgeClient | None" = None,
    run_id: str = "",
    tokenizer: HashTokenizer | None = None,
) -> QualityReport:
    """Aggregate rule metrics and, when an endpoint is configured, judge metrics.

    Sampling is deterministic by seed.  An empty corpus is an error, never a
    zero-filled report.
    """
    cfg = config or QualityConfig()
    docs = list(corpus)
    if not docs:
        raise EmptySampleError("refusing to report on an empty corpus")
    tokenizer = tokenizer or HashTokenizer()
    report = QualityReport(run_id=run_id)

    rep_sample = _sample(docs, cfg.judge_sample, cfg.seed, 1)
    report.add(
        "repetition",
        repetition_rate([d.tokens for d in rep_sample], cfg.repetition_width),
        len(rep_sample),
        RULE,
    )
    dup_sample = _sample(docs, cfg.duplicate_sample, cfg.seed, 2)
    if len(dup_sample) >= 2:
        report.add(
            f"duplicate_at_{len(dup_sample)}",
            duplicate_rate(
                [d.text for d in dup_sample],
                threshold=cfg.duplicate_threshold,
                mode=cfg.duplicate_mode,
                width=cfg.repetition_width,
                seed=cfg.seed,
                tokenizer=tokenizer,
            ),
            len(dup_sample),
            RULE,
        )
    if pairs:
        doc_text = {d.id: d.text for d in docs}
        pair_sample = _sample(list(pairs), cfg.judge_sample, cfg.seed, 3)
        report.add(
            "pair_copying",
            pair_copying_rate(
                pair_sample, doc_text, cfg.copy_threshold, cfg.repetition_width, tokenizer
            ),
            len(pair_sample),
            RULE,
        )

    if judge_client is not None:
        _judge_metrics(report, docs, pairs, cfg, judge_client)
    return report


def _judge_metrics(report, docs, pairs, cfg, client) -> None:
    doc_text = {d.id: d.text for d in docs}
    rep_sample = _sample(docs, cfg.judge_sample, cfg.seed, 4)
    verdicts = client.evaluate_many(
        judge_mod.NON_REPETITION,
        [(str(d.id), {"text": d.text}) for d in rep_sample],
    )
    report.add(
        "repetition_judge",
        sum(v.verdict == judge_mod.YES for v in verdicts) / len(verdicts),
        len(verdicts),
        JUDGE,
    )
    fact_sample = _sample(docs, cfg.factuality_sample, cfg.seed, 5)
    verdicts = client.evaluate_many(
        judge_mod.FACTUALITY,
        [(str(d.id), {"document": d.text}) for d in fact_sample],
    )
    report.add(
        "non_factual",
        sum(v.verdict == judge_mod.WELL_DEFINED_FALSE for v in verdicts) / len(verdicts),
        len(verdicts),
        JUDGE,
    )
    if pairs:
        pair_sample = _sample(list(pairs), cfg.judge_sample, cfg.seed, 6)
        payloads = [
            (f"{a}-{b}", {"text1": doc_text[a], "text2": doc_text[b]})
            for a, b in pair_sample
        ]
        relevance = client.evaluate_many(judge_mod.PAIR_RELEVANCE, payloads)
        report.add(
            "pair_irrelevance",
            sum(v.verdict == judge_mod.NO for v in relevance) / len(relevance),
            len(relevance),
            JUDGE,
        )
        novelty = client.evaluate_many(judge_mod.PAIR_NOVELTY, payloads)
        report.add(
            "pair_copying_judge",
            sum(v.verdict == judge_mod.YES for v in novelty) / len(novelty),
            len(novelty),
            JUDGE,
        )


def write_report_csv(path, report: QualityReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("metric,fraction,sample_size,method\n")
        for name in sorted(report.metrics):
            m = report.metrics[name]
            fh.write(f"{name},{m.fraction:.6f},{m.sample_size},{m.method}\n")


def format_summary(report: QualityReport) -> str:
    lines = [f"quality report {report.run_id}".rstrip()]
    for name in sorted(report.metrics):
        m = report.metrics[name]
        lines.append(f"  {name}: {m.fraction:.2%} (n={m.sample_size}, {m.method})")
    return "\n".join(lines)
