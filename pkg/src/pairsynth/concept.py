"""Exactly solvable latent-concept document model and the training simulation.

Documents are fixed-length symbol strings emitted i.i.d. per position from a
concept-specific categorical distribution; concepts are drawn from a prior.
At desk scale (V^L capped at 1e6) the marginal, the concept posterior, and
the posterior-integrated conditional

    P(d2 | d1) = sum_c P(d2 | c) P(c | d1)

are all computable by brute force, which makes them usable as oracles for
the count-based synthesizer and for a compute-matched comparison of three
training regimes: repeated real data, real data plus once-only synthetic
documents, and unlimited fresh draws.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import mixture
from .synthesis import ConditionalNgramModel, nucleus_filter, apply_temperature, EOD

ENUMERATION_GUARD = 10**6
PROB_SUM_TOL = 1e-9

BASELINE = "baseline"
SYNTHETIC = "synthetic"
ORACLE = "oracle"
REGIMES = (BASELINE, SYNTHETIC, ORACLE)


class EnumerationGuardError(ValueError):
    pass


class OutOfVocabularyError(ValueError):
    pass


class UnreachableDocumentError(ValueError):
    pass


@dataclass
class ConceptModel:
    """K latent concepts, a prior over them, and per-concept emissions."""

    prior: np.ndarray  # (K,)
    emissions: np.ndarray  # (K, V)
    doc_length: int

    def __post_init__(self):
        self.prior = np.asarray(self.prior, dtype=np.float64)
        self.emissions = np.asarray(self.emissions, dtype=np.float64)
        if self.prior.ndim != 1 or self.emissions.ndim != 2:
            raise ValueError("prior must be (K,), emissions must be (K, V)")
        if self.emissions.shape[0] != self.prior.shape[0]:
            raise ValueError("prior and emissions disagree on K")
        if self.doc_length < 1:
            raise ValueError("doc_length must be >= 1")
        if abs(self.prior.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError("prior must sum to 1")
        if np.any(np.abs(self.emissions.sum(axis=1) - 1.0) > PROB_SUM_TOL):
            raise ValueError("every emission row must sum to 1")
        if self.vocab_size**self.doc_length > ENUMERATION_GUARD:
            raise EnumerationGuardError(
                f"V^L = {self.vocab_size}^{self.doc_length} exceeds the "
                f"enumeration guard of {ENUMERATION_GUARD}"
            )
        # renormalize exactly so downstream identities hold to 1e-12
        self.prior = self.prior / self.prior.sum()
        self.emissions = self.emissions / self.emissions.sum(axis=1, keepdims=True)

    @property
    def n_concepts(self) -> int:
        return int(self.prior.shape[0])

    @property
    def vocab_size(self) -> int:
        return int(self.emissions.shape[1])

    @property
    def n_documents(self) -> int:
        return self.vocab_size**self.doc_length

    @classmethod
    def random(
        cls,
        n_concepts: int,
        vocab_size: int,
        doc_length: int,
        seed: int = 0,
        prior_concentration: float = 5.0,
        emission_concentration: float = 0.15,
    ) -> "ConceptModel":
        rng = np.random.default_rng(seed)
        prior = rng.dirichlet(np.full(n_concepts, prior_concentration))
        emissions = rng.dirichlet(np.full(vocab_size, emission_concentration), size=n_concepts)
        return cls(prior=prior, emissions=emissions, doc_length=doc_length)

    def _validate_doc(self, doc: Sequence[int]) -> np.ndarray:
        arr = np.asarray(doc, dtype=np.int64)
        if arr.shape != (self.doc_length,):
            raise ValueError(f"document must have length {self.doc_length}")
        if np.any(arr < 0) or np.any(arr >= self.vocab_size):
            bad = arr[(arr < 0) | (arr >= self.vocab_size)][0]
            raise OutOfVocabularyError(f"symbol {bad} outside vocabulary of size {self.vocab_size}")
        return arr


def likelihoods(model: ConceptModel, doc: Sequence[int]) -> np.ndarray:
    """P(d | c) for every concept: product of per-position emissions."""
    arr = model._validate_doc(doc)
    return np.prod(model.emissions[:, arr], axis=1)


def marginal(model: ConceptModel, doc: Sequence[int]) -> float:
    """P(d) = sum_c prior_c * P(d | c)."""
    return float(model.prior @ likelihoods(model, doc))


def posterior(model: ConceptModel, doc: Sequence[int]) -> np.ndarray:
    """P(c | d), exact Bayes."""
    joint = model.prior * likelihoods(model, doc)
    total = joint.sum()
    if total == 0.0:
        raise UnreachableDocumentError("document has zero marginal probability")
    return joint / total


def exact_conditional(model: ConceptModel, d1: Sequence[int], d2: Sequence[int]) -> float:
    """P(d2 | d1) = sum_c P(d2 | c) P(c | d1)."""
    return float(posterior(model, d1) @ likelihoods(model, d2))


def enumerate_documents(model: ConceptModel) -> list[tuple[int, ...]]:
    """All documents in lexicographic order (guarded by V^L <= 1e6)."""
    return list(itertools.product(range(model.vocab_size), repeat=model.doc_length))


def likelihood_table(model: ConceptModel) -> np.ndarray:
    """(K, V^L) likelihood of every document under every concept."""
    table = np.ones((model.n_concepts, 1), dtype=np.float64)
    for _ in range(model.doc_length):
        table = (table[:, :, None] * model.emissions[:, None, :]).reshape(
            model.n_concepts, -1
        )
    return table


def marginal_table(model: ConceptModel) -> np.ndarray:
    """(V^L,) marginal over all documents, lexicographic order."""
    return model.prior @ likelihood_table(model)


def conditional_table(model: ConceptModel, d1: Sequence[int]) -> np.ndarray:
    """(V^L,) posterior-integrated conditional P(. | d1)."""
    return posterior(model, d1) @ likelihood_table(model)


def sample_documents(
    model: ConceptModel, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (documents, concepts): c ~ prior, then symbols i.i.d. from emissions."""
    if n < 0:
        raise ValueError("n must be >= 0")
    concepts = rng.choice(model.n_concepts, size=n, p=model.prior)
    docs = np.empty((n, model.doc_length), dtype=np.int64)
    for c in range(model.n_concepts):
        mask = concepts == c
        count = int(mask.sum())
        if count:
            docs[mask] = rng.choice(
                model.vocab_size, size=(count, model.doc_length), p=model.emissions[c]
            )
    return docs, concepts


def sample_corpus(model: ConceptModel, n_docs: int, seed: int = 0) -> list[tuple[int, ...]]:
    """n_docs documents drawn from the model (concept marginalized out)."""
    docs, _ = sample_documents(model, n_docs, np.random.default_rng(seed))
    return [tuple(int(s) for s in row) for row in docs]


def sample_pairs(
    model: ConceptModel, n_pairs: int, seed: int = 0
) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Concept-sharing pairs: c ~ prior, then d1, d2 i.i.d. from that concept."""
    if n_pairs < 0:
        raise ValueError("n_pairs must be >= 0")
    rng = np.random.default_rng(seed)
    concepts = rng.choice(model.n_concepts, size=n_pairs, p=model.prior)
    d1 = np.empty((n_pairs, model.doc_length), dtype=np.int64)
    d2 = np.empty((n_pairs, model.doc_length), dtype=np.int64)
    for c in range(model.n_concepts):
        mask = concepts == c
        count = int(mask.sum())
        if count:
            d1[mask] = rng.choice(model.vocab_size, size=(count, model.doc_length), p=model.emissions[c])
            d2[mask] = rng.choice(model.vocab_size, size=(count, model.doc_length), p=model.emissions[c])
    return [
        (tuple(int(s) for s in a), tuple(int(s) for s in b)) for a, b in zip(d1, d2)
    ]


class FrequencyLearner:
    """Scale-invariant smoothed document-frequency estimator.

    p_hat(d) = (1 - beta) * count_d / n + beta / V^L with beta fixed, so
    repeating the training set scales counts without moving the estimate;
    the repetition plateau is exact, not approximate.
    """

    def __init__(self, n_documents: int, smoothing: float = 0.02):
        if smoothing <= 0.0:
            raise ValueError("smoothing must be positive")
        self.n_documents = n_documents
        self.beta = smoothing / (1.0 + smoothing)
        self.counts = np.zeros(n_documents, dtype=np.float64)
        self.n_seen = 0

    def observe(self, doc_index: int, weight: float = 1.0) -> None:
        self.counts[doc_index] += weight
        self.n_seen += weight

    def prob_table(self) -> np.ndarray:
        uniform = 1.0 / self.n_documents
        if self.n_seen == 0:
            return np.full(self.n_documents, uniform)
        freq = self.counts / self.n_seen
        return (1.0 - self.beta) * freq + self.beta * uniform


def cross_entropy(true_table: np.ndarray, estimate_table: np.ndarray) -> float:
    """Exact expected negative log-likelihood under the true document law."""
    return float(-(true_table @ np.log(estimate_table)))


@dataclass
class SimulationConfig:
    """Pinned defaults for the three-regime comparison (seeded, deterministic)."""

    n_concepts: int = 4
    vocab_size: int = 8
    doc_length: int = 3
    prior_concentration: float = 5.0
    emission_concentration: float = 0.15
    n_real: int = 192
    budget_docs: int = 4096
    synthetic_docs: int = 1536
    learner_smoothing: float = 0.02
    synthesizer_order: int = 1
    synthesizer_smoothing: float = 0.05
    synthesizer_top_p: float = 1.0
    synthesizer_temperature: float = 1.0
    checkpoint_every: int = 192
    heldout_size: int | None = None  # None = exact expectation over V^L
    seed: int = 5

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SimulationReport:
    checkpoints: list[int]
    curves: dict[str, list[float]]
    config: dict
    entropy: float
    seeds: dict[str, int] = field(default_factory=dict)


def _synthesize_documents(
    cfg: SimulationConfig,
    model: ConceptModel,
    real_docs: np.ndarray,
    real_concepts: np.ndarray,
    seed: int,
) -> list[tuple[int, ...]]:
    """Pair same-concept real documents, fit the synthesizer, sample to volume.

    Pairing by the (known) generating concept mirrors perfect curation; only
    real documents enter the synthesizer.  Samples shorter than the document
    length (early end-of-document) are dropped and redrawn, standing in for
    the post-synthesis filter.
    """
    by_concept: dict[int, list[int]] = {}
    for i, c in enumerate(real_concepts):
        by_concept.setdefault(int(c), []).append(i)
    pairs = []
    for members in by_concept.values():
        for i in members:
            for j in members:
                if i != j:
                    pairs.append((tuple(real_docs[i]), tuple(real_docs[j])))
    if not pairs:
        raise ValueError("real set yields no same-concept pairs; increase n_real")
    synth_model = ConditionalNgramModel(
        order=cfg.synthesizer_order,
        feature_buckets=cfg.vocab_size,
        smoothing=cfg.synthesizer_smoothing,
    ).fit(pairs)

    rng = random.Random(seed)
    vocab = synth_model.vocabulary
    out: list[tuple[int, ...]] = []
    attempts = 0
    max_attempts = cfg.synthetic_docs * 50
    while len(out) < cfg.synthetic_docs and attempts < max_attempts:
        attempts += 1
        d1 = tuple(real_docs[rng.randrange(real_docs.shape[0])])
        tokens: list[int] = []
        ok = True
        for _ in range(cfg.doc_length):
            dist = synth_model.next_token_dist(d1, tokens)
            dist = apply_temperature(dist, cfg.synthesizer_temperature)
            dist = nucleus_filter(dist, cfg.synthesizer_top_p)
            cum = np.cumsum(dist)
            cum[-1] = 1.0
            tok = vocab[int(np.searchsorted(cum, rng.random(), side="right"))]
            if tok == EOD:
                ok = False
                break
            tokens.append(tok)
        if ok:
            out.append(tuple(tokens))
    if len(out) < cfg.synthetic_docs:
        raise RuntimeError("synthesizer failed to reach the requested volume")
    return out


class _DocView:
    """Adapter giving token-count/id access over fixed-length documents."""

    def __init__(self, ids: list[int], doc_length: int):
        self._ids = ids
        self._len = doc_length

    def ids(self) -> list[int]:
        return list(self._ids)

    def token_count(self, doc_id: int) -> int:
        return self._len


def run_simulation(config: SimulationConfig | None = None) -> SimulationReport:
    """Compute-matched comparison: repeated real vs +synthetic vs fresh draws."""
    cfg = config or SimulationConfig()
    if cfg.budget_docs < cfg.n_real:
        raise ValueError("budget must cover at least one pass over the real set")
    if not 0 <= cfg.synthetic_docs <= cfg.budget_docs:
        raise ValueError("synthetic volume must lie within the budget")

    model = ConceptModel.random(
        cfg.n_concepts,
        cfg.vocab_size,
        cfg.doc_length,
        seed=cfg.seed,
        prior_concentration=cfg.prior_concentration,
        emission_concentration=cfg.emission_concentration,
    )
    docs = enumerate_documents(model)
    doc_index = {d: i for i, d in enumerate(docs)}
    true_table = marginal_table(model)

    if cfg.heldout_size is None:
        eval_table = true_table
    else:
        held, _ = sample_documents(
            model, cfg.heldout_size, np.random.default_rng(cfg.seed + 17)
        )
        eval_table = np.zeros_like(true_table)
        for row in held:
            eval_table[doc_index[tuple(int(s) for s in row)]] += 1.0
        eval_table /= eval_table.sum()

    rng = np.random.default_rng(cfg.seed + 1)
    real_docs, real_concepts = sample_documents(model, cfg.n_real, rng)
    real_tuples = [tuple(int(s) for s in row) for row in real_docs]

    L = cfg.doc_length
    curves: dict[str, list[float]] = {}
    checkpoints = list(range(cfg.checkpoint_every, cfg.budget_docs + 1, cfg.checkpoint_every))
    seeds = {"model": cfg.seed, "real": cfg.seed + 1}

    for regime in REGIMES:
        learner = FrequencyLearner(model.n_documents, smoothing=cfg.learner_smoothing)
        if regime == ORACLE:
            fresh, _ = sample_documents(model, cfg.budget_docs, np.random.default_rng(cfg.seed + 2))
            stream = [tuple(int(s) for s in row) for row in fresh]
            seeds["oracle"] = cfg.seed + 2
        else:
            synth_docs: list[tuple[int, ...]] = []
            if regime == SYNTHETIC and cfg.synthetic_docs > 0:
                synth_docs = _synthesize_documents(
                    cfg, model, real_docs, real_concepts, seed=cfg.seed + 3
                )
                seeds["synthesizer"] = cfg.seed + 3
            plan = mixture.plan_mixture(
                cfg.budget_docs * L, cfg.n_real * L, len(synth_docs) * L
            )
            real_view = _DocView(list(range(cfg.n_real)), L)
            synth_view = _DocView(list(range(len(synth_docs))), L)
            schedule = mixture.emit_schedule(
                plan,
                real_view,
                synth_view if synth_docs else None,
                seed=cfg.seed + 4,
                block_docs=64,
            )
            stream = [
                real_tuples[doc_id] if tag == mixture.REAL_TAG else synth_docs[doc_id]
                for doc_id, tag in schedule
            ]
        curve = []
        for i, doc in enumerate(stream, 1):
            learner.observe(doc_index[doc])
            if i % cfg.checkpoint_every == 0:
                curve.append(cross_entropy(eval_table, learner.prob_table()))
        curves[regime] = curve

    entropy = float(-(true_table @ np.log(true_table)))
    return SimulationReport(
        checkpoints=checkpoints,
        curves=curves,
        config=cfg.as_dict(),
        entropy=entropy,
        seeds=seeds,
    )


def write_report_csv(path, report: SimulationReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,regime,loss\n")
        for regime in REGIMES:
            for step, loss in zip(report.checkpoints, report.curves[regime]):
                fh.write(f"{step},{regime},{loss:.12f}\n")


def summary_line(report: SimulationReport) -> str:
    finals = {r: report.curves[r][-1] for r in REGIMES}
    return (
        f"final cross-entropy: oracle={finals[ORACLE]:.4f} "
        f"synthetic={finals[SYNTHETIC]:.4f} baseline={finals[BASELINE]:.4f} "
        f"(model entropy {report.entropy:.4f})"
    )


def write_model_spec(model: ConceptModel, path) -> None:
    """Key/value text format: K, V, L, prior, one emission row per concept."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"K {model.n_concepts}\n")
        fh.write(f"V {model.vocab_size}\n")
        fh.write(f"L {model.doc_length}\n")
        fh.write("pi " + " ".join(f"{p:.17g}" for p in model.prior) + "\n")
        for c in range(model.n_concepts):
            fh.write(
                f"emission {c} " + " ".join(f"{p:.17g}" for p in model.emissions[c]) + "\n"
            )


def read_model_spec(path) -> ConceptModel:
    header: dict[str, int] = {}
    prior = None
    rows: dict[int, list[float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] in ("K", "V", "L"):
                header[parts[0]] = int(parts[1])
            elif parts[0] == "pi":
                prior = [float(x) for x in parts[1:]]
            elif parts[0] == "emission":
                rows[int(parts[1])] = [float(x) for x in parts[2:]]
            else:
                raise ValueError(f"unknown model spec line: {parts[0]}")
    if prior is None or set(header) != {"K", "V", "L"}:
        raise ValueError("model spec is missing K/V/L or the prior")
    emissions = np.array([rows[c] for c in range(header["K"])])
    return ConceptModel(prior=np.array(prior), emissions=emissions, doc_length=header["L"])
