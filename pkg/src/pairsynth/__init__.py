"""Desk-scale toolkit for document pairing, conditional synthesis, and
compute-matched training mixtures.

The pipeline: ingest and clean a document corpus, embed and index it for
inner-product nearest-neighbor search, pair semantically close documents,
fit a conditional synthesizer on the pairs, sample a synthetic corpus,
score it with rule-based and judge-based quality metrics, and plan a
repetition-aware training mixture.  A small exactly-solvable latent-concept
model backs the probabilistic pieces with brute-force oracles.
"""

__version__ = "0.1.0"
