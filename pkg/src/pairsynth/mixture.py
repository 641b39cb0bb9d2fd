"""Compute-matched mixture planning and deterministic schedule emission.

A plan decomposes a token budget into a single pass over the synthetic corpus
(no synthetic document is ever repeated) plus as many real passes as the
remainder buys, in exact rational arithmetic.  Schedules interleave the two
streams block-proportionally and are byte-identical for a fixed seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator

SCHEMA_VERSION = 1
DEFAULT_BLOCK_DOCS = 1024

REAL_TAG = "real"
SYNTHETIC_TAG = "synthetic"


class TokenTotalMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class MixturePlan:
    budget_tokens: int
    real_tokens: int
    synthetic_tokens: int
    real_epochs: Fraction
    synthetic_fraction: Fraction


def plan_mixture(budget_tokens: int, real_tokens: int, synthetic_tokens: int) -> MixturePlan:
    """Exact rational decomposition of the budget into real repeats + synthetic."""
    budget_tokens = int(budget_tokens)
    real_tokens = int(real_tokens)
    synthetic_tokens = int(synthetic_tokens)
    if budget_tokens <= 0:
        raise ValueError("budget must be positive")
    if real_tokens <= 0:
        raise ValueError("real token count must be positive")
    if synthetic_tokens < 0:
        raise ValueError("synthetic token count must be non-negative")
    if synthetic_tokens > budget_tokens:
        raise ValueError(
            f"synthetic tokens ({synthetic_tokens}) exceed the budget ({budget_tokens})"
        )
    return MixturePlan(
        budget_tokens=budget_tokens,
        real_tokens=real_tokens,
        synthetic_tokens=synthetic_tokens,
        real_epochs=Fraction(budget_tokens - synthetic_tokens, real_tokens),
        synthetic_fraction=Fraction(synthetic_tokens, budget_tokens),
    )


def _check_totals(label: str, view, expected: int) -> None:
    total = sum(view.token_count(i) for i in view.ids())
    biggest = max((view.token_count(i) for i in view.ids()), default=0)
    if abs(total - expected) > biggest:
        raise TokenTotalMismatchError(
            f"{label} corpus holds {total} tokens but the plan expects {expected} "
            f"(allowed slack: one document = {biggest})"
        )


def emit_schedule(
    plan: MixturePlan,
    real,
    synthetic=None,
    seed: int = 0,
    block_docs: int = DEFAULT_BLOCK_DOCS,
) -> list[tuple[int, str]]:
    """Ordered (doc_id, provenance) stream realizing the plan.

    Real passes are fresh seeded permutations; the final partial pass stops at
    the first document that reaches the real token sub-budget.  The single
    synthetic pass is shuffled once and spread block-proportionally.
    """
    if block_docs < 1:
        raise ValueError("block_docs must be >= 1")
    rng = random.Random(seed)

    _check_totals("real", real, plan.real_tokens)
    if plan.synthetic_tokens > 0:
        if synthetic is None:
            raise ValueError("plan allocates synthetic tokens but no synthetic corpus given")
        _check_totals("synthetic", synthetic, plan.synthetic_tokens)

    real_ids = list(real.ids())
    real_budget = plan.budget_tokens - plan.synthetic_tokens
    real_stream: list[int] = []
    emitted = 0
    while emitted < real_budget:
        perm = list(real_ids)
        rng.shuffle(perm)
        for doc_id in perm:
            if emitted >= real_budget:
                break
            real_stream.append(doc_id)
            emitted += real.token_count(doc_id)

    synth_stream: list[int] = []
    if synthetic is not None and plan.synthetic_tokens > 0:
        synth_stream = list(synthetic.ids())
        rng.shuffle(synth_stream)

    total_docs = len(real_stream) + len(synth_stream)
    if total_docs == 0:
        return []
    schedule: list[tuple[int, str]] = []
    ri = si = 0
    synth_total = len(synth_stream)
    emitted_positions = 0
    while ri < len(real_stream) or si < synth_total:
        block = min(block_docs, total_docs - emitted_positions)
        # cumulative rounding keeps every block's synthetic share proportional
        target_s = round(Fraction(synth_total * (emitted_positions + block), total_docs))
        take_s = min(max(target_s - si, 0), synth_total - si, block)
        take_r = min(block - take_s, len(real_stream) - ri)
        if take_r + take_s < block:  # one stream ran dry; fill from the other
            take_s = min(block - take_r, synth_total - si)
        slots = [REAL_TAG] * take_r + [SYNTHETIC_TAG] * take_s
        rng.shuffle(slots)
        for tag in slots:
            if tag == REAL_TAG:
                schedule.append((real_stream[ri], REAL_TAG))
                ri += 1
            else:
                schedule.append((synth_stream[si], SYNTHETIC_TAG))
                si += 1
        emitted_positions += len(slots)
        if not slots:
            break
    return schedule


def write_schedule(path, schedule: Iterable[tuple[int, str]]) -> None:
    """Newline-delimited ``doc_id<TAB>provenance`` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, tag in schedule:
            fh.write(f"{doc_id}\t{tag}\n")


def read_schedule(path) -> Iterator[tuple[int, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                doc_id, tag = line.rstrip("\n").split("\t")
                yield int(doc_id), tag


def write_plan(path, plan: MixturePlan, seed: int | None = None) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "budget_tokens": plan.budget_tokens,
        "real_tokens": plan.real_tokens,
        "synthetic_tokens": plan.synthetic_tokens,
        "real_epochs": str(plan.real_epochs),
        "synthetic_fraction": str(plan.synthetic_fraction),
    }
    if seed is not None:
        payload["seed"] = seed
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_plan(path) -> MixturePlan:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return plan_mixture(
        payload["budget_tokens"], payload["real_tokens"], payload["synthetic_tokens"]
    )


def format_fraction(value: Fraction) -> str:
    """Exact decimal when the denominator is 2^a * 5^b, else 'p/q'."""
    num, den = value.numerator, value.denominator
    twos = fives = 0
    rest = den
    while rest % 2 == 0:
        rest //= 2
        twos += 1
    while rest % 5 == 0:
        rest //= 5
        fives += 1
    if rest != 1:
        return f"{num}/{den}"
    places = max(twos, fives)
    scaled = num * 10**places // den
    if places == 0:
        return str(scaled)
    sign = "-" if scaled < 0 else ""
    digits = str(abs(scaled)).rjust(places + 1, "0")
    frac = digits[-places:].rstrip("0")
    return sign + digits[:-places] + (f".{frac}" if frac else "")
