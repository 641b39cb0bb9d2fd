"""Operator CLI: each subcommand drives exactly one pipeline stage.

Stages are individually re-runnable and idempotent: given identical inputs
and seeds they produce byte-identical outputs.  Configuration comes from an
optional JSON file plus flags; flags win.  Exit codes: 0 success, 2 missing
input, 3 configuration error, 4 stage failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import ann, concept, embedding, mixture, pairing, quality, synthesis
from . import corpus as corpus_mod
from .judge import JudgeClient

EXIT_OK = 0
EXIT_MISSING_INPUT = 2
EXIT_CONFIG = 3
EXIT_STAGE = 4

SCHEMA_VERSION = 1


class MissingInputError(Exception):
    pass


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse usage problems are config errors
        raise ConfigError(message)


def _require(path, kind="input"):
    if not os.path.exists(path):
        raise MissingInputError(f"{kind} not found: {path}")
    return path


def _parse_count(text) -> int:
    """Accept integers or exact scientific notation like 200e9."""
    from decimal import Decimal, InvalidOperation

    try:
        value = Decimal(str(text))
    except InvalidOperation as exc:
        raise ConfigError(f"not a number: {text!r}") from exc
    if value != value.to_integral_value():
        raise ConfigError(f"token count must be an integer: {text!r}")
    return int(value)


def _apply_config(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Layer defaults < config file < explicit flags."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        _require(args.config, "config file")
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_conf = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        for key, value in file_conf.items():
            if key not in defaults:
                raise ConfigError(f"unknown config field: {key}")
            merged[key] = value
    for key, default in merged.items():
        if getattr(args, key, None) is None:
            setattr(args, key, default)
    return args


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _stage_manifest(out_dir, stage: str, params: dict) -> None:
    _write_json(
        os.path.join(out_dir, f"{stage}_manifest.json"),
        {"schema_version": SCHEMA_VERSION, "stage": stage, "params": params},
    )


def _load_corpus_dir(corpus_dir) -> corpus_mod.CorpusHandle:
    _require(os.path.join(corpus_dir, "manifest.json"), "corpus manifest")
    manifest = corpus_mod.read_manifest(os.path.join(corpus_dir, "manifest.json"))
    tokens = corpus_mod.read_token_store(
        _require(os.path.join(corpus_dir, "tokens.bin"), "token store"), manifest.ids()
    )
    texts = {}
    with open(_require(os.path.join(corpus_dir, "texts.jsonl"), "text store"), "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                texts[rec["id"]] = rec["text"]
    docs = [
        corpus_mod.Document(id=i, text=texts[i], tokens=tuple(tokens[i]))
        for i in manifest.ids()
    ]
    return corpus_mod.CorpusHandle(docs)


# ---------------------------------------------------------------- subcommands

def _cmd_ingest(args) -> int:
    _require(args.input)
    os.makedirs(args.out_dir, exist_ok=True)
    tokenizer = corpus_mod.HashTokenizer(vocab_size=args.vocab_size, record_pieces=True)
    handle = corpus_mod.ingest_jsonl(
        args.input, tokenizer=tokenizer, max_tokens=args.max_tokens, max_url_len=args.max_url_len
    )
    corpus_mod.write_manifest(handle, os.path.join(args.out_dir, "manifest.json"))
    corpus_mod.write_token_store(handle, os.path.join(args.out_dir, "tokens.bin"))
    corpus_mod.write_vocab(tokenizer, os.path.join(args.out_dir, "vocab.jsonl"))
    with open(os.path.join(args.out_dir, "texts.jsonl"), "w", encoding="utf-8") as fh:
        for doc in handle:
            fh.write(json.dumps({"id": doc.id, "text": doc.text}, sort_keys=True))
            fh.write("\n")
    _stage_manifest(
        args.out_dir,
        "ingest",
        {"input": os.path.basename(args.input), "max_tokens": args.max_tokens,
         "max_url_len": args.max_url_len, "vocab_size": args.vocab_size},
    )
    print(f"ingested {handle.doc_count} documents, {handle.total_tokens} tokens")
    return EXIT_OK


def _cmd_embed_toy(args) -> int:
    handle = _load_corpus_dir(args.corpus_dir)
    os.makedirs(args.out_dir, exist_ok=True)
    ids, matrix = embedding.embed_corpus(handle, dim=args.dim, seed=args.seed)
    embedding.write_matrix(os.path.join(args.out_dir, "embeddings.bin"), matrix)
    embedding.write_ids(os.path.join(args.out_dir, "ids.bin"), ids)
    _stage_manifest(args.out_dir, "embed_toy", {"dim": args.dim, "seed": args.seed, "n": int(ids.shape[0])})
    print(f"embedded {ids.shape[0]} documents at dim {args.dim}")
    return EXIT_OK


def _cmd_index_build(args) -> int:
    matrix = embedding.read_matrix(_require(os.path.join(args.embeddings, "embeddings.bin"), "embedding matrix"))
    ids = embedding.read_ids(_require(os.path.join(args.embeddings, "ids.bin"), "embedding ids"))
    searcher = ann.build_sharded_index(
        ids,
        matrix.astype(np.float64),
        value_shards=args.value_shards,
        n_key_shards=args.key_shards,
        salts=args.salts,
        seed=args.seed,
        leaves=args.leaves,
    )
    ann.save_index(searcher, args.out_dir)
    print(f"indexed {ids.shape[0]} vectors into {args.value_shards} value shard(s)")
    return EXIT_OK


def _cmd_index_search(args) -> int:
    _require(os.path.join(args.index_dir, "manifest.json"), "index manifest")
    searcher = ann.load_index(args.index_dir)
    ids, vectors = ann.all_indexed(searcher)
    probe = None if args.probe_leaves in (None, "default") else args.probe_leaves
    if probe == "all":
        probe = max(s.tree.n_leaves for s in searcher.value_searchers)
    elif probe is not None:
        probe = int(probe)
    with open(args.out, "w", encoding="utf-8") as fh:
        for row, query_id in enumerate(ids):
            results = searcher.search(
                vectors[row],
                k=args.k,
                probe_leaves=probe,
                exclude_id=int(query_id),
                key_shard=searcher.key_shard_of(int(query_id)),
            )
            fh.write(
                json.dumps(
                    {"id": int(query_id), "neighbors": [[i, round(s, 10)] for i, s in results]},
                    sort_keys=True,
                )
            )
            fh.write("\n")
    print(f"searched {ids.shape[0]} queries (k={args.k})")
    return EXIT_OK


def _cmd_pair(args) -> int:
    _require(args.neighbors)
    neighbors = {}
    with open(args.neighbors, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                neighbors[rec["id"]] = [(n[0], n[1]) for n in rec["neighbors"]]
    records = pairing.pair_by_threshold(neighbors, alpha=args.alpha)
    os.makedirs(args.out_dir, exist_ok=True)
    pairing.write_pairs_jsonl(os.path.join(args.out_dir, "pairs_raw.jsonl"), records)
    hist = pairing.similarity_histogram(records, bins=args.histogram_bins)
    pairing.write_histogram_csv(os.path.join(args.out_dir, "similarity_histogram.csv"), hist)
    _stage_manifest(args.out_dir, "pair", {"alpha": args.alpha, "pairs": len(records)})
    print(f"thresholded {len(records)} pairs at alpha {args.alpha}")
    return EXIT_OK


def _cmd_dedup(args) -> int:
    records = pairing.read_pairs_jsonl(_require(args.pairs))
    handle = _load_corpus_dir(args.corpus_dir)
    docs = {doc.id: doc for doc in handle}
    kept = pairing.dedup_pairs(records, docs, width=args.w)
    dataset = pairing.emit_pair_dataset(
        kept,
        docs,
        alpha=args.alpha,
        dedup_width=args.w,
        context_cap=args.context_cap,
        seed=args.seed,
        pairs_before_dedup=len(records),
    )
    os.makedirs(args.out_dir, exist_ok=True)
    pairing.write_pairs_jsonl(os.path.join(args.out_dir, "pairs.jsonl"), dataset.records)
    pairing.write_pair_manifest(os.path.join(args.out_dir, "pairs_manifest.json"), dataset)
    print(
        f"dedup kept {dataset.pairs_after_dedup}/{dataset.pairs_before_dedup} pairs; "
        f"{len(dataset.records)} fit the context cap"
    )
    return EXIT_OK


def _cmd_synth_fit(args) -> int:
    records = pairing.read_pairs_jsonl(_require(args.pairs))
    handle = _load_corpus_dir(args.corpus_dir)
    pairs_tokens = []
    for rec in records:
        if rec.seed_id not in handle or rec.target_id not in handle:
            raise pairing.DanglingDocError(rec.seed_id if rec.seed_id not in handle else rec.target_id)
        pairs_tokens.append((handle.get(rec.seed_id).tokens, handle.get(rec.target_id).tokens))
    model = synthesis.ConditionalNgramModel(
        order=args.order, feature_buckets=args.feature_buckets, smoothing=args.smoothing
    ).fit(pairs_tokens)
    model.save(args.out)
    print(f"fitted order-{args.order} synthesizer on {len(pairs_tokens)} pairs")
    return EXIT_OK


def _cmd_synth_run(args) -> int:
    model = synthesis.ConditionalNgramModel.load(_require(args.model))
    handle = _load_corpus_dir(args.corpus_dir)
    vocab = corpus_mod.read_vocab(_require(os.path.join(args.corpus_dir, "vocab.jsonl"), "vocab"))
    records = synthesis.hierarchical_sample(
        handle,
        model,
        n_docs=args.n_docs,
        seed=args.seed,
        temperature=args.temperature,
        top_p=args.top_p,
        max_tokens=args.max_tokens,
        filter_width=args.filter_w,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    id_base = (max(handle.ids()) if handle.doc_count else 0) + 1
    synthesis.write_synthesis_jsonl(
        os.path.join(args.out_dir, "synthetic.jsonl"), records, vocab, id_base=id_base
    )
    params = {
        "temperature": args.temperature,
        "top_p": args.top_p,
        "max_tokens": args.max_tokens,
        "seed": args.seed,
        "filter_width": args.filter_w,
        "n_docs": args.n_docs,
        "id_base": id_base,
    }
    synthesis.write_synthesis_manifest(os.path.join(args.out_dir, "manifest.json"), records, params)
    kept_docs = [
        corpus_mod.Document(
            id=id_base + rec.record_id,
            text="",
            tokens=rec.tokens,
            provenance=corpus_mod.Provenance.synthetic(rec.seed_id),
        )
        for rec in records
        if rec.filter_status == synthesis.KEPT
    ]
    corpus_mod.write_manifest(
        corpus_mod.CorpusHandle(kept_docs), os.path.join(args.out_dir, "corpus_manifest.json")
    )
    kept = len(kept_docs)
    print(f"synthesized {kept} kept / {len(records) - kept} dropped documents")
    return EXIT_OK


def _cmd_eval(args) -> int:
    handle = _load_corpus_dir(args.corpus_dir)
    pairs = None
    if args.pairs:
        pairs = [(r.seed_id, r.target_id) for r in pairing.read_pairs_jsonl(_require(args.pairs))]
    cfg = quality.QualityConfig(
        duplicate_mode=args.duplicate_mode,
        judge_sample=args.samples_judge,
        factuality_sample=args.samples_factuality,
        duplicate_sample=args.samples_duplicate,
        seed=args.seed,
    )
    client = JudgeClient(args.judge_endpoint) if args.judge_endpoint else None
    report = quality.quality_report(
        handle, pairs=pairs, config=cfg, judge_client=client, run_id=args.run_id
    )
    os.makedirs(args.out_dir, exist_ok=True)
    quality.write_report_csv(os.path.join(args.out_dir, "report.csv"), report)
    summary = quality.format_summary(report)
    with open(os.path.join(args.out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary + "\n")
    _stage_manifest(args.out_dir, "eval", {
        "duplicate_mode": args.duplicate_mode, "seed": args.seed,
        "samples_judge": args.samples_judge, "samples_factuality": args.samples_factuality,
        "samples_duplicate": args.samples_duplicate, "judge": bool(args.judge_endpoint),
    })
    print(summary)
    return EXIT_OK


def _cmd_mixture_plan(args) -> int:
    try:
        plan = mixture.plan_mixture(
            _parse_count(args.budget), _parse_count(args.real), _parse_count(args.synthetic)
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"real_epochs {mixture.format_fraction(plan.real_epochs)}")
    print(f"synthetic_fraction {mixture.format_fraction(100 * plan.synthetic_fraction)}%")
    if args.out:
        mixture.write_plan(args.out, plan)
    return EXIT_OK


def _cmd_mixture_emit(args) -> int:
    plan = mixture.read_plan(_require(args.plan))
    real = corpus_mod.read_manifest(_require(args.real_manifest))
    synthetic = corpus_mod.read_manifest(_require(args.synthetic_manifest)) if args.synthetic_manifest else None
    schedule = mixture.emit_schedule(
        plan, real, synthetic, seed=args.seed, block_docs=args.block_docs
    )
    mixture.write_schedule(args.out, schedule)
    mixture.write_plan(args.out + ".manifest.json", plan, seed=args.seed)
    print(f"scheduled {len(schedule)} documents")
    return EXIT_OK


def _cmd_concept_sim(args) -> int:
    cfg = concept.SimulationConfig(
        n_concepts=args.n_concepts,
        vocab_size=args.vocab_size,
        doc_length=args.doc_length,
        n_real=args.n_real,
        budget_docs=args.budget_docs,
        synthetic_docs=args.synthetic_docs,
        heldout_size=args.heldout,
        seed=args.seed,
    )
    report = concept.run_simulation(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    concept.write_report_csv(os.path.join(args.out_dir, "report.csv"), report)
    _write_json(
        os.path.join(args.out_dir, "sim_manifest.json"),
        {"schema_version": SCHEMA_VERSION, "stage": "concept_sim",
         "config": report.config, "seeds": report.seeds},
    )
    if args.write_model:
        model = concept.ConceptModel.random(
            cfg.n_concepts, cfg.vocab_size, cfg.doc_length, seed=cfg.seed,
            prior_concentration=cfg.prior_concentration,
            emission_concentration=cfg.emission_concentration,
        )
        concept.write_model_spec(model, os.path.join(args.out_dir, "model.txt"))
    print(concept.summary_line(report))
    return EXIT_OK


# ------------------------------------------------------------------- plumbing

_COMMANDS = {}


def _register(name, fn, defaults, flags):
    _COMMANDS[name] = (fn, defaults, flags)


def _build_registry():
    _register("ingest", _cmd_ingest,
              {"max_tokens": corpus_mod.DEFAULT_MAX_TOKENS, "max_url_len": corpus_mod.DEFAULT_MAX_URL_LEN,
               "vocab_size": corpus_mod.DEFAULT_VOCAB_SIZE},
              [("--input", str, True), ("--out-dir", str, True), ("--max-tokens", int, False),
               ("--max-url-len", int, False), ("--vocab-size", int, False)])
    _register("embed-toy", _cmd_embed_toy, {"dim": 64, "seed": 0},
              [("--corpus-dir", str, True), ("--out-dir", str, True), ("--dim", int, False), ("--seed", int, False)])
    _register("index-build", _cmd_index_build,
              {"value_shards": 1, "key_shards": 1, "salts": 1, "seed": 0, "leaves": None},
              [("--embeddings", str, True), ("--out-dir", str, True), ("--value-shards", int, False),
               ("--key-shards", int, False), ("--salts", int, False), ("--seed", int, False), ("--leaves", int, False)])
    _register("index-search", _cmd_index_search, {"k": ann.DEFAULT_TOP_K, "probe_leaves": "default"},
              [("--index-dir", str, True), ("--out", str, True), ("--k", int, False), ("--probe-leaves", str, False)])
    _register("pair", _cmd_pair, {"alpha": pairing.DEFAULT_ALPHA, "histogram_bins": 20},
              [("--neighbors", str, True), ("--out-dir", str, True), ("--alpha", float, False),
               ("--histogram-bins", int, False)])
    _register("dedup", _cmd_dedup,
              {"w": 13, "context_cap": pairing.DEFAULT_CONTEXT_CAP, "seed": 0, "alpha": pairing.DEFAULT_ALPHA},
              [("--pairs", str, True), ("--corpus-dir", str, True), ("--out-dir", str, True),
               ("--w", int, False), ("--context-cap", int, False), ("--seed", int, False), ("--alpha", float, False)])
    _register("synth-fit", _cmd_synth_fit,
              {"order": synthesis.DEFAULT_ORDER, "feature_buckets": synthesis.DEFAULT_FEATURE_BUCKETS,
               "smoothing": synthesis.DEFAULT_SMOOTHING},
              [("--pairs", str, True), ("--corpus-dir", str, True), ("--out", str, True),
               ("--order", int, False), ("--feature-buckets", int, False), ("--smoothing", float, False)])
    _register("synth-run", _cmd_synth_run,
              {"temperature": synthesis.DEFAULT_TEMPERATURE, "top_p": synthesis.DEFAULT_TOP_P,
               "max_tokens": 512, "seed": 0, "filter_w": 13},
              [("--model", str, True), ("--corpus-dir", str, True), ("--out-dir", str, True),
               ("--n-docs", int, True), ("--temperature", float, False), ("--top-p", float, False),
               ("--max-tokens", int, False), ("--seed", int, False), ("--filter-w", int, False)])
    _register("eval", _cmd_eval,
              {"pairs": None, "judge_endpoint": None, "duplicate_mode": "exact", "seed": 0, "run_id": "",
               "samples_judge": quality.DEFAULT_JUDGE_SAMPLE,
               "samples_factuality": quality.DEFAULT_FACTUALITY_SAMPLE,
               "samples_duplicate": quality.DEFAULT_DUPLICATE_SAMPLE},
              [("--corpus-dir", str, True), ("--out-dir", str, True), ("--pairs", str, False),
               ("--judge-endpoint", str, False), ("--duplicate-mode", str, False), ("--seed", int, False),
               ("--run-id", str, False), ("--samples-judge", int, False), ("--samples-factuality", int, False),
               ("--samples-duplicate", int, False)])
    _register("mixture-plan", _cmd_mixture_plan, {"out": None},
              [("--budget", str, True), ("--real", str, True), ("--synthetic", str, True), ("--out", str, False)])
    _register("mixture-emit", _cmd_mixture_emit,
              {"synthetic_manifest": None, "seed": 0, "block_docs": mixture.DEFAULT_BLOCK_DOCS},
              [("--plan", str, True), ("--real-manifest", str, True), ("--synthetic-manifest", str, False),
               ("--out", str, True), ("--seed", int, False), ("--block-docs", int, False)])
    _register("concept-sim", _cmd_concept_sim,
              {"n_concepts": 4, "vocab_size": 8, "doc_length": 3, "n_real": 192, "budget_docs": 4096,
               "synthetic_docs": 1536, "heldout": None, "seed": 5, "write_model": False},
              [("--out-dir", str, True), ("--n-concepts", int, False), ("--vocab-size", int, False),
               ("--doc-length", int, False), ("--n-real", int, False), ("--budget-docs", int, False),
               ("--synthetic-docs", int, False), ("--heldout", int, False), ("--seed", int, False),
               ("--write-model", "store_true", False)])


_build_registry()


def build_parser() -> _Parser:
    parser = _Parser(prog="pairsynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, defaults, flags) in _COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file; flags override it")
        for flag, ftype, required in flags:
            if ftype == "store_true":
                p.add_argument(flag, action="store_true", default=None)
            else:
                p.add_argument(flag, type=ftype, required=required, default=None)
        p.set_defaults(_fn=fn, _defaults=defaults)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args = _apply_config(args, args._defaults)
        return args._fn(args)
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: input not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except Exception as exc:  # stage failure
        print(f"stage failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
