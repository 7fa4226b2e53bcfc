"""Stage-per-command pipeline driver.

Each command reads declared inputs, writes declared outputs next to a
`.meta.json` lineage sidecar (role -> input content hash), and refuses to
overwrite existing outputs without --force. Consumers verify that an
artifact's recorded input hashes still match the files they are given and
name the stage to rerun when they do not. Every run logs the resolved
configuration and seed to stderr; nothing time- or host-dependent is ever
written into an artifact, so reruns are byte-identical.

Exit codes: 0 success, 1 usage, 2 data error, 3 backend error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

import importlib

from . import corpus as corpus_mod
from . import ranker as ranker_mod
from . import report as report_mod

# the package re-exports a localize() function under the module's own name,
# so the module object must come from sys.modules, not package attributes
localize_mod = importlib.import_module("codesift.localize")
from .backends import (
    HttpTransport,
    LexicalRerankBackend,
    ProcessTransport,
    RemoteEmbeddingProvider,
    RemoteJudgeBackend,
    RemoteRerankBackend,
    SubstringJudge,
)
from .contrastive import ToyTrainConfig, held_out_mrr, train_toy
from .curation import (
    FilterParams,
    MiningParams,
    audit_pairs,
    build_negative_pools,
    consistency_filter,
    load_curated,
    load_pools,
    write_curated,
    write_pools,
)
from .embedder import StubEmbeddingProvider, VectorStore, embed_corpus, stub_embed
from .errors import BackendError, DataError, LineageError, UsageError
from .rerank import (
    IdentityRerankBackend,
    ListwiseGenParams,
    RerankParams,
    gen_listwise_data,
    rerank_runs,
    write_instances,
)
from .sampler import CurriculumSchedule, emit_batches, write_batches
from .simgraph import SimilarityCache, brute_force_neighbors, compute_neighbors

logger = logging.getLogger("codesift")

# Published parameter defaults; everything is overridable per run.
DEFAULTS = {
    "k": 2,
    "delta": 0.7,
    "gamma": 0.95,
    "pool_size": 100,
    "k_prime": 128,
    "n": 128,
    "m": 15,
    "tau": 0.07,
    "tau_start": 0.05,
    "tau_end": 0.001,
    "window": 10,
    "stride": 5,
    "depth": 100,
    "block": 1024,
    "batch_size": 64,
    "seed": 0,
    "threads": 1,
    "steps": 200,
    "lr": 0.5,
    "feature_dim": 256,
    "embed_dim": 32,
    "eval_every": 50,
    "held_out_fraction": 0.1,
    "metric": "mrr",
    "metric_k": 10,
    "sample_size": 100,
    "audit_seeds": 3,
    "instances_per_tuple": 5,
    "min_s_pos": 0.8,
    "provider": "stub:64",
    "rerank_backend": "identity",
    "judge_backend": "substring",
    "retrieve_k": 100,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path: Path) -> str:
    hasher = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def write_meta(path: Path, stage: str, inputs: dict[str, Path], params: dict, seed) -> None:
    doc = {
        "stage": stage,
        "seed": seed,
        "params": {k: params[k] for k in sorted(params)},
        "inputs": {
            role: {"name": p.name, "sha256": _sha256(p)} for role, p in sorted(inputs.items())
        },
    }
    _meta_path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def check_lineage(artifact: Path, current_inputs: dict[str, Path]) -> None:
    """Verify the artifact's recorded input hashes against the files given now."""
    meta_path = _meta_path(artifact)
    if not meta_path.exists():
        return  # hand-made artifact; nothing recorded to check
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    for role, current in current_inputs.items():
        recorded = meta.get("inputs", {}).get(role)
        if recorded is None:
            continue
        if not current.exists():
            raise DataError(f"missing upstream artifact for role '{role}': {current}")
        if _sha256(current) != recorded["sha256"]:
            raise LineageError(
                f"{artifact.name} was built from a different '{role}' input",
                stage_to_rerun=meta.get("stage", "unknown"),
            )


def _require_input(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    return path


def _prepare_output(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise DataError(f"refusing to overwrite {path}; pass --force to allow")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def make_provider(spec: str):
    """'stub:<d>', 'http://host:port', or 'cmd:<argv...>' (stdio process)."""
    if spec.startswith("stub:"):
        return StubEmbeddingProvider(int(spec.split(":", 1)[1]))
    if spec.startswith("http://") or spec.startswith("https://"):
        return RemoteEmbeddingProvider(HttpTransport(spec), identity=f"http:{spec}")
    if spec.startswith("cmd:"):
        return RemoteEmbeddingProvider(
            ProcessTransport(spec[4:].split()), identity=f"process:{spec[4:]}"
        )
    raise UsageError(f"unknown provider spec {spec!r}")


def make_rerank_backend(spec: str):
    if spec == "identity":
        return IdentityRerankBackend()
    if spec == "lexical":
        return LexicalRerankBackend()
    if spec.startswith("http://") or spec.startswith("https://"):
        return RemoteRerankBackend(HttpTransport(spec))
    if spec.startswith("cmd:"):
        return RemoteRerankBackend(ProcessTransport(spec[4:].split()))
    raise UsageError(f"unknown rerank backend spec {spec!r}")


def make_judge_backend(spec: str):
    if spec == "substring":
        return SubstringJudge()
    if spec == "always-yes":
        from .backends import AlwaysYesJudge

        return AlwaysYesJudge()
    if spec.startswith("http://") or spec.startswith("https://"):
        return RemoteJudgeBackend(HttpTransport(spec))
    if spec.startswith("cmd:"):
        return RemoteJudgeBackend(ProcessTransport(spec[4:].split()))
    raise UsageError(f"unknown judge backend spec {spec!r}")


class Settings:
    """Resolution order: command-line flag, then config file, then default."""

    def __init__(self, namespace: argparse.Namespace, config: dict):
        self._ns = namespace
        self._config = config

    def get(self, key: str):
        value = getattr(self._ns, key, None)
        if value is not None:
            return value
        if key in self._config:
            return self._config[key]
        return DEFAULTS.get(key)

    def resolved(self, keys) -> dict:
        return {key: self.get(key) for key in keys}


def _texts_by_id(records) -> dict[str, str]:
    return {r.id: r.text for r in records}


def _codes_by_id(records) -> dict[str, str]:
    return {r.id: r.code for r in records}


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_ingest(ns, settings: Settings) -> int:
    pairs = _require_input(Path(ns.pairs), "pair file")
    out = _prepare_output(Path(ns.out), ns.force)
    rules = corpus_mod.PrefilterConfig(
        english_ascii_ratio=settings.get("english_ratio") or 0.90,
        min_text_tokens=settings.get("min_text_tokens") or 3,
        parser_cmd=tuple(ns.parser_cmd.split()) if ns.parser_cmd else None,
    )
    result = corpus_mod.ingest_pairs(pairs, language=ns.language)
    kept, prefilter_decisions = corpus_mod.prefilter_corpus(
        result.records, rules, threads=settings.get("threads")
    )
    # one final decision per input record: dedupe verdicts stand, survivors
    # take their prefilter outcome
    by_record = {d.record_id: d for d in prefilter_decisions}
    final_decisions = [
        by_record.get(d.record_id, d) if d.kept else d for d in result.decisions
    ]
    stats = corpus_mod.CorpusStats()
    for decision in final_decisions:
        stats.record(result.languages.get(decision.record_id, "unknown"), decision)

    corpus_mod.write_pairs(kept, out)
    decisions_path = out.with_name(out.stem + ".decisions.jsonl")
    corpus_mod.write_decisions(final_decisions, decisions_path)
    stats_json = out.with_name(out.stem + ".stats.json")
    stats_json.write_text(json.dumps(stats.to_json(), sort_keys=True) + "\n")
    stats_txt = out.with_name(out.stem + ".stats.txt")
    stats_txt.write_text(stats.as_table() + "\n")
    report_mod.save_stats_figure(stats.per_language, out.with_name(out.stem + ".stats.png"))
    params = {"min_text_tokens": rules.min_text_tokens,
              "english_ratio": rules.english_ascii_ratio}
    write_meta(out, "ingest", {"pairs": pairs}, params, settings.get("seed"))
    logger.info("ingest: %d kept of %d", len(kept), stats.ingested)
    print(f"kept {len(kept)} of {stats.ingested} records -> {out}")
    return 0


def cmd_embed(ns, settings: Settings) -> int:
    corpus_path = _require_input(Path(ns.corpus), "corpus file")
    text_out = _prepare_output(Path(ns.text_store), ns.force)
    code_out = _prepare_output(Path(ns.code_store), ns.force)
    records = corpus_mod.load_pairs(corpus_path)
    provider = make_provider(settings.get("provider"))
    batch_size = settings.get("batch_size")
    threads = settings.get("threads")
    embed_corpus(records, provider, "text", batch_size=batch_size, in_flight=threads).save(text_out)
    embed_corpus(records, provider, "code", batch_size=batch_size, in_flight=threads).save(code_out)
    params = {"provider": settings.get("provider"), "batch_size": batch_size}
    for out in (text_out, code_out):
        write_meta(out, "embed", {"corpus": corpus_path}, params, settings.get("seed"))
    print(f"embedded {len(records)} records -> {text_out}, {code_out}")
    return 0


def cmd_neighbors(ns, settings: Settings) -> int:
    text_path = _require_input(Path(ns.text_store), "text store")
    code_path = _require_input(Path(ns.code_store), "code store")
    out = _prepare_output(Path(ns.out), ns.force)
    check_lineage(text_path, {})
    texts = VectorStore.load(text_path)
    codes = VectorStore.load(code_path)
    k_prime = settings.get("k_prime")
    # the cache must support both the filter and the pool construction
    minimum = max(settings.get("k"), settings.get("pool_size") + 1)
    if k_prime < minimum:
        raise DataError(
            f"k_prime={k_prime} below required minimum {minimum} "
            f"(max of filter k and pool_size + 1)"
        )
    if ns.exact_oracle:
        cache = brute_force_neighbors(texts, codes, k_prime=k_prime)
    else:
        cache = compute_neighbors(
            texts, codes, k_prime=k_prime, block=settings.get("block"),
            threads=settings.get("threads"),
        )
    if ns.binary:
        cache.save_binary(out)
    else:
        cache.save_jsonl(out)
    params = {"k_prime": k_prime, "block": settings.get("block")}
    write_meta(out, "neighbors", {"text_store": text_path, "code_store": code_path},
               params, settings.get("seed"))
    print(f"cached top-{k_prime} neighbors for {len(cache.query_ids)} texts -> {out}")
    return 0


def _load_cache(path: Path) -> SimilarityCache:
    if path.suffix == ".bin":
        return SimilarityCache.load_binary(path)
    return SimilarityCache.load_jsonl(path)


def cmd_filter(ns, settings: Settings) -> int:
    cache_path = _require_input(Path(ns.cache), "similarity cache")
    out = _prepare_output(Path(ns.out), ns.force)
    cache = _load_cache(cache_path)
    corpus_ids = None
    if ns.corpus:
        corpus_ids = [r.id for r in corpus_mod.load_pairs(_require_input(Path(ns.corpus), "corpus"))]
        check_lineage(cache_path, {"corpus": Path(ns.corpus)})
    params = FilterParams(k=settings.get("k"), delta=settings.get("delta"))
    curated, reasons = consistency_filter(cache, params, corpus_ids=corpus_ids)
    write_curated(curated, out)
    reasons_path = out.with_name(out.stem + ".reasons.jsonl")
    with reasons_path.open("w", encoding="utf-8") as handle:
        for qid in sorted(reasons):
            handle.write(json.dumps({"query_id": qid, "reasons": reasons[qid]}) + "\n")
    reason_counts: dict[str, int] = {}
    for failed in reasons.values():
        for reason in failed:
            reason_counts[reason] = reason_counts.get(reason, 0) + 1
    summary = {
        "kept": len(curated),
        "dropped": len(reasons),
        "drop_reasons": {k: reason_counts[k] for k in sorted(reason_counts)},
        "k": params.k,
        "delta": params.delta,
    }
    out.with_name(out.stem + ".summary.json").write_text(
        json.dumps(summary, sort_keys=True) + "\n"
    )
    report_mod.save_filter_figure(len(curated), reason_counts,
                                  out.with_name(out.stem + ".png"))
    write_meta(out, "filter", {"cache": cache_path},
               {"k": params.k, "delta": params.delta}, settings.get("seed"))
    print(f"kept {len(curated)} pairs, dropped {len(reasons)} -> {out}")
    return 0


def cmd_mine(ns, settings: Settings) -> int:
    cache_path = _require_input(Path(ns.cache), "similarity cache")
    curated_path = _require_input(Path(ns.curated), "curated file")
    out = _prepare_output(Path(ns.out), ns.force)
    check_lineage(curated_path, {"cache": cache_path})
    cache = _load_cache(cache_path)
    curated = load_curated(curated_path)
    params = MiningParams(gamma=settings.get("gamma"), pool_size=settings.get("pool_size"))
    pools = build_negative_pools(cache, curated, params, seed=settings.get("seed"))
    write_pools(pools, out)
    fallbacks = sum(1 for pool in pools.values() if pool.fallback_used)
    write_meta(out, "mine", {"cache": cache_path, "curated": curated_path},
               {"gamma": params.gamma, "pool_size": params.pool_size}, settings.get("seed"))
    print(f"built {len(pools)} negative pools ({fallbacks} fallbacks) -> {out}")
    return 0


def cmd_sample(ns, settings: Settings) -> int:
    curated_path = _require_input(Path(ns.curated), "curated file")
    pools_path = _require_input(Path(ns.pools), "pools file")
    out = _prepare_output(Path(ns.out), ns.force)
    check_lineage(pools_path, {"curated": curated_path})
    curated = load_curated(curated_path)
    pools = load_pools(pools_path)
    schedule = CurriculumSchedule(
        tau_start=settings.get("tau_start"),
        tau_end=settings.get("tau_end"),
        total_steps=settings.get("steps"),
    )
    batches = emit_batches(
        curated, pools, schedule, n=settings.get("n"), m=settings.get("m"),
        seed=settings.get("seed"),
    )
    count = write_batches(batches, out)
    write_meta(out, "sample", {"curated": curated_path, "pools": pools_path},
               {"n": settings.get("n"), "m": settings.get("m"), "steps": settings.get("steps"),
                "tau_start": schedule.tau_start, "tau_end": schedule.tau_end},
               settings.get("seed"))
    print(f"emitted {count} batches -> {out}")
    return 0


def cmd_train_toy(ns, settings: Settings) -> int:
    corpus_path = _require_input(Path(ns.corpus), "corpus file")
    curated_path = _require_input(Path(ns.curated), "curated file")
    pools_path = _require_input(Path(ns.pools), "pools file")
    out = _prepare_output(Path(ns.out), ns.force)
    check_lineage(pools_path, {"curated": curated_path})
    records = corpus_mod.load_pairs(corpus_path)
    curated = load_curated(curated_path)
    pools = load_pools(pools_path)
    seed = settings.get("seed")
    feature_dim = settings.get("feature_dim")
    m = settings.get("m")

    by_id = {r.id: r for r in records}
    text_features = {r.id: stub_embed(r.text, feature_dim).astype(np.float64) for r in records}
    code_features = {r.id: stub_embed(r.code, feature_dim).astype(np.float64) for r in records}

    rng = np.random.default_rng([seed, 0x73706C69])
    eligible = [c for c in curated if len(pools[c.query_id].entries) >= m]
    if len(eligible) < 2:
        raise DataError("not enough curated queries with full pools to train")
    order = rng.permutation(len(eligible))
    held_count = max(1, int(len(eligible) * settings.get("held_out_fraction")))
    held = [eligible[i].query_id for i in order[:held_count]]
    train = [eligible[i] for i in order[held_count:]]
    if len(train) < settings.get("n"):
        raise DataError(
            f"only {len(train)} training queries for batch size {settings.get('n')}; "
            "lower --n or provide more curated pairs"
        )

    query_features = np.stack([text_features[qid] for qid in held])
    candidate_features = np.stack([code_features[qid] for qid in held])
    gold = list(range(len(held)))

    def eval_fn(w):
        return held_out_mrr(w, query_features, candidate_features, gold, k=10)

    config = ToyTrainConfig(
        feature_dim=feature_dim,
        embed_dim=settings.get("embed_dim"),
        n=settings.get("n"),
        m=m,
        steps=settings.get("steps"),
        tau=settings.get("tau"),
        lr=settings.get("lr"),
        eval_every=settings.get("eval_every"),
        seed=seed,
        tau_start=settings.get("tau_start"),
        tau_end=settings.get("tau_end"),
    )
    result = train_toy(config, text_features, code_features, train, pools, eval_fn=eval_fn)
    result.write_trace(out)
    weights_path = out.with_name(out.stem + ".weights.npy")
    with weights_path.open("wb") as handle:
        np.save(handle, result.weights)
    report_mod.save_trace_figure(result.trace, result.evals, out.with_name(out.stem + ".png"))
    write_meta(out, "train-toy",
               {"corpus": corpus_path, "curated": curated_path, "pools": pools_path},
               {"steps": config.steps, "n": config.n, "m": config.m, "lr": config.lr,
                "tau": config.tau, "feature_dim": config.feature_dim,
                "embed_dim": config.embed_dim}, seed)
    final_mrr = result.evals[-1]["mrr"] if result.evals else float("nan")
    print(f"trained {config.steps} steps; final held-out MRR@10 {final_mrr:.4f} -> {out}")
    return 0


def cmd_retrieve(ns, settings: Settings) -> int:
    text_path = _require_input(Path(ns.text_store), "text store")
    code_path = _require_input(Path(ns.code_store), "code store")
    out = _prepare_output(Path(ns.out), ns.force)
    texts = VectorStore.load(text_path)
    codes = VectorStore.load(code_path)
    index = ranker_mod.SearchIndex(codes)
    k = settings.get("retrieve_k")
    runs = index.search_batch(texts.vectors.astype(np.float64), k=k, query_ids=list(texts.ids))
    ranker_mod.write_run(runs, out)
    if ns.qrels_out:
        qrels_path = _prepare_output(Path(ns.qrels_out), ns.force)
        ranker_mod.write_qrels({qid: {qid} for qid in texts.ids}, qrels_path)
    write_meta(out, "retrieve", {"text_store": text_path, "code_store": code_path},
               {"k": k}, settings.get("seed"))
    print(f"retrieved top-{k} for {len(runs)} queries -> {out}")
    return 0


def cmd_rerank(ns, settings: Settings) -> int:
    run_path = _require_input(Path(ns.run), "run file")
    corpus_path = _require_input(Path(ns.corpus), "corpus file")
    out = _prepare_output(Path(ns.out), ns.force)
    runs = ranker_mod.load_run(run_path)
    records = corpus_mod.load_pairs(corpus_path)
    queries = _texts_by_id(records)
    candidate_texts = _codes_by_id(records)
    params = RerankParams(
        window=settings.get("window"), stride=settings.get("stride"),
        depth=settings.get("depth"),
    )
    backend = make_rerank_backend(settings.get("rerank_backend"))
    reranked = rerank_runs(runs, queries, params, backend, candidate_texts,
                           in_flight=settings.get("threads"))
    ranker_mod.write_run(reranked, out, tag="codesift-rerank")
    write_meta(out, "rerank", {"run": run_path, "corpus": corpus_path},
               {"window": params.window, "stride": params.stride, "depth": params.depth,
                "backend": settings.get("rerank_backend")}, settings.get("seed"))
    print(f"reranked {len(reranked)} queries -> {out}")
    return 0


def cmd_gen_listwise(ns, settings: Settings) -> int:
    curated_path = _require_input(Path(ns.curated), "curated file")
    pools_path = _require_input(Path(ns.pools), "pools file")
    corpus_path = _require_input(Path(ns.corpus), "corpus file")
    out = _prepare_output(Path(ns.out), ns.force)
    check_lineage(pools_path, {"curated": curated_path})
    curated = load_curated(curated_path)
    pools = load_pools(pools_path)
    records = corpus_mod.load_pairs(corpus_path)
    teacher = make_rerank_backend(settings.get("rerank_backend"))
    params = ListwiseGenParams(
        instances_per_tuple=settings.get("instances_per_tuple"),
        min_s_pos=settings.get("min_s_pos"),
        seed=settings.get("seed"),
    )
    instances, skipped = gen_listwise_data(
        curated, pools, _texts_by_id(records), _codes_by_id(records), teacher, params
    )
    write_instances(instances, out)
    write_meta(out, "gen-listwise",
               {"curated": curated_path, "pools": pools_path, "corpus": corpus_path},
               {"instances_per_tuple": params.instances_per_tuple,
                "min_s_pos": params.min_s_pos,
                "teacher": settings.get("rerank_backend")}, settings.get("seed"))
    print(f"generated {len(instances)} listwise instances ({skipped} skipped) -> {out}")
    return 0


def cmd_localize(ns, settings: Settings) -> int:
    snapshot_path = _require_input(Path(ns.snapshot), "snapshot file")
    gold_path = _require_input(Path(ns.gold), "gold file")
    out = _prepare_output(Path(ns.out), ns.force)
    snapshot = localize_mod.load_snapshot(snapshot_path)
    file_of = {f.function_id: f.file_path for f in snapshot}
    gold = localize_mod.load_gold(gold_path, file_of=file_of)
    provider = make_provider(settings.get("provider"))
    store = localize_mod.snapshot_store(snapshot, provider,
                                        batch_size=settings.get("batch_size"))
    backend_spec = settings.get("rerank_backend")
    backend = None if backend_spec == "none" else make_rerank_backend(backend_spec)
    params = RerankParams(window=settings.get("window"), stride=settings.get("stride"),
                          depth=settings.get("depth"))
    with out.open("w", encoding="utf-8") as handle:
        for labels in gold:
            ranked = localize_mod.localize(
                labels.issue, snapshot, provider, depth=settings.get("depth"),
                rerank_params=params, rerank_backend=backend, store=store,
                instance_id=labels.instance_id,
            )
            handle.write(json.dumps(
                {"instance_id": labels.instance_id, "ranked_function_ids": ranked.ids()},
                sort_keys=True) + "\n")
    write_meta(out, "localize", {"snapshot": snapshot_path, "gold": gold_path},
               {"depth": settings.get("depth"), "provider": settings.get("provider"),
                "backend": backend_spec}, settings.get("seed"))
    print(f"localized {len(gold)} instances -> {out}")
    return 0


def cmd_eval(ns, settings: Settings) -> int:
    out = _prepare_output(Path(ns.out), ns.force)
    if ns.task == "retrieval":
        run_path = _require_input(Path(ns.run), "run file")
        qrels_path = _require_input(Path(ns.qrels), "qrels file")
        check_lineage(run_path, {})
        runs = ranker_mod.load_run(run_path)
        qrels = ranker_mod.load_qrels(qrels_path)
        for run in runs:
            qrels.setdefault(run.query_id, set())
        report = ranker_mod.compute_metrics(
            runs, qrels, settings.get("metric"), settings.get("metric_k")
        )
        out.write_text(json.dumps(report.to_json(), sort_keys=True) + "\n")
        label = f"{report.metric.upper()}@{report.k}"
        out.with_suffix(".txt").write_text(f"{label} mean {report.mean:.6f} "
                                           f"over {len(report.per_query)} queries\n")
        report_mod.save_metric_figure(report, out.with_suffix(".png"))
        write_meta(out, "eval", {"run": run_path, "qrels": qrels_path},
                   {"metric": settings.get("metric"), "k": settings.get("metric_k")},
                   settings.get("seed"))
        print(f"{label} = {report.mean:.6f} -> {out}")
        return 0

    predictions_path = _require_input(Path(ns.predictions), "predictions file")
    gold_path = _require_input(Path(ns.gold), "gold file")
    snapshot_path = _require_input(Path(ns.snapshot), "snapshot file")
    check_lineage(predictions_path, {"snapshot": snapshot_path, "gold": gold_path})
    snapshot = localize_mod.load_snapshot(snapshot_path)
    file_of = {f.function_id: f.file_path for f in snapshot}
    gold = {g.instance_id: g for g in localize_mod.load_gold(gold_path, file_of=file_of)}
    predictions = {}
    with predictions_path.open("r", encoding="utf-8") as handle:
        for raw in handle:
            if raw.strip():
                doc = json.loads(raw)
                predictions[doc["instance_id"]] = doc["ranked_function_ids"]
    reports = {
        mode: localize_mod.eval_localization(
            predictions, gold, file_of, mode=mode,
            known_function_ids=set(file_of),
        )
        for mode in ("any", "complete")
    }
    payload = {mode: reports[mode].to_json() for mode in reports}
    out.write_text(json.dumps(payload, sort_keys=True) + "\n")
    out.with_suffix(".txt").write_text(
        "\n\n".join(reports[mode].as_table() for mode in ("any", "complete")) + "\n"
    )
    report_mod.save_localization_figure(reports["any"], out.with_suffix(".png"))
    write_meta(out, "eval",
               {"predictions": predictions_path, "gold": gold_path, "snapshot": snapshot_path},
               {"task": "localization"}, settings.get("seed"))
    table = reports["any"]
    print(
        "file top-1/2/3 = "
        + "/".join(f"{table.file_accuracy[k]:.3f}" for k in (1, 2, 3))
        + "; function top-5/10 = "
        + "/".join(f"{table.function_accuracy[k]:.3f}" for k in (5, 10))
        + f" -> {out}"
    )
    return 0


def cmd_audit(ns, settings: Settings) -> int:
    curated_path = _require_input(Path(ns.curated), "curated file")
    corpus_path = _require_input(Path(ns.corpus), "corpus file")
    out = _prepare_output(Path(ns.out), ns.force)
    curated = load_curated(curated_path)
    records = {r.id: r for r in corpus_mod.load_pairs(corpus_path)}
    judge = make_judge_backend(settings.get("judge_backend"))
    seeds = tuple(range(settings.get("audit_seeds")))
    report = audit_pairs(curated, records, judge,
                         sample_size=settings.get("sample_size"), seeds=seeds)
    out.write_text(json.dumps(report.to_json(), sort_keys=True) + "\n")
    out.with_suffix(".txt").write_text(report.as_table() + "\n")
    report_mod.save_audit_figure(report, out.with_suffix(".png"))
    write_meta(out, "audit", {"curated": curated_path, "corpus": corpus_path},
               {"sample_size": settings.get("sample_size"), "seeds": list(seeds),
                "judge": settings.get("judge_backend")}, settings.get("seed"))
    print(f"{report.percent_correct:.1f}% judged correct -> {out}")
    return 0


# --------------------------------------------------------------------------
# parser wiring
# --------------------------------------------------------------------------


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--seed", type=int, help="global random seed")
    parser.add_argument("--threads", type=int, help="intra-stage parallelism bound")
    parser.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> _Parser:
    parser = _Parser(prog="codesift", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate, dedupe, and prefilter a pair file")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--language")
    p.add_argument("--min-text-tokens", type=int, dest="min_text_tokens")
    p.add_argument("--english-ratio", type=float, dest="english_ratio")
    p.add_argument("--parser-cmd", dest="parser_cmd")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="embed a corpus into text and code stores")
    p.add_argument("--corpus", required=True)
    p.add_argument("--text-store", required=True, dest="text_store")
    p.add_argument("--code-store", required=True, dest="code_store")
    p.add_argument("--provider")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    _add_common(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("neighbors", help="compute the top-K' similarity cache")
    p.add_argument("--text-store", required=True, dest="text_store")
    p.add_argument("--code-store", required=True, dest="code_store")
    p.add_argument("--out", required=True)
    p.add_argument("--k-prime", type=int, dest="k_prime")
    p.add_argument("--block", type=int)
    p.add_argument("--k", type=int, help="filter k the cache must support")
    p.add_argument("--pool-size", type=int, dest="pool_size")
    p.add_argument("--binary", action="store_true", help="write the binary cache variant")
    p.add_argument("--exact-oracle", action="store_true", dest="exact_oracle",
                   help="use the full-matrix oracle (small corpora only)")
    _add_common(p)
    p.set_defaults(func=cmd_neighbors)

    p = sub.add_parser("filter", help="rank + threshold consistency filtering")
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--corpus", help="enables referential-integrity checking")
    p.add_argument("--k", type=int)
    p.add_argument("--delta", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("mine", help="build false-negative-filtered hard-negative pools")
    p.add_argument("--cache", required=True)
    p.add_argument("--curated", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gamma", type=float)
    p.add_argument("--pool-size", type=int, dest="pool_size")
    _add_common(p)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("sample", help="emit curriculum training batches")
    p.add_argument("--curated", required=True)
    p.add_argument("--pools", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--tau-start", type=float, dest="tau_start")
    p.add_argument("--tau-end", type=float, dest="tau_end")
    _add_common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train-toy", help="train the toy bi-encoder on curated pairs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--curated", required=True)
    p.add_argument("--pools", required=True)
    p.add_argument("--out", required=True, help="trace file path")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--tau-start", type=float, dest="tau_start")
    p.add_argument("--tau-end", type=float, dest="tau_end")
    p.add_argument("--feature-dim", type=int, dest="feature_dim")
    p.add_argument("--embed-dim", type=int, dest="embed_dim")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--held-out-fraction", type=float, dest="held_out_fraction")
    _add_common(p)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("retrieve", help="dense retrieval of codes for every text")
    p.add_argument("--text-store", required=True, dest="text_store")
    p.add_argument("--code-store", required=True, dest="code_store")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, dest="retrieve_k")
    p.add_argument("--qrels-out", dest="qrels_out",
                   help="also write identity qrels (each text's own code is relevant)")
    _add_common(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("rerank", help="sliding-window listwise reranking of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", dest="rerank_backend")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--depth", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("gen-listwise", help="teacher-labeled listwise training data")
    p.add_argument("--curated", required=True)
    p.add_argument("--pools", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--teacher", dest="rerank_backend")
    p.add_argument("--instances-per-tuple", type=int, dest="instances_per_tuple")
    p.add_argument("--min-s-pos", type=float, dest="min_s_pos")
    _add_common(p)
    p.set_defaults(func=cmd_gen_listwise)

    p = sub.add_parser("localize", help="issue-to-function localization over a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--gold", required=True, help="gold file; issues are the queries")
    p.add_argument("--out", required=True)
    p.add_argument("--provider")
    p.add_argument("--backend", dest="rerank_backend",
                   help="'none' disables reranking")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--depth", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("eval", help="retrieval metrics or localization accuracy")
    p.add_argument("--task", choices=("retrieval", "localization"), required=True)
    p.add_argument("--run")
    p.add_argument("--qrels")
    p.add_argument("--metric", choices=("mrr", "ndcg", "recall"))
    p.add_argument("--k", type=int, dest="metric_k")
    p.add_argument("--predictions")
    p.add_argument("--gold")
    p.add_argument("--snapshot")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("audit", help="judge-based pair-correctness audit")
    p.add_argument("--curated", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--judge", dest="judge_backend")
    p.add_argument("--sample-size", type=int, dest="sample_size")
    p.add_argument("--audit-seeds", type=int, dest="audit_seeds")
    _add_common(p)
    p.set_defaults(func=cmd_audit)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        config = {}
        if getattr(ns, "config", None):
            config_path = Path(ns.config)
            if not config_path.exists():
                raise UsageError(f"config file not found: {config_path}")
            config = json.loads(config_path.read_text(encoding="utf-8"))
            if not isinstance(config, dict):
                raise UsageError("config file must hold a JSON object")
        settings = Settings(ns, config)
        resolved = {key: settings.get(key) for key in sorted(DEFAULTS)}
        logger.info("command=%s seed=%s resolved config: %s", ns.command,
                    settings.get("seed"), json.dumps(resolved, sort_keys=True))
        return ns.func(ns, settings)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except LineageError as exc:
        print(f"lineage error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
