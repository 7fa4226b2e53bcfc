"""Acceptance suite: one test per criterion, at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v` for one pass/fail line per
criterion (each test also prints an explicit PASS line, visible with -s).
"""
import json
import math
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from scipy import stats as scipy_stats

from codesift.backends import ScoreOracleTeacher
from codesift.cli import main as cli_main
from codesift.contrastive import ContrastiveBatchTensors, infonce_grad, infonce_loss
from codesift.curation import (
    CuratedPair,
    FilterParams,
    MiningParams,
    NegativePool,
    build_negative_pools,
    consistency_filter,
)
from codesift.embedder import StubEmbeddingProvider, embed_corpus
from codesift.experiment import run_curriculum_experiment, summarize
from codesift.localize import eval_localization
from codesift.ranker import RankedList, compute_metrics
from codesift.rerank import (
    ListwiseGenParams,
    RerankParams,
    gen_listwise_data,
    sliding_rerank,
)
from codesift.sampler import sample_negatives
from codesift.simgraph import compute_neighbors
from codesift.synth import make_localization_benchmark, make_pair_corpus

from test_contrastive import finite_difference_grad
from test_curation import brute_force_curation, make_cache
from test_ranker import reference_metric
from test_rerank import ranked_list
from test_sampler import analytic_softmax, make_pool

FIXTURES = Path(__file__).parent.parent / "fixtures"


def test_filtering_oracle_equivalence():
    """Blocked top-K' pipeline == full-matrix brute force on 20 random corpora."""
    started = time.monotonic()
    sizes = [120, 200, 300, 400, 500]
    deltas = [0.4, 0.5, 0.6, 0.7]
    ks = [1, 2, 3, 2]
    mismatches = 0
    for trial in range(20):
        n = sizes[trial % len(sizes)]
        filter_params = FilterParams(k=ks[trial % len(ks)], delta=deltas[trial % len(deltas)])
        mining_params = MiningParams(gamma=0.95, pool_size=20)
        records = make_pair_corpus(n=n, seed=trial)
        provider = StubEmbeddingProvider(64)
        texts = embed_corpus(records, provider, "text")
        codes = embed_corpus(records, provider, "code")
        cache = compute_neighbors(texts, codes, k_prime=64, block=((trial % 5) * 13) + 1)
        curated, _ = consistency_filter(cache, filter_params)
        pools = build_negative_pools(cache, curated, mining_params, seed=trial)

        oracle_curated, oracle_pools = brute_force_curation(
            texts.vectors, codes.vectors, list(texts.ids), filter_params, mining_params, trial
        )
        if {c.query_id: c.rank for c in curated} != oracle_curated:
            mismatches += 1
            continue
        for qid, pool in pools.items():
            assert not pool.fallback_used
            expected = [(cid, float(np.float32(s))) for cid, s in oracle_pools[qid]]
            if pool.entries != expected:
                mismatches += 1
                break
    elapsed = time.monotonic() - started
    assert mismatches == 0
    assert elapsed < 30.0, f"oracle equivalence took {elapsed:.1f}s (budget 30s)"
    print(f"PASS: filtering oracle equivalence (20 corpora, 0 mismatches, {elapsed:.1f}s)")


def test_paper_parameter_conformance():
    """Hand-constructed 6-pair fixture at k=2, delta=0.7, gamma=0.95."""
    cache = make_cache(
        {
            # kept: one neighbor above -> rank 2, s_pos above threshold
            "q_keep_rank2": (0.75, [("other_a", 0.80), ("q_keep_rank2", 0.75), ("x0", 0.40)]),
            # kept at rank 1 with pool cutoff behavior: 0.8 * 0.95 = 0.76
            "q_keep_rank1": (0.80, [("q_keep_rank1", 0.80), ("hot", 0.77), ("ok", 0.75),
                                    ("cold", 0.10)]),
            # dropped: two neighbors strictly above
            "q_rank_fail": (0.75, [("other_a", 0.85), ("other_b", 0.80),
                                   ("q_rank_fail", 0.75)]),
            # dropped: rank 1 but below the absolute threshold
            "q_threshold_fail": (0.69, [("q_threshold_fail", 0.69), ("x1", 0.30)]),
            # dropped for both reasons
            "q_both_fail": (0.10, [("other_a", 0.85), ("other_b", 0.80),
                                   ("q_both_fail", 0.10)]),
            # kept, but every neighbor above the cutoff -> fallback pool
            "q_fallback": (0.80, [("q_fallback", 0.80), ("h1", 0.79), ("h2", 0.78)]),
        },
        code_ids=["q_keep_rank2", "q_keep_rank1", "q_rank_fail", "q_threshold_fail",
                  "q_both_fail", "q_fallback", "other_a", "other_b", "hot", "ok",
                  "cold", "x0", "x1", "h1", "h2", "spare1", "spare2", "spare3"],
    )
    curated, reasons = consistency_filter(cache, FilterParams(k=2, delta=0.7))
    kept = {c.query_id: c for c in curated}
    assert set(kept) == {"q_keep_rank2", "q_keep_rank1", "q_fallback"}
    assert kept["q_keep_rank2"].rank == 2
    assert kept["q_keep_rank1"].rank == 1
    assert reasons == {
        "q_rank_fail": ["rank_fail"],
        "q_threshold_fail": ["threshold_fail"],
        "q_both_fail": ["rank_fail", "threshold_fail"],
    }
    pools = build_negative_pools(cache, curated, MiningParams(gamma=0.95, pool_size=3), seed=0)
    # 0.77 exceeds the 0.76 cutoff and is removed; 0.75 is retained
    assert [cid for cid, _ in pools["q_keep_rank1"].entries] == ["ok", "cold"]
    assert not pools["q_keep_rank1"].fallback_used
    # every neighbor above cutoff: uniform seeded fallback, flagged
    assert pools["q_fallback"].fallback_used
    assert len(pools["q_fallback"].entries) == 3
    assert {cid for cid, _ in pools["q_fallback"].entries} & {"h1", "h2", "q_fallback"} == set()
    print("PASS: paper-parameter conformance (k=2, delta=0.7, gamma=0.95 fixtures)")


def test_sampling_distribution_and_curriculum_monotonicity():
    """First-draw marginals match the analytic softmax; hardness is monotone."""
    pool = make_pool([0.9, 0.8, 0.7])
    expected = analytic_softmax([0.9, 0.8, 0.7], 0.05)
    draws = 100_000
    counts = Counter(
        sample_negatives(pool, 1, 0.05, (13, "q", step))[0] for step in range(draws)
    )
    observed = [counts[f"c{i}"] / draws for i in range(3)]
    for got, want in zip(observed, expected):
        assert abs(got - want) <= 0.01, f"marginal off: {got} vs {want}"
    chi2 = scipy_stats.chisquare(
        [counts[f"c{i}"] for i in range(3)], [p * draws for p in expected]
    )
    assert chi2.pvalue > 0.001

    frequencies = []
    for tau in (0.05, 0.02, 0.005, 0.001):
        hits = sum(
            sample_negatives(pool, 1, tau, (29, "q", step))[0] == "c0"
            for step in range(20_000)
        )
        frequencies.append(hits / 20_000)
    assert all(b >= a - 1e-9 for a, b in zip(frequencies, frequencies[1:])), frequencies
    print(f"PASS: sampling distribution (chi2 p={chi2.pvalue:.3f}, "
          f"hardness ladder {['%.3f' % f for f in frequencies]})")


def test_infonce_correctness():
    """Uniform-batch closed form and finite-difference gradient agreement."""
    started = time.monotonic()
    for n, m in ((2, 1), (4, 3), (8, 15)):
        d = 8
        row = np.zeros(d)
        row[0] = 1.0
        batch = ContrastiveBatchTensors(
            anchors=np.tile(row, (n, 1)),
            positives=np.tile(row, (n, 1)),
            negatives=np.tile(row, (n * m, 1)),
        )
        assert abs(infonce_loss(batch) - math.log(n * (m + 1))) <= 1e-6

    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, 4))
        f_dim, d = 12, 6
        w = rng.normal(scale=0.4, size=(f_dim, d))
        a = rng.normal(size=(n, f_dim))
        p = rng.normal(size=(n, f_dim))
        g = rng.normal(size=(n * m, f_dim))
        _, analytic = infonce_grad(w, a, p, g, tau=0.07)
        numeric = finite_difference_grad(w, a, p, g, tau=0.07)
        scale = np.maximum(np.abs(numeric), 1e-3)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / scale)))
    elapsed = time.monotonic() - started
    assert worst <= 1e-4, f"worst relative gradient error {worst:.2e}"
    assert elapsed < 60.0, f"InfoNCE checks took {elapsed:.1f}s (budget 60s)"
    print(f"PASS: InfoNCE correctness (max rel grad err {worst:.2e}, {elapsed:.1f}s)")


def test_toy_curriculum_benefit():
    """Curation + curriculum beats the in-batch baseline by >= 0.05 MRR@10."""
    started = time.monotonic()
    results = [run_curriculum_experiment(seed) for seed in range(5)]
    summary = summarize(results)
    elapsed = time.monotonic() - started
    assert summary["mean_gap"] >= 0.05, summary
    assert elapsed < 600.0, f"experiment took {elapsed:.1f}s (budget 600s)"
    print(
        "PASS: toy curriculum benefit "
        f"(curriculum {summary['mean_mrr_curriculum']:.3f} vs baseline "
        f"{summary['mean_mrr_baseline']:.3f}, mean gap {summary['mean_gap']:+.3f}, "
        f"{elapsed:.0f}s)"
    )


def test_metric_correctness():
    """Spot values hold exactly; 50 random fixtures match the reference at 1e-10."""
    run = RankedList("q", [("a", 0.9), ("b", 0.8), ("gold", 0.7), ("c", 0.6)])
    assert compute_metrics([run], {"q": {"gold"}}, "mrr", 100).mean == pytest.approx(1.0 / 3)
    run = RankedList("q", [("a", 0.9), ("gold", 0.8), ("b", 0.7)])
    assert compute_metrics([run], {"q": {"gold"}}, "ndcg", 10).mean == pytest.approx(
        1.0 / math.log2(3.0)
    )

    rng = np.random.default_rng(123)
    for fixture in range(50):
        runs, qrels = [], {}
        for qi in range(int(rng.integers(1, 6))):
            qid = f"q{fixture}_{qi}"
            ids = [f"d{j}" for j in range(int(rng.integers(1, 50)))]
            rng.shuffle(ids)
            runs.append(RankedList(qid, [(c, 1.0 - 0.001 * i) for i, c in enumerate(ids)]))
            qrels[qid] = set(
                f"d{j}" for j in rng.choice(70, size=int(rng.integers(0, 6)), replace=False)
            )
        k = int(rng.integers(1, 25))
        for metric in ("mrr", "ndcg", "recall"):
            report = compute_metrics(runs, qrels, metric, k)
            for r in runs:
                want = reference_metric(r.ids(), qrels[r.query_id], metric, k)
                assert abs(report.per_query[r.query_id] - want) <= 1e-10
    print("PASS: metric correctness (spot values exact, 50 fixtures at 1e-10)")


class _ChaosBackend:
    """Adversarial backend: scrambled, duplicated, alien, or empty responses."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def rank(self, query, candidates):
        identifiers = [ident for ident, _ in candidates]
        roll = self.rng.random()
        if roll < 0.1:
            return ""
        picks = self.rng.integers(-2, len(identifiers) + 3,
                                  size=self.rng.integers(0, 2 * len(identifiers) + 1))
        return " ".join(f"[{p}]" for p in picks)


def test_sliding_window_property():
    """Published window geometry: promotion, identity, and permutation safety."""
    params = RerankParams(window=10, stride=5, depth=100)
    texts = {f"d{i}": f"text {i}" for i in range(160)}
    texts["gold"] = "the gold text"

    from codesift.backends import IdentityRerankBackend, OracleRerankBackend

    oracle = OracleRerankBackend({"the gold text"})
    for position in range(1, 101):
        ids = [f"d{i}" for i in range(100)]
        ids[position - 1] = "gold"
        out = sliding_rerank("q", ranked_list(ids), params, oracle, texts)
        assert out.ids()[0] == "gold", f"not promoted from rank {position}"

    ranked = ranked_list([f"d{i}" for i in range(100)])
    identity_out = sliding_rerank("q", ranked, params, IdentityRerankBackend(), texts)
    assert identity_out.ids() == ranked.ids()

    chaos = _ChaosBackend(seed=5)
    rng = np.random.default_rng(6)
    for trial in range(10_000):
        n = int(rng.integers(1, 160))
        ids = [f"d{i}" for i in rng.permutation(n)]
        out = sliding_rerank("q", ranked_list(ids), params, chaos, texts)
        assert sorted(out.ids()) == sorted(ids), f"not a permutation on trial {trial}"
    print("PASS: sliding-window property (100/100 promotions, identity, 10^4 permutations)")


def test_listwise_data_generation():
    """10 tuples x 5 instances, window sizes in [3,10], oracle-sorted rankings."""
    curated, pools, query_texts, code_texts, scores = [], {}, {}, {}, {}
    for i in range(10):
        qid = f"q{i}"
        curated.append(CuratedPair(qid, qid, 0.9, 1))
        query_texts[qid] = f"query text {i}"
        code_texts[qid] = f"positive code {i}"
        scores[(query_texts[qid], code_texts[qid])] = 0.9
        entries = []
        for j in range(12):
            cid = f"{qid}_n{j}"
            code_texts[cid] = f"negative {j} of query {i}"
            score = 0.8 - 0.02 * j
            entries.append((cid, score))
            scores[(query_texts[qid], code_texts[cid])] = score
        pools[qid] = NegativePool(qid, entries)

    teacher = ScoreOracleTeacher(scores)
    instances, skipped = gen_listwise_data(
        curated, pools, query_texts, code_texts, teacher,
        ListwiseGenParams(instances_per_tuple=5, seed=9),
    )
    assert skipped == 0
    assert len(instances) == 50
    violations = 0
    for instance in instances:
        size = len(instance.candidates)
        assert 3 <= size <= 10
        identifiers = sorted(ident for ident, _, _ in instance.candidates)
        assert sorted(instance.teacher_ranking) == identifiers
        text_of = {ident: text for ident, _, text in instance.candidates}
        ranked_scores = [
            scores[(instance.query, text_of[ident])] for ident in instance.teacher_ranking
        ]
        if ranked_scores != sorted(ranked_scores, reverse=True):
            violations += 1
    assert violations == 0
    print("PASS: listwise data generation (50 instances, sizes in [3,10], 0 violations)")


def test_localization_harness():
    """20-instance benchmark equals an independently coded oracle exactly."""
    snapshot, labels = make_localization_benchmark(instances=20, seed=8)
    file_of = {f.function_id: f.file_path for f in snapshot}
    rng = np.random.default_rng(21)
    predictions = {}
    for item in labels:
        ids = [f.function_id for f in snapshot]
        rng.shuffle(ids)
        predictions[item.instance_id] = ids
    gold = {item.instance_id: item for item in labels}
    report = eval_localization(predictions, gold, file_of,
                               known_function_ids=set(file_of))

    for k in (1, 2, 3):
        hits = 0
        for item in labels:
            seen, ranked_files = set(), []
            for fid in predictions[item.instance_id]:
                if file_of[fid] not in seen:
                    seen.add(file_of[fid])
                    ranked_files.append(file_of[fid])
            if any(path in item.gold_files for path in ranked_files[:k]):
                hits += 1
        assert report.file_accuracy[k] == hits / 20
    for k in (5, 10):
        hits = sum(
            1 for item in labels
            if any(fid in item.gold_function_ids for fid in predictions[item.instance_id][:k])
        )
        assert report.function_accuracy[k] == hits / 20
    assert report.file_accuracy[1] <= report.file_accuracy[2] <= report.file_accuracy[3]
    assert report.function_accuracy[5] <= report.function_accuracy[10]
    print("PASS: localization harness (20 instances equal hand oracle, monotone in k)")


def _run_fixture_pipeline(workdir: Path) -> list[Path]:
    """Every stage of the pipeline on the bundled 500-pair fixture."""
    w = workdir

    def run(*argv):
        code = cli_main([str(a) for a in argv])
        assert code == 0, f"stage failed: {argv[0]} (exit {code})"

    run("ingest", "--pairs", FIXTURES / "pairs_500.jsonl", "--out", w / "corpus.jsonl")
    run("embed", "--corpus", w / "corpus.jsonl", "--text-store", w / "texts.vs",
        "--code-store", w / "codes.vs")
    run("neighbors", "--text-store", w / "texts.vs", "--code-store", w / "codes.vs",
        "--out", w / "cache.jsonl", "--k-prime", 64, "--pool-size", 30)
    run("filter", "--cache", w / "cache.jsonl", "--corpus", w / "corpus.jsonl",
        "--out", w / "curated.jsonl")
    run("mine", "--cache", w / "cache.jsonl", "--curated", w / "curated.jsonl",
        "--out", w / "pools.jsonl", "--pool-size", 30)
    run("sample", "--curated", w / "curated.jsonl", "--pools", w / "pools.jsonl",
        "--out", w / "batches.jsonl", "--n", 16, "--m", 8, "--steps", 8, "--seed", 3)
    run("train-toy", "--corpus", w / "corpus.jsonl", "--curated", w / "curated.jsonl",
        "--pools", w / "pools.jsonl", "--out", w / "trace.jsonl", "--n", 16, "--m", 8,
        "--steps", 12, "--eval-every", 6, "--seed", 3)
    run("retrieve", "--text-store", w / "texts.vs", "--code-store", w / "codes.vs",
        "--out", w / "run.txt", "--qrels-out", w / "qrels.txt")
    run("rerank", "--run", w / "run.txt", "--corpus", w / "corpus.jsonl",
        "--out", w / "run.rerank.txt", "--backend", "lexical")
    run("gen-listwise", "--curated", w / "curated.jsonl", "--pools", w / "pools.jsonl",
        "--corpus", w / "corpus.jsonl", "--out", w / "instances.jsonl",
        "--teacher", "lexical", "--seed", 3)
    run("localize", "--snapshot", FIXTURES / "snapshot.jsonl", "--gold", FIXTURES / "gold.jsonl",
        "--out", w / "predictions.jsonl", "--provider", "stub:256", "--backend", "lexical")
    run("eval", "--task", "retrieval", "--run", w / "run.rerank.txt",
        "--qrels", w / "qrels.txt", "--metric", "mrr", "--k", 10, "--out", w / "mrr.json")
    run("eval", "--task", "localization", "--predictions", w / "predictions.jsonl",
        "--gold", FIXTURES / "gold.jsonl", "--snapshot", FIXTURES / "snapshot.jsonl",
        "--out", w / "localization.json")
    run("audit", "--curated", w / "curated.jsonl", "--corpus", w / "corpus.jsonl",
        "--out", w / "audit.json", "--sample-size", 40, "--judge", "substring")
    return sorted(p for p in w.rglob("*") if p.is_file())


def test_end_to_end_determinism(tmp_path):
    """Bundled fixture, two runs, byte-identical artifacts; each under 60 s."""
    first_dir, second_dir = tmp_path / "run1", tmp_path / "run2"
    first_dir.mkdir()
    second_dir.mkdir()

    started = time.monotonic()
    first = _run_fixture_pipeline(first_dir)
    first_elapsed = time.monotonic() - started
    assert first_elapsed < 60.0, f"pipeline took {first_elapsed:.1f}s (budget 60s)"

    second = _run_fixture_pipeline(second_dir)
    names_first = [p.relative_to(first_dir) for p in first]
    names_second = [p.relative_to(second_dir) for p in second]
    assert names_first == names_second
    different = [
        str(rel)
        for rel, a, b in zip(names_first, first, second)
        if a.read_bytes() != b.read_bytes()
    ]
    assert different == [], f"artifacts differ between runs: {different}"
    print(
        f"PASS: end-to-end determinism ({len(first)} artifacts byte-identical, "
        f"{first_elapsed:.1f}s per run)"
    )
