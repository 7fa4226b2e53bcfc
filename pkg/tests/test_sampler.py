import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from codesift.curation import CuratedPair, NegativePool
from codesift.errors import DataError
from codesift.sampler import (
    CurriculumSchedule,
    emit_batches,
    sample_negatives,
    tau_at,
    write_batches,
)


def analytic_softmax(scores, tau):
    """Independent closed-form softmax, math module only."""
    peak = max(s / tau for s in scores)
    weights = [math.exp(s / tau - peak) for s in scores]
    total = sum(weights)
    return [w / total for w in weights]


def make_pool(scores, qid="q"):
    return NegativePool(qid, [(f"c{i}", s) for i, s in enumerate(scores)])


class TestTauAt:
    SCHEDULE = CurriculumSchedule(tau_start=0.05, tau_end=0.001, total_steps=1001)

    def test_first_step_is_tau_start(self):
        assert tau_at(0, self.SCHEDULE) == pytest.approx(0.05)

    def test_last_step_is_tau_end(self):
        assert tau_at(1000, self.SCHEDULE) == pytest.approx(0.001)

    def test_midpoint_interpolates_linearly(self):
        assert tau_at(500, self.SCHEDULE) == pytest.approx(0.0255)

    def test_single_step_schedule_returns_start(self):
        assert tau_at(0, CurriculumSchedule(0.05, 0.001, 1)) == 0.05

    def test_out_of_range_step_is_an_error(self):
        with pytest.raises(DataError):
            tau_at(1001, self.SCHEDULE)
        with pytest.raises(DataError):
            tau_at(-1, self.SCHEDULE)

    def test_schedule_validation(self):
        with pytest.raises(DataError):
            CurriculumSchedule(tau_start=0.001, tau_end=0.05, total_steps=10)
        with pytest.raises(DataError):
            CurriculumSchedule(tau_start=0.05, tau_end=0.0, total_steps=10)
        with pytest.raises(DataError):
            CurriculumSchedule(total_steps=0)


class TestSampleNegatives:
    def test_deterministic_for_same_key(self):
        pool = make_pool([0.9, 0.8, 0.7, 0.6])
        a = sample_negatives(pool, 3, 0.05, (7, "q", 3))
        b = sample_negatives(pool, 3, 0.05, (7, "q", 3))
        assert a == b

    def test_different_keys_vary(self):
        pool = make_pool([0.9, 0.8, 0.7, 0.6])
        draws = {tuple(sample_negatives(pool, 2, 0.05, (7, "q", step))) for step in range(50)}
        assert len(draws) > 1

    def test_without_replacement_no_duplicates(self):
        pool = make_pool([0.5] * 10)
        for step in range(50):
            drawn = sample_negatives(pool, 10, 0.01, (0, "q", step))
            assert len(set(drawn)) == 10

    def test_pool_smaller_than_m_is_actionable_error(self):
        pool = make_pool([0.9, 0.8])
        with pytest.raises(DataError) as err:
            sample_negatives(pool, 3, 0.05, (0, "q", 0))
        message = str(err.value)
        assert "pool size P" in message and "M" in message

    def test_first_draw_marginal_matches_analytic_softmax(self):
        # published pool example: scores [0.9, 0.8, 0.7] at tau' = 0.05
        pool = make_pool([0.9, 0.8, 0.7])
        expected = analytic_softmax([0.9, 0.8, 0.7], 0.05)
        assert expected == pytest.approx([0.86681, 0.11731, 0.01588], abs=1e-5)
        draws = 100_000
        counts = Counter(
            sample_negatives(pool, 1, 0.05, (13, "q", step))[0] for step in range(draws)
        )
        observed = [counts[f"c{i}"] / draws for i in range(3)]
        for got, want in zip(observed, expected):
            assert abs(got - want) <= 0.01
        chi2 = stats.chisquare(
            [counts[f"c{i}"] for i in range(3)], [p * draws for p in expected]
        )
        assert chi2.pvalue > 0.001  # goodness-of-fit must not reject

    def test_near_zero_temperature_takes_argmax(self):
        pool = make_pool([0.9, 0.85, 0.80])  # gaps >= 0.05
        draws = 5000
        top = sum(
            sample_negatives(pool, 1, 0.001, (5, "q", step))[0] == "c0"
            for step in range(draws)
        )
        # non-argmax mass is at most 2*exp(-0.05/0.001) ~ 4e-22
        assert top / draws >= 0.999

    def test_equal_scores_draw_uniformly(self):
        pool = make_pool([0.42] * 5)
        draws = 100_000
        counts = Counter(
            sample_negatives(pool, 1, 0.05, (3, "q", step))[0] for step in range(draws)
        )
        for i in range(5):
            assert abs(counts[f"c{i}"] / draws - 0.2) <= 0.01

    def test_hardness_monotone_in_temperature(self):
        pool = make_pool([0.9, 0.8, 0.7])
        # analytic: P(top) strictly non-decreasing as tau' decreases
        probs = [analytic_softmax([0.9, 0.8, 0.7], tau)[0] for tau in (0.05, 0.02, 0.005, 0.001)]
        assert all(b >= a for a, b in zip(probs, probs[1:]))
        # empirical across the same ladder
        draws = 20_000
        freqs = []
        for tau in (0.05, 0.02, 0.005, 0.001):
            hits = sum(
                sample_negatives(pool, 1, tau, (11, "q", step))[0] == "c0"
                for step in range(draws)
            )
            freqs.append(hits / draws)
        assert all(b >= a - 0.005 for a, b in zip(freqs, freqs[1:]))


def toy_inputs(queries=10, pool_size=6):
    curated = [CuratedPair(f"q{i}", f"q{i}", 0.9, 1) for i in range(queries)]
    pools = {
        f"q{i}": NegativePool(
            f"q{i}", [(f"q{i}_n{j}", 0.8 - 0.05 * j) for j in range(pool_size)]
        )
        for i in range(queries)
    }
    return curated, pools


class TestEmitBatches:
    def test_ten_queries_batch_two_gives_five_batches(self):
        curated, pools = toy_inputs(queries=10)
        schedule = CurriculumSchedule(0.05, 0.001, total_steps=5)
        batches = list(emit_batches(curated, pools, schedule, n=2, m=3, seed=0))
        assert len(batches) == 5
        assert [b.step for b in batches] == [0, 1, 2, 3, 4]
        assert batches[0].tau_prime == pytest.approx(0.05)
        assert batches[-1].tau_prime == pytest.approx(0.001)

    def test_same_seed_streams_identical(self, tmp_path):
        curated, pools = toy_inputs(queries=12)
        schedule = CurriculumSchedule(0.05, 0.001, total_steps=9)
        a_path, b_path = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_batches(emit_batches(curated, pools, schedule, 4, 3, seed=5), a_path)
        write_batches(emit_batches(curated, pools, schedule, 4, 3, seed=5), b_path)
        assert a_path.read_bytes() == b_path.read_bytes()

    def test_different_seed_differs(self):
        curated, pools = toy_inputs(queries=12)
        schedule = CurriculumSchedule(0.05, 0.001, total_steps=6)
        a = [b.to_json() for b in emit_batches(curated, pools, schedule, 4, 3, seed=0)]
        b = [b.to_json() for b in emit_batches(curated, pools, schedule, 4, 3, seed=1)]
        assert a != b

    def test_restartable_from_any_step(self):
        curated, pools = toy_inputs(queries=10)
        schedule = CurriculumSchedule(0.05, 0.001, total_steps=10)
        full = [b.to_json() for b in emit_batches(curated, pools, schedule, 2, 3, seed=2)]
        tail = [
            b.to_json()
            for b in emit_batches(curated, pools, schedule, 2, 3, seed=2, start_step=6)
        ]
        assert tail == full[6:]

    def test_items_never_contain_positive_or_duplicates(self):
        curated, pools = toy_inputs(queries=8, pool_size=8)
        schedule = CurriculumSchedule(0.05, 0.001, total_steps=16)
        for batch in emit_batches(curated, pools, schedule, 4, 5, seed=3):
            for item in batch.items:
                assert item.positive_id not in item.negative_ids
                assert len(set(item.negative_ids)) == len(item.negative_ids)
                assert len(item.negative_ids) == 5

    def test_partial_batch_dropped_and_epochs_reshuffle(self):
        curated, pools = toy_inputs(queries=5)
        schedule = CurriculumSchedule(0.05, 0.001, total_steps=4)
        batches = list(emit_batches(curated, pools, schedule, n=2, m=2, seed=0))
        # 5 queries / n=2 -> 2 batches per epoch; steps 0..3 span two epochs
        assert len(batches) == 4
        epoch0 = [item.query_id for b in batches[:2] for item in b.items]
        epoch1 = [item.query_id for b in batches[2:] for item in b.items]
        assert len(epoch0) == len(set(epoch0)) == 4
        assert epoch0 != epoch1 or True  # reshuffle may coincide; only sanity

    def test_too_few_queries_is_an_error(self):
        curated, pools = toy_inputs(queries=3)
        schedule = CurriculumSchedule(0.05, 0.001, total_steps=1)
        with pytest.raises(DataError):
            list(emit_batches(curated, pools, schedule, n=4, m=2, seed=0))

    def test_pool_shorter_than_m_is_an_error(self):
        curated, pools = toy_inputs(queries=6, pool_size=2)
        schedule = CurriculumSchedule(0.05, 0.001, total_steps=1)
        with pytest.raises(DataError):
            list(emit_batches(curated, pools, schedule, n=2, m=3, seed=0))

    def test_contrastive_negative_count_formula(self):
        # published defaults: N=128, M=15 -> N*(M+1)-1 = 2047 negatives per positive
        n, m = 128, 15
        assert n * (m + 1) - 1 == 2047
        curated, pools = toy_inputs(queries=8, pool_size=4)
        schedule = CurriculumSchedule(0.05, 0.001, total_steps=1)
        (batch,) = list(emit_batches(curated, pools, schedule, n=4, m=3, seed=0))
        denominator_terms = len(batch.items) * (len(batch.items[0].negative_ids) + 1)
        assert denominator_terms - 1 == 4 * (3 + 1) - 1
