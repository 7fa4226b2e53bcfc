"""Consistency filtering, hard-negative pools, and pair-correctness audits.

A pair survives filtering when its own code ranks within the top k of the
text's neighbor scores (strictly-greater counting, ties broken by code id
ascending) and the pair score clears the absolute threshold delta. Negative
pools then keep the strongest neighbors whose score stays at or below
gamma * s_pos, cutting candidates so close to the positive that they are
likely false negatives.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .corpus import PairRecord
from .errors import BackendError, DataError, ReferentialIntegrityError
from .simgraph import SimilarityCache


@dataclass(frozen=True)
class FilterParams:
    k: int = 2
    delta: float = 0.7

    def __post_init__(self):
        if self.k < 1:
            raise DataError(f"k must be >= 1, got {self.k}")
        if not -1.0 < self.delta < 1.0:
            raise DataError(f"delta must lie in (-1, 1), got {self.delta}")


@dataclass(frozen=True)
class CuratedPair:
    query_id: str
    positive_id: str
    s_pos: float
    rank: int  # 1-based: codes scoring strictly higher, plus id-earlier ties, plus one


@dataclass(frozen=True)
class MiningParams:
    gamma: float = 0.95
    pool_size: int = 100  # max negatives retained per query (P)

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise DataError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.pool_size < 1:
            raise DataError(f"pool_size must be >= 1, got {self.pool_size}")


@dataclass
class NegativePool:
    query_id: str
    entries: list[tuple[str, float]]  # (code_id, score), score non-increasing
    fallback_used: bool = False


def positive_rank(
    query_id: str, s_pos: np.float32, neighbor_ids: np.ndarray, neighbor_scores: np.ndarray
) -> int:
    """1-based rank of the pair's own code among the text's neighbors."""
    above = 0
    for nid, score in zip(neighbor_ids, neighbor_scores):
        if nid == query_id:
            continue  # the positive itself is never its own competitor
        if score > s_pos or (score == s_pos and str(nid) < query_id):
            above += 1
    return above + 1


def consistency_filter(
    cache: SimilarityCache,
    params: FilterParams | None = None,
    corpus_ids: Sequence[str] | None = None,
) -> tuple[list[CuratedPair], dict[str, list[str]]]:
    """Keep pairs ranking within top-k with s_pos above delta.

    Returns the curated pairs plus per-query drop reasons (rank_fail,
    threshold_fail, or both). Deterministic function of (cache, params).
    """
    params = params or FilterParams()
    if cache.k_prime < params.k:
        raise DataError(
            f"cache was built with k_prime={cache.k_prime} < filter k={params.k}"
        )
    if corpus_ids is not None:
        known = set(corpus_ids)
        for qid in cache.query_ids:
            if qid not in known:
                raise ReferentialIntegrityError(
                    f"cache query {qid!r} is not present in the corpus"
                )

    curated: list[CuratedPair] = []
    reasons: dict[str, list[str]] = {}
    for i, qid in enumerate(cache.query_ids):
        s_pos = cache.s_pos[i]
        rank = positive_rank(qid, s_pos, cache.neighbor_ids[i], cache.neighbor_scores[i])
        failed = []
        if rank > params.k:
            failed.append("rank_fail")
        if not float(s_pos) > params.delta:
            failed.append("threshold_fail")
        if failed:
            reasons[qid] = failed
        else:
            curated.append(
                CuratedPair(query_id=qid, positive_id=qid, s_pos=float(s_pos), rank=rank)
            )
    return curated, reasons


def false_negative_cutoff(gamma: float, s_pos: float) -> float:
    """Scores above this are treated as false negatives and removed."""
    return float(gamma) * float(s_pos)


def _fallback_rng(seed: int, query_id: str) -> np.random.Generator:
    qid_key = int.from_bytes(hashlib.blake2b(query_id.encode("utf-8"), digest_size=8).digest(), "big")
    return np.random.default_rng([seed, 0x706F6F6C, qid_key])


def build_negative_pools(
    cache: SimilarityCache,
    curated: Sequence[CuratedPair],
    params: MiningParams | None = None,
    seed: int = 0,
) -> dict[str, NegativePool]:
    """Per curated query: strongest neighbors at or below the gamma cutoff.

    The positive is always excluded. A query whose neighbors all exceed the
    cutoff gets a seeded uniform fallback pool (scores recorded as 0.0) so the
    curated pair stays trainable; fallback_used flags it for audit.
    """
    params = params or MiningParams()
    pools: dict[str, NegativePool] = {}
    for pair in curated:
        if pair.query_id not in cache:
            raise ReferentialIntegrityError(
                f"curated query {pair.query_id!r} missing from similarity cache"
            )
        neighbor_ids, neighbor_scores = cache.neighbors_of(pair.query_id)
        cutoff = false_negative_cutoff(params.gamma, cache.s_pos_of(pair.query_id))
        entries: list[tuple[str, float]] = []
        for nid, score in zip(neighbor_ids, neighbor_scores):
            nid = str(nid)
            if nid == pair.positive_id:
                continue
            if float(score) <= cutoff:
                entries.append((nid, float(score)))
            if len(entries) == params.pool_size:
                break
        if entries:
            pools[pair.query_id] = NegativePool(pair.query_id, entries, fallback_used=False)
            continue

        over_cutoff = {
            str(nid)
            for nid, score in zip(neighbor_ids, neighbor_scores)
            if float(score) > cutoff
        }
        eligible = sorted(set(cache.code_ids) - {pair.positive_id} - over_cutoff)
        rng = _fallback_rng(seed, pair.query_id)
        take = min(params.pool_size, len(eligible))
        chosen = sorted(rng.choice(len(eligible), size=take, replace=False).tolist())
        entries = [(eligible[i], 0.0) for i in chosen]
        pools[pair.query_id] = NegativePool(pair.query_id, entries, fallback_used=True)
    return pools


class JudgeBackend(Protocol):
    """Verdict on whether a code snippet correctly implements a query; 'yes' or 'no'."""

    def judge(self, query: str, code: str) -> str: ...


@dataclass
class AuditReport:
    """Mean percent-correct across seeds, overall and per language."""

    sample_size: int
    seeds: tuple[int, ...]
    percent_correct: float
    per_language: dict[str, float]
    per_seed: dict[int, float]
    judged: int
    failures: int
    unparseable: int

    def to_json(self) -> dict:
        return {
            "sample_size": self.sample_size,
            "seeds": list(self.seeds),
            "percent_correct": self.percent_correct,
            "per_language": {k: self.per_language[k] for k in sorted(self.per_language)},
            "per_seed": {str(k): v for k, v in sorted(self.per_seed.items())},
            "judged": self.judged,
            "failures": self.failures,
            "unparseable": self.unparseable,
        }

    def as_table(self) -> str:
        lines = [f"{'corpus / language':<24} {'% correct':>10}"]
        for lang in sorted(self.per_language):
            lines.append(f"{lang:<24} {self.per_language[lang]:>10.1f}")
        lines.append(f"{'overall':<24} {self.percent_correct:>10.1f}")
        lines.append(
            f"(sample={self.sample_size}, seeds={len(self.seeds)}, "
            f"judged={self.judged}, failures={self.failures})"
        )
        return "\n".join(lines)


def audit_pairs(
    pairs: Sequence[CuratedPair],
    corpus: Mapping[str, PairRecord],
    judge: JudgeBackend,
    sample_size: int = 100,
    seeds: Sequence[int] = (0, 1, 2),
) -> AuditReport:
    """Sample curated pairs per seed and ask the judge whether each code
    answers its query; unparseable verdicts count as 'no', backend failures
    are excluded from the denominator and reported."""
    if sample_size < 1:
        raise DataError("audit sample size must be >= 1")
    if not pairs:
        raise DataError("no curated pairs to audit")

    per_seed: dict[int, float] = {}
    lang_correct: dict[str, int] = {}
    lang_total: dict[str, int] = {}
    judged = failures = unparseable = 0

    for seed in seeds:
        rng = np.random.default_rng([seed, 0x61756469])
        take = min(sample_size, len(pairs))
        picked = rng.choice(len(pairs), size=take, replace=False)
        correct = total = 0
        for idx in sorted(picked.tolist()):
            pair = pairs[idx]
            record = corpus.get(pair.query_id)
            if record is None:
                raise ReferentialIntegrityError(
                    f"curated query {pair.query_id!r} missing from corpus"
                )
            try:
                verdict = judge.judge(record.text, record.code)
            except BackendError:
                failures += 1
                continue
            judged += 1
            answer = str(verdict).strip().lower()
            if answer not in ("yes", "no"):
                unparseable += 1
                answer = "no"
            total += 1
            lang_total[record.language] = lang_total.get(record.language, 0) + 1
            if answer == "yes":
                correct += 1
                lang_correct[record.language] = lang_correct.get(record.language, 0) + 1
        per_seed[seed] = 100.0 * correct / total if total else 0.0

    per_language = {
        lang: 100.0 * lang_correct.get(lang, 0) / lang_total[lang] for lang in lang_total
    }
    mean_pct = sum(per_seed.values()) / len(per_seed) if per_seed else 0.0
    return AuditReport(
        sample_size=sample_size,
        seeds=tuple(seeds),
        percent_correct=mean_pct,
        per_language=per_language,
        per_seed=per_seed,
        judged=judged,
        failures=failures,
        unparseable=unparseable,
    )


def write_curated(curated: Iterable[CuratedPair], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for pair in curated:
            doc = {
                "query_id": pair.query_id,
                "positive_id": pair.positive_id,
                "s_pos": pair.s_pos,
                "rank": pair.rank,
            }
            handle.write(json.dumps(doc, sort_keys=True) + "\n")


def load_curated(path: str | Path) -> list[CuratedPair]:
    pairs = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for raw in handle:
            raw = raw.strip()
            if raw:
                doc = json.loads(raw)
                pairs.append(
                    CuratedPair(
                        query_id=doc["query_id"],
                        positive_id=doc["positive_id"],
                        s_pos=float(doc["s_pos"]),
                        rank=int(doc["rank"]),
                    )
                )
    return pairs


def write_pools(pools: Mapping[str, NegativePool], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for qid in sorted(pools):
            pool = pools[qid]
            doc = {
                "query_id": pool.query_id,
                "entries": [[cid, score] for cid, score in pool.entries],
                "fallback_used": pool.fallback_used,
            }
            handle.write(json.dumps(doc, sort_keys=True) + "\n")


def load_pools(path: str | Path) -> dict[str, NegativePool]:
    pools: dict[str, NegativePool] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for raw in handle:
            raw = raw.strip()
            if raw:
                doc = json.loads(raw)
                pools[doc["query_id"]] = NegativePool(
                    query_id=doc["query_id"],
                    entries=[(str(cid), float(score)) for cid, score in doc["entries"]],
                    fallback_used=bool(doc["fallback_used"]),
                )
    return pools
