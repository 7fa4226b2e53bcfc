"""Exact dense retrieval over a vector store plus standard ranking metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .embedder import VectorStore
from .errors import DataError, DimensionMismatchError
from .simgraph import pair_scores

METRICS = ("mrr", "ndcg", "recall")


@dataclass
class RankedList:
    """Ordered (candidate id, score) results; scores non-increasing, ties by id."""

    query_id: str
    entries: list[tuple[str, float]]

    def __post_init__(self):
        ids = [cid for cid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate candidate in run for query {self.query_id!r}")

    def ids(self) -> list[str]:
        return [cid for cid, _ in self.entries]


@dataclass
class MetricReport:
    metric: str
    k: int
    per_query: dict[str, float]
    mean: float
    empty_qrels: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "metric": f"{self.metric.upper()}@{self.k}",
            "mean": self.mean,
            "per_query": {qid: self.per_query[qid] for qid in sorted(self.per_query)},
            "empty_qrels": sorted(self.empty_qrels),
        }


class SearchIndex:
    """Immutable brute-force cosine index over a code store."""

    def __init__(self, store: VectorStore):
        self.store = store
        self._id_arr = np.array(store.ids, dtype=str)

    def search(self, query: np.ndarray, k: int, query_id: str = "q") -> RankedList:
        return self.search_batch(query[None, :], k, [query_id])[0]

    def search_batch(
        self, queries: np.ndarray, k: int, query_ids: Sequence[str]
    ) -> list[RankedList]:
        """Exact top-k by cosine; equal scores are ordered by candidate id."""
        if k < 1:
            raise DataError(f"k must be >= 1, got {k}")
        queries = np.asarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[1] != self.store.dimension:
            raise DimensionMismatchError(
                f"query shape {queries.shape} vs index dimension {self.store.dimension}"
            )
        norms = np.linalg.norm(queries, axis=1)
        if np.any(norms == 0.0):
            raise DataError("zero-norm query vector")
        unit = queries / norms[:, None]  # stays float64; only scores quantize
        scores = pair_scores(unit, self.store.vectors)
        take = min(k, len(self.store.ids))
        results = []
        for qid, row in zip(query_ids, scores):
            order = np.lexsort((self._id_arr, -row.astype(np.float64)))[:take]
            entries = [(str(self._id_arr[i]), float(row[i])) for i in order]
            results.append(RankedList(query_id=qid, entries=entries))
        return results


def search(index: SearchIndex, query: np.ndarray, k: int, query_id: str = "q") -> RankedList:
    return index.search(query, k, query_id)


def _first_relevant_rank(run: RankedList, relevant: set[str], k: int) -> int | None:
    for rank, (cid, _) in enumerate(run.entries[:k], start=1):
        if cid in relevant:
            return rank
    return None


def _mrr_at_k(run: RankedList, relevant: set[str], k: int) -> float:
    rank = _first_relevant_rank(run, relevant, k)
    return 0.0 if rank is None else 1.0 / rank


def _ndcg_at_k(run: RankedList, relevant: set[str], k: int) -> float:
    dcg = 0.0
    for rank, (cid, _) in enumerate(run.entries[:k], start=1):
        if cid in relevant:
            dcg += 1.0 / math.log2(rank + 1)
    ideal_hits = min(len(relevant), k)
    if ideal_hits == 0:
        return 0.0
    ideal = sum(1.0 / math.log2(rank + 1) for rank in range(1, ideal_hits + 1))
    return dcg / ideal


def _recall_at_k(run: RankedList, relevant: set[str], k: int) -> float:
    if not relevant:
        return 0.0
    hits = sum(1 for cid, _ in run.entries[:k] if cid in relevant)
    return hits / len(relevant)


_METRIC_FNS = {"mrr": _mrr_at_k, "ndcg": _ndcg_at_k, "recall": _recall_at_k}


def compute_metrics(
    runs: Sequence[RankedList],
    qrels: Mapping[str, set[str]],
    metric: str,
    k: int,
) -> MetricReport:
    """MRR@k / nDCG@k (binary gains) / Recall@k averaged over queries.

    Every run query must appear in the qrels; queries with an empty relevant
    set score 0 and are flagged in the report rather than silently dropped.
    """
    metric = metric.lower()
    if metric not in METRICS:
        raise DataError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    fn = _METRIC_FNS[metric]
    per_query: dict[str, float] = {}
    empty: list[str] = []
    for run in runs:
        if run.query_id not in qrels:
            raise DataError(f"no qrels for query {run.query_id!r}")
        relevant = qrels[run.query_id]
        if not relevant:
            empty.append(run.query_id)
        per_query[run.query_id] = fn(run, relevant, k)
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    return MetricReport(metric=metric, k=k, per_query=per_query, mean=mean, empty_qrels=empty)


def write_run(runs: Sequence[RankedList], path: str | Path, tag: str = "codesift") -> None:
    """Trec-style run file: query_id candidate_id rank score tag."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for run in runs:
            for rank, (cid, score) in enumerate(run.entries, start=1):
                handle.write(f"{run.query_id} {cid} {rank} {score:.6f} {tag}\n")


def load_run(path: str | Path) -> list[RankedList]:
    by_query: dict[str, list[tuple[int, str, float]]] = {}
    order: list[str] = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            parts = raw.split()
            if len(parts) != 5:
                raise DataError(f"run file line {line_no}: expected 5 fields, got {len(parts)}")
            qid, cid, rank, score = parts[0], parts[1], int(parts[2]), float(parts[3])
            if qid not in by_query:
                by_query[qid] = []
                order.append(qid)
            by_query[qid].append((rank, cid, score))
    runs = []
    for qid in order:
        rows = sorted(by_query[qid])
        runs.append(RankedList(query_id=qid, entries=[(cid, score) for _, cid, score in rows]))
    return runs


def write_qrels(qrels: Mapping[str, set[str]], path: str | Path) -> None:
    """query_id candidate_id relevance, binary."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for qid in sorted(qrels):
            for cid in sorted(qrels[qid]):
                handle.write(f"{qid} {cid} 1\n")


def load_qrels(path: str | Path) -> dict[str, set[str]]:
    qrels: dict[str, set[str]] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            parts = raw.split()
            if len(parts) != 3:
                raise DataError(f"qrels line {line_no}: expected 3 fields, got {len(parts)}")
            qid, cid, rel = parts
            qrels.setdefault(qid, set())
            if int(rel) > 0:
                qrels[qid].add(cid)
    return qrels
