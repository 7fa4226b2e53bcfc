"""Online curriculum negative sampling.

Negatives are drawn from each query's pool by temperature-scaled softmax over
the pool scores. The temperature anneals linearly across training, so early
batches favor diverse/easier negatives and late batches concentrate on the
hardest ones. Draws are without replacement (sequential renormalized softmax)
and every random decision is keyed by (seed, query id, step), which makes the
stream a pure function of its inputs and restartable from any step.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .curation import CuratedPair, NegativePool
from .errors import DataError


@dataclass(frozen=True)
class CurriculumSchedule:
    tau_start: float = 0.05
    tau_end: float = 0.001
    total_steps: int = 1

    def __post_init__(self):
        if not self.tau_start >= self.tau_end > 0.0:
            raise DataError(
                f"need tau_start >= tau_end > 0, got {self.tau_start}, {self.tau_end}"
            )
        if self.total_steps < 1:
            raise DataError(f"total_steps must be >= 1, got {self.total_steps}")


@dataclass(frozen=True)
class BatchItem:
    query_id: str
    positive_id: str
    negative_ids: tuple[str, ...]


@dataclass(frozen=True)
class TrainingBatch:
    step: int
    tau_prime: float
    items: tuple[BatchItem, ...]

    def __post_init__(self):
        sizes = {len(item.negative_ids) for item in self.items}
        if len(sizes) > 1:
            raise DataError("all items in a batch must carry the same negative count")
        for item in self.items:
            if len(set(item.negative_ids)) != len(item.negative_ids):
                raise DataError(f"duplicate negatives for query {item.query_id!r}")
            if item.positive_id in item.negative_ids:
                raise DataError(f"positive leaked into negatives for {item.query_id!r}")

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "tau_prime": self.tau_prime,
            "items": [
                {
                    "query_id": item.query_id,
                    "positive_id": item.positive_id,
                    "negative_ids": list(item.negative_ids),
                }
                for item in self.items
            ],
        }


def tau_at(step: int, schedule: CurriculumSchedule) -> float:
    """Linear interpolation from tau_start at step 0 to tau_end at the last step."""
    if not 0 <= step < schedule.total_steps:
        raise DataError(
            f"step {step} outside schedule range [0, {schedule.total_steps})"
        )
    if schedule.total_steps == 1:
        return schedule.tau_start
    fraction = step / (schedule.total_steps - 1)
    return schedule.tau_start + fraction * (schedule.tau_end - schedule.tau_start)


def _id_key(record_id: str) -> int:
    return int.from_bytes(hashlib.blake2b(record_id.encode("utf-8"), digest_size=8).digest(), "big")


def _keyed_rng(seed: int, query_id: str, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, _id_key(query_id), step])


def softmax_over_scores(scores: np.ndarray, tau_prime: float) -> np.ndarray:
    """Numerically stable softmax of scores / tau_prime."""
    logits = np.asarray(scores, dtype=np.float64) / tau_prime
    logits -= logits.max()
    weights = np.exp(logits)
    return weights / weights.sum()


def sample_negatives(
    pool: NegativePool,
    m: int,
    tau_prime: float,
    rng_key: tuple[int, str, int],
) -> list[str]:
    """Draw m distinct negatives by sequential softmax over remaining entries.

    Each draw renormalizes over the codes still in the pool, so the first-draw
    marginal is exactly the softmax over the full pool. Fully determined by
    rng_key = (seed, query_id, step).
    """
    if m < 1:
        raise DataError(f"m must be >= 1, got {m}")
    if len(pool.entries) < m:
        raise DataError(
            f"pool for {pool.query_id!r} has {len(pool.entries)} entries < M={m}; "
            "increase the pool size P or decrease M"
        )
    seed, query_id, step = rng_key
    rng = _keyed_rng(seed, query_id, step)
    ids = [cid for cid, _ in pool.entries]
    scores = np.array([score for _, score in pool.entries], dtype=np.float64)
    remaining = list(range(len(ids)))
    drawn: list[str] = []
    for _ in range(m):
        probs = softmax_over_scores(scores[remaining], tau_prime)
        pick = int(rng.choice(len(remaining), p=probs))
        drawn.append(ids[remaining[pick]])
        remaining.pop(pick)
    return drawn


def _epoch_order(query_ids: Sequence[str], seed: int, epoch: int) -> list[str]:
    rng = np.random.default_rng([seed, 0x65706F63, epoch])
    order = rng.permutation(len(query_ids))
    return [query_ids[i] for i in order]


def emit_batches(
    curated: Sequence[CuratedPair],
    pools: Mapping[str, NegativePool],
    schedule: CurriculumSchedule,
    n: int,
    m: int,
    seed: int,
    steps: int | None = None,
    start_step: int = 0,
) -> Iterator[TrainingBatch]:
    """Stream training batches of n items with m curriculum-sampled negatives.

    Queries are reshuffled every epoch (seeded); a trailing partial batch is
    dropped. The stream is restartable: emitting from start_step with the same
    seed reproduces exactly the tail of a from-zero run.
    """
    if n < 1 or m < 1:
        raise DataError("batch size and negative count must be >= 1")
    if len(curated) < n:
        raise DataError(f"need at least {n} curated queries, have {len(curated)}")
    positives = {pair.query_id: pair.positive_id for pair in curated}
    for pair in curated:
        pool = pools.get(pair.query_id)
        if pool is None:
            raise DataError(f"no negative pool for curated query {pair.query_id!r}")
        if len(pool.entries) < m:
            raise DataError(
                f"pool for {pair.query_id!r} has {len(pool.entries)} entries < M={m}; "
                "increase the pool size P or decrease M"
            )

    query_ids = sorted(positives)
    batches_per_epoch = len(query_ids) // n
    total = schedule.total_steps if steps is None else steps
    if not 0 <= start_step <= total:
        raise DataError(f"start_step {start_step} outside [0, {total}]")

    current_epoch = -1
    order: list[str] = []
    for step in range(start_step, total):
        epoch = step // batches_per_epoch
        if epoch != current_epoch:
            order = _epoch_order(query_ids, seed, epoch)
            current_epoch = epoch
        position = step % batches_per_epoch
        tau_prime = tau_at(step, schedule)
        chosen = order[position * n : (position + 1) * n]
        items = tuple(
            BatchItem(
                query_id=qid,
                positive_id=positives[qid],
                negative_ids=tuple(
                    sample_negatives(pools[qid], m, tau_prime, (seed, qid, step))
                ),
            )
            for qid in chosen
        )
        yield TrainingBatch(step=step, tau_prime=tau_prime, items=items)


def write_batches(batches: Iterator[TrainingBatch] | Sequence[TrainingBatch], path: str | Path) -> int:
    count = 0
    with Path(path).open("w", encoding="utf-8") as handle:
        for batch in batches:
            handle.write(json.dumps(batch.to_json(), sort_keys=True) + "\n")
            count += 1
    return count


def load_batches(path: str | Path) -> list[TrainingBatch]:
    batches = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for raw in handle:
            raw = raw.strip()
            if not raw:
                continue
            doc = json.loads(raw)
            items = tuple(
                BatchItem(
                    query_id=item["query_id"],
                    positive_id=item["positive_id"],
                    negative_ids=tuple(item["negative_ids"]),
                )
                for item in doc["items"]
            )
            batches.append(TrainingBatch(step=doc["step"], tau_prime=doc["tau_prime"], items=items))
    return batches
