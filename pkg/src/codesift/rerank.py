"""Listwise reranking orchestration and teacher-labeled training data.

The reranker itself is a pluggable backend that receives a query plus a
window of identifier-labeled candidates and answers with an identifier
ordering. Long lists are processed in overlapping windows from the bottom of
the list upward, in a single pass, so a strong candidate deep in the list can
ride the window overlap to the top. Backend output is free-form; the repair
step always recovers a full permutation.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .curation import CuratedPair, NegativePool
from .errors import BackendError, DataError
from .ranker import RankedList

logger = logging.getLogger(__name__)

PROMPT_RESOURCE = "rerank_prompt_v1.txt"
_INT_RE = re.compile(r"-?\d+")


@dataclass(frozen=True)
class RerankParams:
    window: int = 10
    stride: int = 5
    depth: int = 100

    def __post_init__(self):
        if not 1 <= self.stride <= self.window <= self.depth:
            raise DataError(
                f"need 1 <= stride <= window <= depth, got "
                f"s={self.stride}, w={self.window}, depth={self.depth}"
            )


@dataclass
class Window:
    """One backend call: identifier-labeled candidates from a slice of the list."""

    query: str
    candidates: list[tuple[int, str, str]]  # (identifier, candidate_id, text)
    start: int
    end: int

    def __post_init__(self):
        identifiers = [ident for ident, _, _ in self.candidates]
        if len(set(identifiers)) != len(identifiers):
            raise DataError("window identifiers must be unique")
        if not identifiers:
            raise DataError("window must contain at least one candidate")

    def identifiers(self) -> list[int]:
        return [ident for ident, _, _ in self.candidates]


class RerankBackend(Protocol):
    """Orders a window of candidates; may answer with text or identifier list."""

    def rank(self, query: str, candidates: Sequence[tuple[int, str]]) -> str | Sequence[int]: ...


class IdentityRerankBackend:
    """Returns the window in its input order."""

    def rank(self, query: str, candidates: Sequence[tuple[int, str]]) -> list[int]:
        return [ident for ident, _ in candidates]


def window_prompt(query: str, candidates: Sequence[tuple[int, str]]) -> str:
    """Render the versioned identifier-window prompt for LLM-style backends."""
    template = resources.files("codesift.resources").joinpath(PROMPT_RESOURCE).read_text("utf-8")
    passages = "\n".join(f"[{ident}] {text}" for ident, text in candidates)
    return template.format(query=query, passages=passages, count=len(candidates))


def parse_and_repair(raw: str | Sequence[int], identifiers: Sequence[int]) -> list[int]:
    """Coerce a backend response into a full permutation of the window.

    Identifier tokens are taken in order of appearance; unknown identifiers
    are dropped, repeats keep their first occurrence, and anything missing is
    appended in original window order. Total: never fails.
    """
    if isinstance(raw, str):
        tokens = [int(tok) for tok in _INT_RE.findall(raw)]
    else:
        tokens = [int(tok) for tok in raw]
    known = set(identifiers)
    seen: set[int] = set()
    ordered: list[int] = []
    for token in tokens:
        if token in known and token not in seen:
            ordered.append(token)
            seen.add(token)
    for ident in identifiers:
        if ident not in seen:
            ordered.append(ident)
    return ordered


def window_starts(length: int, params: RerankParams) -> list[int]:
    """Window start offsets, deepest first; every position within depth is covered."""
    depth = min(params.depth, length)
    if depth <= 0:
        return []
    start = max(depth - params.window, 0)
    starts = [start]
    while start > 0:
        start = max(start - params.stride, 0)
        starts.append(start)
    return starts


def sliding_rerank(
    query: str,
    ranked: RankedList,
    params: RerankParams,
    backend: RerankBackend,
    candidate_texts: Mapping[str, str],
) -> RankedList:
    """Single back-to-front pass of windowed reranking over the top `depth`.

    Each window is replaced in place by the backend's ordering; a failing
    backend leaves that window untouched (logged) so the pass degrades
    gracefully. Entries beyond depth are never moved. The output id multiset
    always equals the input's; scores are the input scores reassigned in
    descending order so the ranked-list invariant is preserved.
    """
    if not ranked.entries:
        raise DataError(f"empty ranked list for query {ranked.query_id!r}")
    ids = ranked.ids()
    depth = min(params.depth, len(ids))
    head = ids[:depth]
    for start in window_starts(len(ids), params):
        end = min(start + params.window, depth)
        window_ids = head[start:end]
        if len(window_ids) < 2:
            continue  # nothing to reorder
        window = Window(
            query=query,
            candidates=[
                (ident, cid, candidate_texts.get(cid, ""))
                for ident, cid in enumerate(window_ids, start=1)
            ],
            start=start,
            end=end,
        )
        try:
            raw = backend.rank(query, [(ident, text) for ident, _, text in window.candidates])
        except BackendError as exc:
            logger.warning("rerank backend failed on window %d:%d: %s", start, end, exc)
            continue
        permutation = parse_and_repair(raw, window.identifiers())
        head[start:end] = [window_ids[ident - 1] for ident in permutation]

    new_ids = head + ids[depth:]
    sorted_scores = sorted((score for _, score in ranked.entries), reverse=True)
    return RankedList(
        query_id=ranked.query_id,
        entries=list(zip(new_ids, sorted_scores)),
    )


def rerank_runs(
    runs: Sequence[RankedList],
    queries: Mapping[str, str],
    params: RerankParams,
    backend: RerankBackend,
    candidate_texts: Mapping[str, str],
    in_flight: int = 1,
) -> list[RankedList]:
    """Rerank many queries; windows within one query stay strictly sequential."""

    def one(run: RankedList) -> RankedList:
        return sliding_rerank(queries[run.query_id], run, params, backend, candidate_texts)

    if in_flight > 1 and len(runs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=in_flight) as pool:
            return list(pool.map(one, runs))
    return [one(run) for run in runs]


@dataclass(frozen=True)
class ListwiseGenParams:
    instances_per_tuple: int = 5
    min_window: int = 3
    max_window: int = 10
    min_s_pos: float = 0.8
    max_rank: int = 1  # tuples need rank_of_positive <= max_rank
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.min_window <= self.max_window:
            raise DataError("need 1 <= min_window <= max_window")
        if self.instances_per_tuple < 1:
            raise DataError("instances_per_tuple must be >= 1")


@dataclass
class ListwiseInstance:
    """One supervision example: shuffled candidates plus the teacher's ordering."""

    query: str
    candidates: list[tuple[int, str, str]]  # (identifier, candidate_id, text)
    teacher_ranking: list[int]

    def __post_init__(self):
        identifiers = sorted(ident for ident, _, _ in self.candidates)
        if sorted(self.teacher_ranking) != identifiers:
            raise DataError("teacher_ranking must be a permutation of the window identifiers")

    def to_json(self) -> dict:
        return {
            "query": self.query,
            "candidates": [
                {"identifier": ident, "text": text} for ident, _, text in self.candidates
            ],
            "teacher_ranking": self.teacher_ranking,
        }


def gen_listwise_data(
    curated: Sequence[CuratedPair],
    pools: Mapping[str, NegativePool],
    query_texts: Mapping[str, str],
    code_texts: Mapping[str, str],
    teacher: RerankBackend,
    params: ListwiseGenParams | None = None,
) -> tuple[list[ListwiseInstance], int]:
    """Teacher-labeled listwise windows from high-confidence curated tuples.

    Tuples are kept when the positive ranks first and its score clears
    min_s_pos. Each contributes instances_per_tuple windows of a size drawn
    uniformly from [min_window, max_window]; candidates come without
    replacement from {positive} plus the strongest pool entries, then the
    window order is shuffled. Teacher failures skip the instance and are
    counted, not raised.
    """
    params = params or ListwiseGenParams()
    selected = [
        pair
        for pair in curated
        if pair.rank <= params.max_rank and pair.s_pos >= params.min_s_pos
    ]
    instances: list[ListwiseInstance] = []
    skipped = 0
    for pair in selected:
        pool = pools.get(pair.query_id)
        if pool is None:
            raise DataError(f"no negative pool for curated query {pair.query_id!r}")
        universe = [pair.positive_id] + [cid for cid, _ in pool.entries]
        if len(universe) < params.min_window:
            skipped += params.instances_per_tuple
            continue
        rng = np.random.default_rng(
            [params.seed, 0x6C697374, _stable_key(pair.query_id)]
        )
        for _ in range(params.instances_per_tuple):
            size = int(rng.integers(params.min_window, params.max_window + 1))
            size = min(size, len(universe))
            picked = rng.choice(len(universe), size=size, replace=False)
            chosen = [universe[i] for i in picked]
            rng.shuffle(chosen)
            identifiers = list(range(1, size + 1))
            window = [
                (ident, cid, code_texts[cid]) for ident, cid in zip(identifiers, chosen)
            ]
            try:
                raw = teacher.rank(
                    query_texts[pair.query_id], [(ident, text) for ident, _, text in window]
                )
            except BackendError as exc:
                logger.warning("teacher failed for query %s: %s", pair.query_id, exc)
                skipped += 1
                continue
            ranking = parse_and_repair(raw, identifiers)
            instances.append(
                ListwiseInstance(
                    query=query_texts[pair.query_id],
                    candidates=window,
                    teacher_ranking=ranking,
                )
            )
    return instances, skipped


def _stable_key(record_id: str) -> int:
    import hashlib

    return int.from_bytes(hashlib.blake2b(record_id.encode("utf-8"), digest_size=8).digest(), "big")


def write_instances(instances: Iterable[ListwiseInstance], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for instance in instances:
            handle.write(json.dumps(instance.to_json(), sort_keys=True) + "\n")
