"""Per-text top-K' neighbor structure standing in for the full similarity matrix.

The full n x n score table is infeasible at corpus scale; each text keeps its
exact top-K' code neighbors plus the diagonal pair score, which is everything
the consistency filter and the negative miner consume.

Scores are float32. The pairwise kernel is an in-order einsum reduction, so
any row/column blocking produces bit-identical scores; top-K' selection by
(-score, code id) is merge-invariant, which together makes compute_neighbors
output independent of block size.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from .embedder import VectorStore
from .errors import DataError, DimensionMismatchError

CACHE_MAGIC = b"CSIMCACH"
CACHE_VERSION = 1
DEFAULT_K_PRIME = 128
_CODE_BLOCK = 4096  # bounded memory for the running top-K' selection


@dataclass
class SimilarityCache:
    """Diagonal scores plus sorted top-K' neighbor lists for every text."""

    query_ids: tuple[str, ...]
    code_ids: tuple[str, ...]
    s_pos: np.ndarray  # float32, aligned with query_ids
    neighbor_ids: list[np.ndarray]  # per query: code-id strings
    neighbor_scores: list[np.ndarray]  # per query: float32, non-increasing
    k_prime: int
    provider_hash: str

    def __post_init__(self):
        if len(self.query_ids) != len(self.neighbor_ids) or len(self.query_ids) != len(
            self.neighbor_scores
        ):
            raise DataError("cache row counts disagree")
        self._query_index = {qid: i for i, qid in enumerate(self.query_ids)}

    def s_pos_of(self, query_id: str) -> float:
        return float(self.s_pos[self._query_index[query_id]])

    def neighbors_of(self, query_id: str) -> tuple[np.ndarray, np.ndarray]:
        i = self._query_index[query_id]
        return self.neighbor_ids[i], self.neighbor_scores[i]

    def __contains__(self, query_id: str) -> bool:
        return query_id in self._query_index

    def equals(self, other: "SimilarityCache") -> bool:
        if self.query_ids != other.query_ids or self.code_ids != other.code_ids:
            return False
        if not np.array_equal(self.s_pos, other.s_pos):
            return False
        for a_ids, b_ids, a_sc, b_sc in zip(
            self.neighbor_ids, other.neighbor_ids, self.neighbor_scores, other.neighbor_scores
        ):
            if not (np.array_equal(a_ids, b_ids) and np.array_equal(a_sc, b_sc)):
                return False
        return True

    def save_jsonl(self, path: str | Path) -> None:
        """Line-delimited {query_id, s_pos, neighbors}; parameters go in a sidecar."""
        path = Path(path)
        with path.open("w", encoding="utf-8") as handle:
            for i, qid in enumerate(self.query_ids):
                neighbors = [
                    [str(nid), float(score)]
                    for nid, score in zip(self.neighbor_ids[i], self.neighbor_scores[i])
                ]
                doc = {"query_id": qid, "s_pos": float(self.s_pos[i]), "neighbors": neighbors}
                handle.write(json.dumps(doc, sort_keys=True) + "\n")
        sidecar = {
            "k_prime": self.k_prime,
            "provider_hash": self.provider_hash,
            "code_ids": list(self.code_ids),
        }
        path.with_suffix(path.suffix + ".params.json").write_text(
            json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "SimilarityCache":
        path = Path(path)
        sidecar_path = path.with_suffix(path.suffix + ".params.json")
        if not sidecar_path.exists():
            raise DataError(f"cache parameter sidecar not found: {sidecar_path}")
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        query_ids: list[str] = []
        s_pos: list[np.float32] = []
        neighbor_ids: list[np.ndarray] = []
        neighbor_scores: list[np.ndarray] = []
        with path.open("r", encoding="utf-8") as handle:
            for raw in handle:
                raw = raw.strip()
                if not raw:
                    continue
                doc = json.loads(raw)
                query_ids.append(doc["query_id"])
                s_pos.append(np.float32(doc["s_pos"]))
                ids = np.array([n[0] for n in doc["neighbors"]], dtype=str)
                scores = np.array([n[1] for n in doc["neighbors"]], dtype=np.float32)
                neighbor_ids.append(ids)
                neighbor_scores.append(scores)
        return cls(
            query_ids=tuple(query_ids),
            code_ids=tuple(sidecar["code_ids"]),
            s_pos=np.array(s_pos, dtype=np.float32),
            neighbor_ids=neighbor_ids,
            neighbor_scores=neighbor_scores,
            k_prime=int(sidecar["k_prime"]),
            provider_hash=str(sidecar["provider_hash"]),
        )

    def save_binary(self, path: str | Path) -> None:
        """Compact variant mirroring the vector-store layout, for large runs."""
        code_index = {cid: i for i, cid in enumerate(self.code_ids)}
        with Path(path).open("wb") as handle:
            handle.write(CACHE_MAGIC)
            handle.write(
                struct.pack("<IIQQ", CACHE_VERSION, self.k_prime, len(self.query_ids),
                            len(self.code_ids))
            )
            hash_blob = self.provider_hash.encode("ascii")
            handle.write(struct.pack("<I", len(hash_blob)))
            handle.write(hash_blob)
            for table in ("\n".join(self.code_ids), "\n".join(self.query_ids)):
                blob = table.encode("utf-8")
                handle.write(struct.pack("<Q", len(blob)))
                handle.write(blob)
            handle.write(np.ascontiguousarray(self.s_pos, dtype="<f4").tobytes())
            for ids, scores in zip(self.neighbor_ids, self.neighbor_scores):
                handle.write(struct.pack("<I", len(ids)))
                idx = np.array([code_index[i] for i in ids], dtype="<u4")
                handle.write(idx.tobytes())
                handle.write(np.ascontiguousarray(scores, dtype="<f4").tobytes())

    @classmethod
    def load_binary(cls, path: str | Path) -> "SimilarityCache":
        with Path(path).open("rb") as handle:
            magic = handle.read(len(CACHE_MAGIC))
            if magic != CACHE_MAGIC:
                raise DataError(f"not a similarity cache file: {path}")
            version, k_prime, n_queries, n_codes = struct.unpack("<IIQQ", handle.read(24))
            if version != CACHE_VERSION:
                raise DataError(f"unsupported cache version {version}")
            (hash_len,) = struct.unpack("<I", handle.read(4))
            provider_hash = handle.read(hash_len).decode("ascii")
            tables = []
            for _ in range(2):
                (blob_len,) = struct.unpack("<Q", handle.read(8))
                blob = handle.read(blob_len).decode("utf-8")
                tables.append(tuple(blob.split("\n")) if blob else ())
            code_ids, query_ids = tables
            s_pos = np.frombuffer(handle.read(n_queries * 4), dtype="<f4").copy()
            code_arr = np.array(code_ids, dtype=str)
            neighbor_ids: list[np.ndarray] = []
            neighbor_scores: list[np.ndarray] = []
            for _ in range(n_queries):
                (count,) = struct.unpack("<I", handle.read(4))
                idx = np.frombuffer(handle.read(count * 4), dtype="<u4")
                scores = np.frombuffer(handle.read(count * 4), dtype="<f4").copy()
                neighbor_ids.append(code_arr[idx.astype(np.int64)])
                neighbor_scores.append(scores)
        return cls(
            query_ids=query_ids,
            code_ids=code_ids,
            s_pos=s_pos,
            neighbor_ids=neighbor_ids,
            neighbor_scores=neighbor_scores,
            k_prime=k_prime,
            provider_hash=provider_hash,
        )


def pair_scores(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """All-pairs cosine scores as float32, via a blocking-invariant kernel."""
    exact = np.einsum(
        "id,jd->ij", rows.astype(np.float64), cols.astype(np.float64), optimize=False
    )
    return exact.astype(np.float32)


def diagonal_scores(texts: np.ndarray, codes: np.ndarray) -> np.ndarray:
    exact = np.einsum(
        "id,id->i", texts.astype(np.float64), codes.astype(np.float64), optimize=False
    )
    return exact.astype(np.float32)


def _top_k_rows(
    scores: np.ndarray, code_id_arr: np.ndarray, k: int
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact top-k per row, ties broken by code id ascending."""
    ids_out, scores_out = [], []
    for row in scores:
        order = np.lexsort((code_id_arr, -row.astype(np.float64)))[:k]
        ids_out.append(code_id_arr[order])
        scores_out.append(row[order])
    return ids_out, scores_out


def _merge_top_k(
    run_ids: np.ndarray,
    run_scores: np.ndarray,
    new_ids: np.ndarray,
    new_scores: np.ndarray,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    ids = np.concatenate([run_ids, new_ids]) if len(run_ids) else new_ids
    scores = np.concatenate([run_scores, new_scores]) if len(run_scores) else new_scores
    order = np.lexsort((ids, -scores.astype(np.float64)))[:k]
    return ids[order], scores[order]


def compute_neighbors(
    texts: VectorStore,
    codes: VectorStore,
    k_prime: int = DEFAULT_K_PRIME,
    block: int = 1024,
    threads: int = 1,
) -> SimilarityCache:
    """Exact top-K' code neighbors for every text, by blocked products.

    Processes `block` text rows at a time against bounded code chunks with a
    running top-K' selection, so memory stays O(block * chunk). The diagonal
    pair score is recorded separately even when it falls outside the top-K'.
    """
    if texts.dimension != codes.dimension:
        raise DimensionMismatchError(
            f"text store d={texts.dimension} vs code store d={codes.dimension}"
        )
    if k_prime < 1:
        raise DataError(f"k_prime must be >= 1, got {k_prime}")
    if block < 1:
        raise DataError(f"block must be >= 1, got {block}")
    if texts.ids != codes.ids:
        raise DataError("text and code stores must cover the same record ids in the same order")

    n = len(texts.ids)
    code_id_arr = np.array(codes.ids, dtype=str)
    k = min(k_prime, n)
    s_pos = diagonal_scores(texts.vectors, codes.vectors)

    neighbor_ids: list[np.ndarray | None] = [None] * n
    neighbor_scores: list[np.ndarray | None] = [None] * n

    def process_block(start: int) -> None:
        stop = min(start + block, n)
        rows = texts.vectors[start:stop]
        run_ids = [np.empty(0, dtype=code_id_arr.dtype) for _ in range(stop - start)]
        run_scores = [np.empty(0, dtype=np.float32) for _ in range(stop - start)]
        for cstart in range(0, n, _CODE_BLOCK):
            cstop = min(cstart + _CODE_BLOCK, n)
            chunk_scores = pair_scores(rows, codes.vectors[cstart:cstop])
            chunk_ids = code_id_arr[cstart:cstop]
            for r in range(stop - start):
                run_ids[r], run_scores[r] = _merge_top_k(
                    run_ids[r], run_scores[r], chunk_ids, chunk_scores[r], k
                )
        for r in range(stop - start):
            neighbor_ids[start + r] = run_ids[r]
            neighbor_scores[start + r] = run_scores[r]

    starts = list(range(0, n, block))
    if threads > 1 and len(starts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(process_block, starts))
    else:
        for start in starts:
            process_block(start)

    return SimilarityCache(
        query_ids=texts.ids,
        code_ids=codes.ids,
        s_pos=s_pos,
        neighbor_ids=neighbor_ids,  # type: ignore[arg-type]
        neighbor_scores=neighbor_scores,  # type: ignore[arg-type]
        k_prime=k_prime,
        provider_hash=f"{texts.content_hash}:{codes.content_hash}",
    )


def brute_force_neighbors(
    texts: VectorStore, codes: VectorStore, k_prime: int = DEFAULT_K_PRIME
) -> SimilarityCache:
    """Materialize the full score table and sort each row; testing oracle only.

    Feasible only while n x n fits in memory; production paths must use
    compute_neighbors.
    """
    if texts.dimension != codes.dimension:
        raise DimensionMismatchError(
            f"text store d={texts.dimension} vs code store d={codes.dimension}"
        )
    if texts.ids != codes.ids:
        raise DataError("text and code stores must cover the same record ids in the same order")
    n = len(texts.ids)
    k = min(k_prime, n)
    full = pair_scores(texts.vectors, codes.vectors)
    code_id_arr = np.array(codes.ids, dtype=str)
    neighbor_ids, neighbor_scores = _top_k_rows(full, code_id_arr, k)
    return SimilarityCache(
        query_ids=texts.ids,
        code_ids=codes.ids,
        s_pos=diagonal_scores(texts.vectors, codes.vectors),
        neighbor_ids=neighbor_ids,
        neighbor_scores=neighbor_scores,
        k_prime=k_prime,
        provider_hash=f"{texts.content_hash}:{codes.content_hash}",
    )
