"""Retrieve-then-rerank function localization for repository issues.

The issue text is the query; every function in a repository snapshot is a
candidate, embedded as its docstring concatenated with its body so that both
the description and the implementation drive matches. Function rankings roll
up to file rankings by first occurrence.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .embedder import EmbeddingProvider, VectorStore, embed_corpus
from .corpus import PairRecord
from .errors import DataError, ReferentialIntegrityError
from .ranker import RankedList, SearchIndex
from .rerank import RerankBackend, RerankParams, sliding_rerank

FILE_KS = (1, 2, 3)
FUNCTION_KS = (5, 10)
HIT_MODES = ("any", "complete")


@dataclass(frozen=True)
class FunctionRecord:
    function_id: str
    file_path: str
    qualified_name: str
    docstring: str
    body: str

    def __post_init__(self):
        if not self.function_id:
            raise DataError("function_id must be non-empty")
        if not self.file_path:
            raise DataError("file_path must be non-empty")

    def candidate_text(self) -> str:
        return f"{self.docstring}\n{self.body}" if self.docstring else self.body

    def to_json(self) -> dict:
        return {
            "function_id": self.function_id,
            "file_path": self.file_path,
            "qualified_name": self.qualified_name,
            "docstring": self.docstring,
            "body": self.body,
        }


@dataclass(frozen=True)
class GoldLabels:
    instance_id: str
    issue: str
    gold_function_ids: frozenset[str]
    gold_files: frozenset[str]

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "issue": self.issue,
            "gold_function_ids": sorted(self.gold_function_ids),
            "gold_files": sorted(self.gold_files),
        }


@dataclass
class LocalizationReport:
    mode: str
    file_accuracy: dict[int, float]
    function_accuracy: dict[int, float]
    per_instance: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "file_accuracy": {f"top_{k}": v for k, v in sorted(self.file_accuracy.items())},
            "function_accuracy": {
                f"top_{k}": v for k, v in sorted(self.function_accuracy.items())
            },
            "per_instance": {k: self.per_instance[k] for k in sorted(self.per_instance)},
        }

    def as_table(self) -> str:
        file_cols = " ".join(f"top{k}={self.file_accuracy[k]:.3f}" for k in sorted(self.file_accuracy))
        fn_cols = " ".join(
            f"top{k}={self.function_accuracy[k]:.3f}" for k in sorted(self.function_accuracy)
        )
        return (
            f"mode={self.mode}\n"
            f"file-level     {file_cols}\n"
            f"function-level {fn_cols}"
        )


def snapshot_store(
    snapshot: Sequence[FunctionRecord], provider: EmbeddingProvider, batch_size: int = 64
) -> VectorStore:
    """Embed every function's docstring+body as the candidate text."""
    if not snapshot:
        raise DataError("cannot embed an empty snapshot")
    records = [
        PairRecord(
            id=fn.function_id,
            text=fn.candidate_text(),
            code=fn.candidate_text(),
            language="snapshot",
        )
        for fn in snapshot
    ]
    return embed_corpus(records, provider, side="code", batch_size=batch_size)


def localize(
    issue: str,
    snapshot: Sequence[FunctionRecord],
    provider: EmbeddingProvider,
    depth: int = 100,
    rerank_params: RerankParams | None = None,
    rerank_backend: RerankBackend | None = None,
    store: VectorStore | None = None,
    instance_id: str = "instance",
) -> RankedList:
    """Rank snapshot functions against an issue; optionally rerank the head."""
    if not issue:
        raise DataError("issue text must be non-empty")
    if not snapshot:
        raise DataError("cannot localize against an empty snapshot")
    if store is None:
        store = snapshot_store(snapshot, provider)
    index = SearchIndex(store)
    query = np.asarray(provider.embed([issue])[0], dtype=np.float64)
    ranked = index.search(query, k=depth, query_id=instance_id)
    if rerank_backend is not None:
        params = rerank_params or RerankParams(depth=depth)
        texts = {fn.function_id: fn.candidate_text() for fn in snapshot}
        ranked = sliding_rerank(issue, ranked, params, rerank_backend, texts)
    return ranked


def file_rollup(
    ranked_function_ids: Sequence[str], file_of: Mapping[str, str]
) -> list[str]:
    """Files ordered by the first occurrence of any of their functions."""
    seen: set[str] = set()
    files: list[str] = []
    for fid in ranked_function_ids:
        try:
            path = file_of[fid]
        except KeyError:
            raise ReferentialIntegrityError(f"function {fid!r} has no file mapping") from None
        if path not in seen:
            seen.add(path)
            files.append(path)
    return files


def _hit(predicted: Sequence[str], gold: frozenset[str], k: int, mode: str) -> int:
    top = set(predicted[:k])
    if mode == "any":
        return int(bool(top & gold))
    return int(gold <= top)


def eval_localization(
    predictions: Mapping[str, Sequence[str]],
    gold: Mapping[str, GoldLabels],
    file_of: Mapping[str, str],
    file_ks: Sequence[int] = FILE_KS,
    function_ks: Sequence[int] = FUNCTION_KS,
    mode: str = "any",
    known_function_ids: set[str] | None = None,
) -> LocalizationReport:
    """Top-k hit accuracy at file and function level.

    mode="any" scores a hit when at least one gold item is inside the top k;
    mode="complete" requires all gold items inside the top k.
    """
    if mode not in HIT_MODES:
        raise DataError(f"unknown hit mode {mode!r}; expected one of {HIT_MODES}")
    if set(predictions) != set(gold):
        raise DataError("predictions and gold must cover the same instance ids")
    if not predictions:
        raise DataError("nothing to evaluate")
    if known_function_ids is not None:
        for labels in gold.values():
            unknown = labels.gold_function_ids - known_function_ids
            if unknown:
                raise ReferentialIntegrityError(
                    f"gold functions not in snapshot for {labels.instance_id!r}: {sorted(unknown)}"
                )

    file_hits = {k: 0 for k in file_ks}
    fn_hits = {k: 0 for k in function_ks}
    per_instance: dict[str, dict] = {}
    for instance_id in sorted(predictions):
        labels = gold[instance_id]
        predicted_functions = list(predictions[instance_id])
        predicted_files = file_rollup(predicted_functions, file_of)
        gold_files = labels.gold_files or frozenset(
            file_of[fid] for fid in labels.gold_function_ids if fid in file_of
        )
        entry = {"files": {}, "functions": {}}
        for k in file_ks:
            hit = _hit(predicted_files, frozenset(gold_files), k, mode)
            file_hits[k] += hit
            entry["files"][f"top_{k}"] = hit
        for k in function_ks:
            hit = _hit(predicted_functions, labels.gold_function_ids, k, mode)
            fn_hits[k] += hit
            entry["functions"][f"top_{k}"] = hit
        per_instance[instance_id] = entry

    count = len(predictions)
    return LocalizationReport(
        mode=mode,
        file_accuracy={k: file_hits[k] / count for k in file_ks},
        function_accuracy={k: fn_hits[k] / count for k in function_ks},
        per_instance=per_instance,
    )


def write_snapshot(snapshot: Sequence[FunctionRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for fn in snapshot:
            handle.write(json.dumps(fn.to_json(), sort_keys=True) + "\n")


def load_snapshot(path: str | Path) -> list[FunctionRecord]:
    snapshot = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for raw in handle:
            raw = raw.strip()
            if raw:
                doc = json.loads(raw)
                snapshot.append(
                    FunctionRecord(
                        function_id=doc["function_id"],
                        file_path=doc["file_path"],
                        qualified_name=doc.get("qualified_name", ""),
                        docstring=doc.get("docstring", ""),
                        body=doc["body"],
                    )
                )
    return snapshot


def write_gold(labels: Sequence[GoldLabels], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for item in labels:
            handle.write(json.dumps(item.to_json(), sort_keys=True) + "\n")


def load_gold(path: str | Path, file_of: Mapping[str, str] | None = None) -> list[GoldLabels]:
    """Load gold labels; gold_files are completed from the functions' files."""
    labels = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for raw in handle:
            raw = raw.strip()
            if not raw:
                continue
            doc = json.loads(raw)
            gold_functions = frozenset(doc["gold_function_ids"])
            explicit_files = set(doc.get("gold_files", []))
            if file_of:
                explicit_files |= {file_of[fid] for fid in gold_functions if fid in file_of}
            labels.append(
                GoldLabels(
                    instance_id=doc["instance_id"],
                    issue=doc["issue"],
                    gold_function_ids=gold_functions,
                    gold_files=frozenset(explicit_files),
                )
            )
    return labels
