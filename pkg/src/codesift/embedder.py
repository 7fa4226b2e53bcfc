"""Unit-norm embedding stores and the deterministic hashing stub provider.

Providers return raw vectors; normalization happens here, inside the store,
so every downstream similarity is a plain dot product (cosine).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .corpus import PairRecord
from .errors import BackendError, DataError, DimensionMismatchError

STORE_MAGIC = b"CSVSTORE"
STORE_VERSION = 1
SIDES = ("text", "code")
NORM_TOL = 1e-6


class EmbeddingProvider(Protocol):
    """Minimal provider surface: a stable identity, a probe, and batch embed."""

    identity: str

    def probe(self) -> int: ...

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


def _gram_hash(gram: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(gram, digest_size=8).digest(), "big")


def stub_embed(text: str, d: int = 64) -> np.ndarray:
    """Deterministic signed feature-hash of character 3-grams, L2-normalized.

    Grams are taken over the lowercased input padded with sentinel boundary
    characters, so any non-empty string hits at least one bucket. Stable
    across runs and platforms (keyed on blake2b, not the builtin hash).
    """
    if d < 8:
        raise DataError(f"stub embedding dimension must be >= 8, got {d}")
    if not text:
        raise DataError("cannot embed an empty string")
    padded = "\x02" + text.lower() + "\x03"
    counts = np.zeros(d, dtype=np.float64)
    data = padded.encode("utf-8", errors="replace")
    # Gram over unicode characters, not bytes, so multibyte input is stable too.
    chars = padded
    for i in range(len(chars) - 2):
        h = _gram_hash(chars[i : i + 3].encode("utf-8", errors="replace"))
        bucket = h % d
        sign = 1.0 if (h >> 63) & 1 else -1.0
        counts[bucket] += sign
    norm = float(np.linalg.norm(counts))
    if norm == 0.0:
        # Signed collisions cancelled out; fall back to a whole-string bucket.
        h = _gram_hash(data)
        counts[h % d] = 1.0
        norm = 1.0
    return (counts / norm).astype(np.float32)


class StubEmbeddingProvider:
    """Hermetic in-process provider backed by stub_embed."""

    def __init__(self, d: int = 64):
        self.d = d
        self.identity = f"stub:3gram:d={d}"

    def probe(self) -> int:
        return self.d

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return [stub_embed(text, self.d).tolist() for text in texts]


def _content_hash(provider_identity: str, ids: Sequence[str]) -> str:
    hasher = hashlib.sha256()
    hasher.update(provider_identity.encode("utf-8"))
    for record_id in ids:
        hasher.update(b"\x00")
        hasher.update(record_id.encode("utf-8"))
    return hasher.hexdigest()


@dataclass
class VectorStore:
    """Immutable matrix of unit-norm row vectors keyed by record id."""

    dimension: int
    ids: tuple[str, ...]
    vectors: np.ndarray  # float32, shape (len(ids), dimension), unit rows
    side: str
    content_hash: str

    def __post_init__(self):
        if self.side not in SIDES:
            raise DataError(f"store side must be one of {SIDES}, got {self.side!r}")
        if self.vectors.shape != (len(self.ids), self.dimension):
            raise DimensionMismatchError(
                f"store shape {self.vectors.shape} does not match "
                f"{len(self.ids)} ids x dimension {self.dimension}"
            )
        norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        if len(norms) and not np.allclose(norms, 1.0, atol=NORM_TOL):
            raise DataError("store rows must be unit-norm")
        self._index = {record_id: i for i, record_id in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise DataError("store ids must be unique")

    @classmethod
    def from_raw(
        cls,
        vectors: np.ndarray,
        ids: Sequence[str],
        side: str,
        provider_identity: str,
    ) -> "VectorStore":
        raw = np.asarray(vectors, dtype=np.float64)
        if raw.ndim != 2:
            raise DimensionMismatchError("raw vectors must be a 2-D array")
        norms = np.linalg.norm(raw, axis=1)
        if np.any(norms == 0.0):
            bad = int(np.argmax(norms == 0.0))
            raise DataError(f"zero-norm vector for id {ids[bad]!r}")
        unit = (raw / norms[:, None]).astype(np.float32)
        return cls(
            dimension=raw.shape[1],
            ids=tuple(ids),
            vectors=unit,
            side=side,
            content_hash=_content_hash(provider_identity, ids),
        )

    def row(self, record_id: str) -> np.ndarray:
        try:
            return self.vectors[self._index[record_id]]
        except KeyError:
            raise DataError(f"id not in store: {record_id!r}") from None

    def index_of(self, record_id: str) -> int:
        try:
            return self._index[record_id]
        except KeyError:
            raise DataError(f"id not in store: {record_id!r}") from None

    def save(self, path: str | Path) -> None:
        """Binary layout: header (magic, version, d, count, side, hash), then
        row-major float32 data, then the newline-joined id table."""
        path = Path(path)
        ids_blob = "\n".join(self.ids).encode("utf-8")
        hash_blob = self.content_hash.encode("ascii")
        with path.open("wb") as handle:
            handle.write(STORE_MAGIC)
            handle.write(struct.pack("<IIQB3x", STORE_VERSION, self.dimension, len(self.ids),
                                     SIDES.index(self.side)))
            handle.write(struct.pack("<I", len(hash_blob)))
            handle.write(hash_blob)
            handle.write(np.ascontiguousarray(self.vectors, dtype="<f4").tobytes())
            handle.write(struct.pack("<Q", len(ids_blob)))
            handle.write(ids_blob)

    @classmethod
    def load(cls, path: str | Path) -> "VectorStore":
        path = Path(path)
        with path.open("rb") as handle:
            magic = handle.read(len(STORE_MAGIC))
            if magic != STORE_MAGIC:
                raise DataError(f"not a vector store file: {path}")
            version, dimension, count, side_code = struct.unpack("<IIQB3x", handle.read(20))
            if version != STORE_VERSION:
                raise DataError(f"unsupported store version {version}")
            (hash_len,) = struct.unpack("<I", handle.read(4))
            content_hash = handle.read(hash_len).decode("ascii")
            data = handle.read(count * dimension * 4)
            vectors = np.frombuffer(data, dtype="<f4").reshape(count, dimension).copy()
            (ids_len,) = struct.unpack("<Q", handle.read(8))
            ids_blob = handle.read(ids_len).decode("utf-8")
        ids = tuple(ids_blob.split("\n")) if ids_blob else ()
        return cls(
            dimension=dimension,
            ids=ids,
            vectors=vectors,
            side=SIDES[side_code],
            content_hash=content_hash,
        )


def _batches(items: list, size: int) -> list[list]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def embed_corpus(
    records: Iterable[PairRecord],
    provider: EmbeddingProvider,
    side: str,
    batch_size: int = 64,
    in_flight: int = 1,
    checkpoint: str | Path | None = None,
) -> VectorStore:
    """Embed one side of a corpus into a unit-norm VectorStore.

    Requests are batched; with in_flight > 1 batches run concurrently but the
    output is assembled in record order, so completion order never matters.
    With a checkpoint path, completed batches are persisted as they finish and
    a rerun after a partial failure resumes from the last completed batch.
    """
    if side not in SIDES:
        raise DataError(f"side must be one of {SIDES}")
    records = list(records)
    ids = [record.id for record in records]
    texts = [record.text if side == "text" else record.code for record in records]
    dimension = provider.probe()
    if dimension < 1:
        raise BackendError(f"provider probe returned invalid dimension {dimension}")

    run_hash = _content_hash(provider.identity, ids)
    batches = _batches(texts, batch_size)
    done: dict[int, list[list[float]]] = {}

    checkpoint = Path(checkpoint) if checkpoint else None
    if checkpoint and checkpoint.exists():
        with checkpoint.open("r", encoding="utf-8") as handle:
            header = json.loads(handle.readline())
            if header.get("run_hash") == run_hash:
                for raw in handle:
                    entry = json.loads(raw)
                    done[entry["batch"]] = entry["vectors"]
            else:
                checkpoint.unlink()

    def save_batch(index: int, vectors: list[list[float]]) -> None:
        if checkpoint is None:
            return
        new_file = not checkpoint.exists()
        with checkpoint.open("a", encoding="utf-8") as handle:
            if new_file:
                handle.write(json.dumps({"run_hash": run_hash}) + "\n")
            handle.write(json.dumps({"batch": index, "vectors": vectors}) + "\n")

    def run_batch(index: int) -> list[list[float]]:
        vectors = provider.embed(batches[index])
        if len(vectors) != len(batches[index]):
            raise BackendError(
                f"provider returned {len(vectors)} vectors for a batch of {len(batches[index])}"
            )
        for vector in vectors:
            if len(vector) != dimension:
                raise DimensionMismatchError(
                    f"provider returned dimension {len(vector)}, expected {dimension}"
                )
        return vectors

    pending = [i for i in range(len(batches)) if i not in done]
    if in_flight > 1 and len(pending) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=in_flight) as pool:
            for index, vectors in zip(pending, pool.map(run_batch, pending)):
                done[index] = vectors
                save_batch(index, vectors)
    else:
        for index in pending:
            vectors = run_batch(index)
            done[index] = vectors
            save_batch(index, vectors)

    rows: list[list[float]] = []
    for index in range(len(batches)):
        rows.extend(done[index])
    matrix = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, dimension))
    store = VectorStore.from_raw(matrix, ids, side, provider.identity)
    if checkpoint and checkpoint.exists():
        checkpoint.unlink()
    return store
