"""Clients and stubs for the embedding / rerank / judge backend protocols.

Two transports speak the same wire schemas: a local HTTP endpoint and a
spawned subprocess exchanging line-delimited JSON over stdin/stdout. The
in-process stubs keep every test hermetic; transcripts of any backend can be
recorded and re-validated against the protocol module.
"""
from __future__ import annotations

import json
import subprocess
import urllib.error
import urllib.request
from pathlib import Path
from typing import Sequence

from .embedder import stub_embed
from .errors import BackendError
from .rerank import IdentityRerankBackend

__all__ = [
    "AlwaysYesJudge",
    "HttpTransport",
    "IdentityRerankBackend",
    "LexicalRerankBackend",
    "OracleRerankBackend",
    "ProcessTransport",
    "RecordingStubProvider",
    "RemoteEmbeddingProvider",
    "RemoteJudgeBackend",
    "RemoteRerankBackend",
    "ScoreOracleTeacher",
    "SubstringJudge",
    "TranscriptRecorder",
]

DEFAULT_TIMEOUT = 30.0


class TranscriptRecorder:
    """Append-only log of {endpoint, request, response} exchanges."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.exchanges: list[dict] = []

    def record(self, endpoint: str, request: dict, response: dict) -> None:
        exchange = {"endpoint": endpoint, "request": request, "response": response}
        self.exchanges.append(exchange)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(exchange, sort_keys=True) + "\n")


class HttpTransport:
    """POSTs JSON to http://host:port/<endpoint>."""

    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT,
                 recorder: TranscriptRecorder | None = None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.recorder = recorder

    def request(self, endpoint: str, payload: dict) -> dict:
        url = f"{self.base_url}/{endpoint}"
        body = json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(
            url, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read().decode("utf-8")
        except (urllib.error.URLError, OSError) as exc:
            raise BackendError(f"backend request to {url} failed: {exc}") from exc
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise BackendError(f"backend returned invalid JSON from {url}") from exc
        if isinstance(doc, dict) and "error" in doc:
            raise BackendError(f"backend error from {url}: {doc['error']}")
        if self.recorder is not None:
            self.recorder.record(endpoint, payload, doc)
        return doc


class ProcessTransport:
    """Line-delimited JSON over a persistent subprocess's stdin/stdout."""

    def __init__(self, cmd: Sequence[str], timeout: float = DEFAULT_TIMEOUT,
                 endpoint: str = "embed", recorder: TranscriptRecorder | None = None):
        self.cmd = list(cmd)
        self.timeout = timeout
        self.endpoint = endpoint
        self.recorder = recorder
        self._proc: subprocess.Popen | None = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.cmd,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.DEVNULL,
                    text=True,
                )
            except OSError as exc:
                raise BackendError(f"cannot spawn backend {self.cmd}: {exc}") from exc
        return self._proc

    def request(self, endpoint: str, payload: dict) -> dict:
        proc = self._ensure()
        try:
            proc.stdin.write(json.dumps(payload) + "\n")
            proc.stdin.flush()
            raw = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(f"backend process {self.cmd} broke: {exc}") from exc
        if not raw:
            raise BackendError(f"backend process {self.cmd} closed its output")
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise BackendError("backend process returned invalid JSON") from exc
        if isinstance(doc, dict) and "error" in doc:
            raise BackendError(f"backend process error: {doc['error']}")
        if self.recorder is not None:
            self.recorder.record(endpoint, payload, doc)
        return doc

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._proc = None


class RemoteEmbeddingProvider:
    """EmbeddingProvider over either transport."""

    def __init__(self, transport, identity: str | None = None):
        self.transport = transport
        self.identity = identity or f"remote:{getattr(transport, 'base_url', 'process')}"
        self._dimension: int | None = None

    def probe(self) -> int:
        doc = self.transport.request("embed", {"probe": True})
        dimension = doc.get("dimension")
        if not isinstance(dimension, int) or dimension < 1:
            raise BackendError(f"invalid probe response: {doc!r}")
        self._dimension = dimension
        return dimension

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        doc = self.transport.request("embed", {"texts": list(texts)})
        embeddings = doc.get("embeddings")
        if not isinstance(embeddings, list) or len(embeddings) != len(texts):
            raise BackendError("embed response shape mismatch")
        return embeddings


class RemoteRerankBackend:
    def __init__(self, transport):
        self.transport = transport

    def rank(self, query: str, candidates: Sequence[tuple[int, str]]) -> list[int]:
        payload = {
            "query": query,
            "candidates": [{"identifier": ident, "text": text} for ident, text in candidates],
        }
        doc = self.transport.request("rerank", payload)
        ranking = doc.get("ranking")
        if not isinstance(ranking, list):
            raise BackendError("rerank response missing 'ranking'")
        return [int(x) for x in ranking]


class RemoteJudgeBackend:
    def __init__(self, transport):
        self.transport = transport

    def judge(self, query: str, code: str) -> str:
        doc = self.transport.request("judge", {"query": query, "code": code})
        answer = doc.get("answer")
        if not isinstance(answer, str):
            raise BackendError("judge response missing 'answer'")
        return answer


class AlwaysYesJudge:
    def judge(self, query: str, code: str) -> str:
        return "yes"


class SubstringJudge:
    """Deterministic stand-in: yes iff the query appears verbatim in the code."""

    def judge(self, query: str, code: str) -> str:
        return "yes" if query in code else "no"


class LexicalRerankBackend:
    """Orders window candidates by token overlap with the query; hermetic."""

    def rank(self, query: str, candidates: Sequence[tuple[int, str]]) -> list[int]:
        query_tokens = set(query.lower().split())

        def overlap(text: str) -> float:
            tokens = set(text.lower().split())
            if not tokens or not query_tokens:
                return 0.0
            return len(query_tokens & tokens) / len(query_tokens)

        scored = [(-overlap(text), ident) for ident, text in candidates]
        return [ident for _, ident in sorted(scored)]


class OracleRerankBackend:
    """Puts known-relevant candidate texts first; testing oracle."""

    def __init__(self, relevant_texts: set[str]):
        self.relevant_texts = relevant_texts

    def rank(self, query: str, candidates: Sequence[tuple[int, str]]) -> list[int]:
        hits = [ident for ident, text in candidates if text in self.relevant_texts]
        misses = [ident for ident, text in candidates if text not in self.relevant_texts]
        return hits + misses


class ScoreOracleTeacher:
    """Orders candidates by a provided (query text, candidate text) -> score map."""

    def __init__(self, scores: dict[tuple[str, str], float]):
        self.scores = scores

    def rank(self, query: str, candidates: Sequence[tuple[int, str]]) -> list[int]:
        keyed = [
            (-self.scores.get((query, text), float("-inf")), ident)
            for ident, text in candidates
        ]
        return [ident for _, ident in sorted(keyed)]


class RecordingStubProvider:
    """Stub embedding provider that also logs protocol exchanges."""

    def __init__(self, d: int = 64, recorder: TranscriptRecorder | None = None):
        self.d = d
        self.identity = f"stub:3gram:d={d}"
        self.recorder = recorder or TranscriptRecorder()

    def probe(self) -> int:
        self.recorder.record("embed", {"probe": True}, {"dimension": self.d})
        return self.d

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        vectors = [stub_embed(text, self.d).tolist() for text in texts]
        self.recorder.record("embed", {"texts": list(texts)}, {"embeddings": vectors})
        return vectors
