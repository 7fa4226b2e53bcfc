import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import numpy as np
import pytest

from codesift.backends import (
    HttpTransport,
    ProcessTransport,
    RecordingStubProvider,
    RemoteEmbeddingProvider,
    RemoteJudgeBackend,
    RemoteRerankBackend,
    TranscriptRecorder,
)
from codesift.embedder import embed_corpus, stub_embed
from codesift.errors import BackendError
from codesift.corpus import PairRecord
from codesift.protocol import (
    validate_exchange,
    validate_transcript,
    validate_transcript_file,
)

TESTS_DIR = Path(__file__).parent


class _StubHandler(BaseHTTPRequestHandler):
    """In-test HTTP server speaking all three protocols over stub models."""

    dimension = 48

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        try:
            request = json.loads(self.rfile.read(length))
        except json.JSONDecodeError:
            self._reply({"error": "invalid JSON"}, status=400)
            return
        if self.path == "/embed":
            if request.get("probe") is True:
                self._reply({"dimension": self.dimension})
            elif isinstance(request.get("texts"), list):
                vectors = [stub_embed(t, self.dimension).tolist() for t in request["texts"]]
                self._reply({"embeddings": vectors})
            else:
                self._reply({"error": "missing texts"}, status=400)
        elif self.path == "/rerank":
            candidates = request.get("candidates")
            if not isinstance(candidates, list):
                self._reply({"error": "missing candidates"}, status=400)
                return
            self._reply({"ranking": [c["identifier"] for c in candidates]})
        elif self.path == "/judge":
            if not isinstance(request.get("query"), str):
                self._reply({"error": "missing query"}, status=400)
                return
            answer = "yes" if request["query"] in request.get("code", "") else "no"
            self._reply({"answer": answer})
        else:
            self._reply({"error": f"unknown endpoint {self.path}"}, status=404)

    def _reply(self, doc, status=200):
        body = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def http_backend():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


class TestSchemas:
    def test_valid_exchanges_pass(self):
        assert validate_exchange("embed", {"probe": True}, {"dimension": 8}) == []
        assert validate_exchange(
            "embed", {"texts": ["a", "b"]}, {"embeddings": [[0.1, 0.2], [0.3, 0.4]]}
        ) == []
        assert validate_exchange(
            "rerank",
            {"query": "q", "candidates": [{"identifier": 1, "text": "a"},
                                          {"identifier": 2, "text": "b"}]},
            {"ranking": [2, 1]},
        ) == []
        assert validate_exchange("judge", {"query": "q", "code": "c"}, {"answer": "no"}) == []

    def test_embedding_count_mismatch_flagged(self):
        problems = validate_exchange(
            "embed", {"texts": ["a", "b"]}, {"embeddings": [[0.1]]}
        )
        assert any("2 texts but 1 embeddings" in p for p in problems)

    def test_ragged_embeddings_flagged(self):
        problems = validate_exchange(
            "embed", {"texts": ["a", "b"]}, {"embeddings": [[0.1], [0.1, 0.2]]}
        )
        assert any("disagree on dimension" in p for p in problems)

    def test_non_permutation_ranking_flagged(self):
        problems = validate_exchange(
            "rerank",
            {"query": "q", "candidates": [{"identifier": 1, "text": "a"},
                                          {"identifier": 2, "text": "b"}]},
            {"ranking": [2, 2]},
        )
        assert any("permutation" in p for p in problems)

    def test_judge_answer_vocabulary(self):
        problems = validate_exchange("judge", {"query": "q", "code": "c"}, {"answer": "maybe"})
        assert problems

    def test_probe_dimension_must_be_positive_int(self):
        assert validate_exchange("embed", {"probe": True}, {"dimension": 0})
        assert validate_exchange("embed", {"probe": True}, {"dimension": True})

    def test_extra_response_fields_are_tolerated(self):
        # providers may flag truncated inputs alongside the embeddings
        problems = validate_exchange(
            "embed",
            {"texts": ["a", "b"]},
            {"embeddings": [[0.1, 0.2], [0.3, 0.4]], "truncated": [1]},
        )
        assert problems == []

    def test_unknown_endpoint(self):
        assert validate_exchange("chat", {}, {}) == ["unknown endpoint 'chat'"]


class TestTranscripts:
    def test_stub_provider_transcript_conforms(self, tmp_path):
        path = tmp_path / "transcript.jsonl"
        provider = RecordingStubProvider(d=32, recorder=TranscriptRecorder(path))
        records = [
            PairRecord(id=f"r{i}", text=f"text number {i}", code=f"code {i}", language="py")
            for i in range(7)
        ]
        embed_corpus(records, provider, "text", batch_size=3)
        violations = validate_transcript_file(path)
        assert violations == []

    def test_dimension_drift_across_session_is_flagged(self):
        lines = [
            json.dumps({"endpoint": "embed", "request": {"probe": True},
                        "response": {"dimension": 4}}),
            json.dumps({"endpoint": "embed", "request": {"texts": ["a"]},
                        "response": {"embeddings": [[0.1, 0.2]]}}),
        ]
        violations = validate_transcript(lines)
        assert any("probe said 4" in v for v in violations)

    def test_module_entry_point(self, tmp_path, capsys):
        from codesift.protocol import main

        path = tmp_path / "t.jsonl"
        path.write_text(
            json.dumps({"endpoint": "judge", "request": {"query": "a", "code": "b"},
                        "response": {"answer": "no"}}) + "\n"
        )
        assert main([str(path)]) == 0
        path.write_text(
            json.dumps({"endpoint": "judge", "request": {"query": "a", "code": "b"},
                        "response": {"answer": "perhaps"}}) + "\n"
        )
        assert main([str(path)]) == 2


class TestProcessTransport:
    def spawn(self, mode, recorder=None):
        return ProcessTransport(
            [sys.executable, str(TESTS_DIR / "stdio_backend.py"), mode, "48"],
            recorder=recorder,
        )

    def test_embed_roundtrip_matches_stub(self):
        transport = self.spawn("embed")
        try:
            provider = RemoteEmbeddingProvider(transport, identity="proc-stub")
            assert provider.probe() == 48
            vectors = provider.embed(["hello world", "goodbye"])
            assert len(vectors) == 2
            expected = stub_embed("hello world", 48)
            assert np.allclose(np.array(vectors[0]), expected, atol=1e-6)
        finally:
            transport.close()

    def test_rerank_over_process(self):
        transport = self.spawn("rerank")
        try:
            backend = RemoteRerankBackend(transport)
            ranking = backend.rank("apple pie", [(1, "banana"), (2, "apple pie recipe")])
            assert ranking[0] == 2
        finally:
            transport.close()

    def test_judge_over_process(self):
        transport = self.spawn("judge")
        try:
            backend = RemoteJudgeBackend(transport)
            assert backend.judge("find me", "you can find me here") == "yes"
            assert backend.judge("find me", "nothing") == "no"
        finally:
            transport.close()

    def test_recorded_process_transcript_conforms(self, tmp_path):
        path = tmp_path / "proc.jsonl"
        transport = self.spawn("embed", recorder=TranscriptRecorder(path))
        try:
            provider = RemoteEmbeddingProvider(transport)
            provider.probe()
            provider.embed(["one", "two", "three"])
        finally:
            transport.close()
        assert validate_transcript_file(path) == []

    def test_unspawnable_backend_is_backend_error(self):
        transport = ProcessTransport(["/nonexistent/backend-binary"])
        with pytest.raises(BackendError):
            transport.request("embed", {"probe": True})

    def test_backend_error_response_raises(self):
        transport = self.spawn("embed")
        try:
            with pytest.raises(BackendError):
                transport.request("embed", {"texts": "not-a-list"})
        finally:
            transport.close()


class TestHttpTransport:
    def test_embed_roundtrip(self, http_backend, tmp_path):
        path = tmp_path / "http.jsonl"
        transport = HttpTransport(http_backend, recorder=TranscriptRecorder(path))
        provider = RemoteEmbeddingProvider(transport, identity="http-stub")
        assert provider.probe() == 48
        vectors = provider.embed(["alpha", "beta"])
        assert np.allclose(np.array(vectors[0]), stub_embed("alpha", 48), atol=1e-6)
        assert validate_transcript_file(path) == []

    def test_rerank_and_judge_endpoints(self, http_backend):
        transport = HttpTransport(http_backend)
        ranking = RemoteRerankBackend(transport).rank("q", [(1, "a"), (2, "b")])
        assert sorted(ranking) == [1, 2]
        assert RemoteJudgeBackend(transport).judge("x", "contains x here") == "yes"

    def test_unreachable_host_is_backend_error(self):
        transport = HttpTransport("http://127.0.0.1:9", timeout=0.2)
        with pytest.raises(BackendError):
            transport.request("embed", {"probe": True})
