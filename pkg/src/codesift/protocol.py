"""Wire-protocol schemas for the pluggable backends, plus transcript checking.

Three endpoints, each usable over a local HTTP socket or as line-delimited
JSON over a spawned process's stdin/stdout:

  /embed   {texts: [str...]} -> {embeddings: [[number...]...]}
           {probe: true}     -> {dimension: int}
  /rerank  {query: str, candidates: [{identifier: int, text: str}...]}
           -> {ranking: [int...]}
  /judge   {query: str, code: str} -> {answer: "yes"|"no"}

A transcript is a line-delimited file of {endpoint, request, response}
exchanges; validate_transcript re-checks every exchange against the schemas
and the cross-message constraints (embedding counts/dimensions, permutation
rankings). Run as a module to validate a recorded transcript file:

    python -m codesift.protocol transcript.jsonl
"""
from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any, Iterable

ENDPOINTS = ("embed", "rerank", "judge")


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def validate_embed_request(doc: Any) -> list[str]:
    problems: list[str] = []
    if not isinstance(doc, dict):
        return ["embed request must be an object"]
    if doc.get("probe") is True:
        return []
    texts = doc.get("texts")
    if not isinstance(texts, list) or not texts:
        problems.append("embed request needs a non-empty 'texts' array")
    elif not all(isinstance(t, str) for t in texts):
        problems.append("embed request 'texts' entries must be strings")
    return problems


def validate_embed_response(doc: Any, request: Any = None) -> list[str]:
    problems: list[str] = []
    if not isinstance(doc, dict):
        return ["embed response must be an object"]
    if isinstance(request, dict) and request.get("probe") is True:
        dim = doc.get("dimension")
        if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
            problems.append("probe response needs a positive integer 'dimension'")
        return problems
    embeddings = doc.get("embeddings")
    if not isinstance(embeddings, list):
        return ["embed response needs an 'embeddings' array"]
    widths = set()
    for i, vector in enumerate(embeddings):
        if not isinstance(vector, list) or not vector:
            problems.append(f"embedding {i} must be a non-empty array")
            continue
        if not all(_is_number(x) for x in vector):
            problems.append(f"embedding {i} must contain only numbers")
        widths.add(len(vector))
    if len(widths) > 1:
        problems.append(f"embeddings disagree on dimension: {sorted(widths)}")
    if isinstance(request, dict) and isinstance(request.get("texts"), list):
        if isinstance(embeddings, list) and len(embeddings) != len(request["texts"]):
            problems.append(
                f"{len(request['texts'])} texts but {len(embeddings)} embeddings"
            )
    return problems


def validate_rerank_request(doc: Any) -> list[str]:
    problems: list[str] = []
    if not isinstance(doc, dict):
        return ["rerank request must be an object"]
    if not isinstance(doc.get("query"), str):
        problems.append("rerank request needs a string 'query'")
    candidates = doc.get("candidates")
    if not isinstance(candidates, list) or not candidates:
        problems.append("rerank request needs a non-empty 'candidates' array")
        return problems
    identifiers = []
    for i, candidate in enumerate(candidates):
        if not isinstance(candidate, dict):
            problems.append(f"candidate {i} must be an object")
            continue
        ident = candidate.get("identifier")
        if not isinstance(ident, int) or isinstance(ident, bool):
            problems.append(f"candidate {i} needs an integer 'identifier'")
        else:
            identifiers.append(ident)
        if not isinstance(candidate.get("text"), str):
            problems.append(f"candidate {i} needs a string 'text'")
    if len(set(identifiers)) != len(identifiers):
        problems.append("candidate identifiers must be unique")
    return problems


def validate_rerank_response(doc: Any, request: Any = None) -> list[str]:
    problems: list[str] = []
    if not isinstance(doc, dict):
        return ["rerank response must be an object"]
    ranking = doc.get("ranking")
    if not isinstance(ranking, list):
        return ["rerank response needs a 'ranking' array"]
    if not all(isinstance(x, int) and not isinstance(x, bool) for x in ranking):
        problems.append("'ranking' must contain only integers")
        return problems
    if isinstance(request, dict) and isinstance(request.get("candidates"), list):
        expected = sorted(
            c.get("identifier") for c in request["candidates"] if isinstance(c, dict)
        )
        if sorted(ranking) != expected:
            problems.append(
                f"'ranking' must be a permutation of request identifiers {expected}, "
                f"got {sorted(ranking)}"
            )
    return problems


def validate_judge_request(doc: Any) -> list[str]:
    problems: list[str] = []
    if not isinstance(doc, dict):
        return ["judge request must be an object"]
    for key in ("query", "code"):
        if not isinstance(doc.get(key), str):
            problems.append(f"judge request needs a string '{key}'")
    return problems


def validate_judge_response(doc: Any, request: Any = None) -> list[str]:
    if not isinstance(doc, dict):
        return ["judge response must be an object"]
    if doc.get("answer") not in ("yes", "no"):
        return ["judge response 'answer' must be 'yes' or 'no'"]
    return []


_REQUEST_VALIDATORS = {
    "embed": validate_embed_request,
    "rerank": validate_rerank_request,
    "judge": validate_judge_request,
}
_RESPONSE_VALIDATORS = {
    "embed": validate_embed_response,
    "rerank": validate_rerank_response,
    "judge": validate_judge_response,
}


def validate_exchange(endpoint: str, request: Any, response: Any) -> list[str]:
    if endpoint not in ENDPOINTS:
        return [f"unknown endpoint {endpoint!r}"]
    problems = [f"request: {p}" for p in _REQUEST_VALIDATORS[endpoint](request)]
    problems += [f"response: {p}" for p in _RESPONSE_VALIDATORS[endpoint](response, request)]
    return problems


def validate_transcript(lines: Iterable[str]) -> list[str]:
    """All violations across a transcript; empty means fully conformant.

    Also enforces session-level consistency: every embed response must agree
    with the probed dimension once one is established.
    """
    violations: list[str] = []
    probed_dimension: int | None = None
    for line_no, raw in enumerate(lines, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            violations.append(f"line {line_no}: invalid JSON ({exc.msg})")
            continue
        if not isinstance(doc, dict) or not {"endpoint", "request", "response"} <= set(doc):
            violations.append(f"line {line_no}: exchange needs endpoint/request/response")
            continue
        endpoint, request, response = doc["endpoint"], doc["request"], doc["response"]
        for problem in validate_exchange(endpoint, request, response):
            violations.append(f"line {line_no}: {problem}")
        if endpoint == "embed" and isinstance(response, dict):
            if isinstance(request, dict) and request.get("probe") is True:
                dim = response.get("dimension")
                if isinstance(dim, int) and not isinstance(dim, bool):
                    if probed_dimension is not None and dim != probed_dimension:
                        violations.append(
                            f"line {line_no}: probe dimension changed "
                            f"{probed_dimension} -> {dim}"
                        )
                    probed_dimension = dim
            else:
                embeddings = response.get("embeddings")
                if probed_dimension is not None and isinstance(embeddings, list):
                    for i, vector in enumerate(embeddings):
                        if isinstance(vector, list) and len(vector) != probed_dimension:
                            violations.append(
                                f"line {line_no}: embedding {i} has dimension "
                                f"{len(vector)}, probe said {probed_dimension}"
                            )
    return violations


def validate_transcript_file(path: str | Path) -> list[str]:
    with Path(path).open("r", encoding="utf-8") as handle:
        return validate_transcript(handle)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m codesift.protocol <transcript.jsonl>", file=sys.stderr)
        return 1
    violations = validate_transcript_file(argv[0])
    if violations:
        for violation in violations:
            print(violation, file=sys.stderr)
        print(f"FAIL: {len(violations)} schema violation(s)", file=sys.stderr)
        return 2
    print("OK: transcript conforms to the backend wire protocols")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
