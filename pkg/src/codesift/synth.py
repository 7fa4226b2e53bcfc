"""Seeded synthetic corpora for tests, fixtures, and the desk-scale experiment.

Pairs are built from invented topic vocabularies so that the hashing stub
embeddings expose the structure the pipeline cares about: a pair's text and
code share most of their character 3-grams (high diagonal score), pairs from
the same topic are mutually similar (hard negatives), and cross-topic pairs
are mostly unrelated. A configurable fraction of pairs gets its code swapped
with another topic's, producing the noisy positives that consistency
filtering exists to remove.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import PairRecord
from .localize import FunctionRecord, GoldLabels

_LETTERS = "abcdefghijklmnopqrstuvwxyz"

_TEXT_SHAPES = (
    "returns the {0} {1} for a {2} using {3}",
    "compute the {0} of each {1} {2} given {3}",
    "build a {0} {1} from the {2} via {3}",
    "check whether the {0} {1} matches {2} under {3}",
)

_CODE_SHAPES = (
    'def {4}_{0}({2}):\n    """{6}"""\n    value = {1}({2}, {5})\n    return {3}(value)',
    'def {0}_{4}({3}):\n    """{6}"""\n    {1} = {5}({3})\n    return {2}({1})',
    'def {4}_make({0}, {1}):\n    """{6}"""\n    return {2}({0}) + {3}({1}, {5})',
)

STYLES = ("echo", "subtle")


def _word(rng: np.random.Generator, length: int = 6) -> str:
    return "".join(_LETTERS[i] for i in rng.integers(0, len(_LETTERS), size=length))


@dataclass
class TopicCorpus:
    records: list[PairRecord]
    topic_of: dict[str, int]
    noisy_ids: set[str] = field(default_factory=set)
    held_out_ids: list[str] = field(default_factory=list)

    @property
    def training_records(self) -> list[PairRecord]:
        held = set(self.held_out_ids)
        return [r for r in self.records if r.id not in held]

    @property
    def held_out_records(self) -> list[PairRecord]:
        by_id = {r.id: r for r in self.records}
        return [by_id[i] for i in self.held_out_ids]


def _render_pair_echo(rng: np.random.Generator, topic_words: list[str]) -> tuple[str, str]:
    """Text from topic + pair-unique words; code echoes it as its docstring.

    The echo keeps the pair's diagonal stub similarity high (as docstring-mined
    corpora are), while same-topic pairs share only topic words: similar, but
    clearly below the diagonal. Suits demos at the published delta = 0.7.
    """
    picked = [topic_words[i] for i in rng.choice(len(topic_words), size=4, replace=False)]
    unique = [_word(rng), _word(rng)]
    slots = picked[:3] + [unique[0]]
    text = _TEXT_SHAPES[int(rng.integers(len(_TEXT_SHAPES)))].format(*slots)
    code_slots = picked + unique + [text]
    code = _CODE_SHAPES[int(rng.integers(len(_CODE_SHAPES)))].format(*code_slots)
    return text, code


def _render_pair_subtle(
    rng: np.random.Generator, topic_words: list[str], unique_len: int = 4
) -> tuple[str, str]:
    """Paraphrase family: all pairs of a topic share its words verbatim and
    differ only in one short pair-unique word.

    Same-topic codes end up almost interchangeable, so telling a query's own
    code apart is a genuinely fine-grained distinction: the regime where hard
    negatives matter and easy in-batch negatives do not.
    """
    u = _word(rng, unique_len)
    text = (
        f"compute the {topic_words[0]} {topic_words[1]} of "
        f"{topic_words[2]} {topic_words[3]} via {u}"
    )
    code = (
        f"def {topic_words[0]}_{topic_words[1]}({topic_words[2]}):\n"
        f"    return {topic_words[3]}({topic_words[2]}, {u}_{topic_words[4]})"
    )
    return text, code


def make_topic_corpus(
    topics: int = 200,
    per_topic: int = 10,
    seed: int = 0,
    noise_rate: float = 0.25,
    held_out_per_topic: int = 2,
    language: str = "synthetic",
    style: str = "echo",
) -> TopicCorpus:
    """Topic-structured pair corpus with optional mismatched-code noise.

    Noise never touches held-out pairs, so evaluation queries are always
    clean; noisy pairs receive a code rendered from a different topic's
    vocabulary, making their diagonal similarity low.
    """
    if style not in STYLES:
        raise ValueError(f"style must be one of {STYLES}, got {style!r}")
    rng = np.random.default_rng([seed, 0x73796E74])
    vocab = [[_word(rng) for _ in range(6)] for _ in range(topics)]
    render = _render_pair_echo if style == "echo" else _render_pair_subtle
    records: list[PairRecord] = []
    topic_of: dict[str, int] = {}
    noisy_ids: set[str] = set()
    held_out_ids: list[str] = []

    width = len(str(topics * per_topic))
    for topic in range(topics):
        for j in range(per_topic):
            record_id = f"p{topic * per_topic + j:0{width}d}"
            text, code = render(rng, vocab[topic])
            is_held_out = j < held_out_per_topic
            if not is_held_out and rng.random() < noise_rate:
                other = int(rng.integers(topics))
                if other == topic:
                    other = (other + 1) % topics
                _, code = render(rng, vocab[other])
                noisy_ids.add(record_id)
            records.append(
                PairRecord(id=record_id, text=text, code=code, language=language)
            )
            topic_of[record_id] = topic
            if is_held_out:
                held_out_ids.append(record_id)
    return TopicCorpus(
        records=records, topic_of=topic_of, noisy_ids=noisy_ids, held_out_ids=held_out_ids
    )


def make_pair_corpus(
    n: int = 500,
    seed: int = 0,
    noise_rate: float = 0.2,
    per_topic: int = 5,
    language: str = "synthetic",
) -> list[PairRecord]:
    """Flat synthetic pair corpus: ceil(n / per_topic) topics, n records."""
    topics = (n + per_topic - 1) // per_topic
    corpus = make_topic_corpus(
        topics=topics,
        per_topic=per_topic,
        seed=seed,
        noise_rate=noise_rate,
        held_out_per_topic=0,
        language=language,
    )
    return corpus.records[:n]


def make_localization_benchmark(
    instances: int = 20,
    files: int = 12,
    functions_per_file: int = 4,
    seed: int = 0,
) -> tuple[list[FunctionRecord], list[GoldLabels]]:
    """Synthetic repository snapshot plus issues with known gold functions.

    Every function gets its own rare token; each issue mentions the rare
    tokens of its gold functions, so a reasonable retriever can find them and
    a hand check of the expected ranking stays easy.
    """
    rng = np.random.default_rng([seed, 0x6C6F6361])
    snapshot: list[FunctionRecord] = []
    rare_tokens: dict[str, str] = {}
    for f in range(files):
        module = _word(rng, 5)
        for g in range(functions_per_file):
            function_id = f"fn_{f:02d}_{g}"
            rare = f"{_word(rng, 7)}{_word(rng, 7)}"
            name = f"{module}_{_word(rng, 4)}"
            docstring = f"handle the {rare} case for {module} records"
            body = (
                f"def {name}(item):\n"
                f"    if item.kind == '{rare}':\n"
                f"        return {module}_apply(item)\n"
                f"    return None"
            )
            snapshot.append(
                FunctionRecord(
                    function_id=function_id,
                    file_path=f"src/{module}_{f:02d}.py",
                    qualified_name=name,
                    docstring=docstring,
                    body=body,
                )
            )
            rare_tokens[function_id] = rare

    function_ids = [fn.function_id for fn in snapshot]
    file_of = {fn.function_id: fn.file_path for fn in snapshot}
    labels: list[GoldLabels] = []
    for i in range(instances):
        gold_count = int(rng.integers(1, 4))
        picked = rng.choice(len(function_ids), size=gold_count, replace=False)
        gold = [function_ids[j] for j in sorted(picked.tolist())]
        mentions = ", ".join(rare_tokens[fid] for fid in gold)
        issue = (
            f"crash report {i}: processing fails when the record kind is "
            f"{mentions}; the handler returns None instead of applying the fix"
        )
        labels.append(
            GoldLabels(
                instance_id=f"inst_{i:02d}",
                issue=issue,
                gold_function_ids=frozenset(gold),
                gold_files=frozenset(file_of[fid] for fid in gold),
            )
        )
    return snapshot, labels
