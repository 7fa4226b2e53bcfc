#!/usr/bin/env python3
"""Regenerate the bundled synthetic fixtures (checked into fixtures/)."""
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from codesift.corpus import write_pairs  # noqa: E402
from codesift.localize import write_gold, write_snapshot  # noqa: E402
from codesift.synth import make_localization_benchmark, make_pair_corpus  # noqa: E402


def main() -> int:
    fixtures = ROOT / "fixtures"
    fixtures.mkdir(exist_ok=True)
    write_pairs(make_pair_corpus(n=500, seed=20240501), fixtures / "pairs_500.jsonl")
    snapshot, gold = make_localization_benchmark(instances=20, seed=20240501)
    write_snapshot(snapshot, fixtures / "snapshot.jsonl")
    write_gold(gold, fixtures / "gold.jsonl")
    print(f"fixtures written to {fixtures}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
