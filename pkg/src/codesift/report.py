"""Matplotlib figure rendering for the report-producing stages.

Every report-writing command drops a PNG next to its delimited output. All
figures render through the Agg backend with pinned size/dpi and constant
metadata, so rerunning a stage on identical inputs reproduces identical
bytes (the pipeline's determinism contract covers figures too).
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .curation import AuditReport  # noqa: E402
from .localize import LocalizationReport  # noqa: E402
from .ranker import MetricReport  # noqa: E402

_SAVE_KW = dict(dpi=110, metadata={"Software": "codesift"})


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_stats_figure(per_language: Mapping[str, dict], path: str | Path) -> Path:
    """Kept/dropped bars per language, with drop reasons stacked."""
    languages = sorted(per_language)
    reasons = sorted({r for lang in languages for r in per_language[lang]["reasons"]})
    fig, ax = plt.subplots(figsize=(7, 4))
    kept = [per_language[lang]["kept"] for lang in languages]
    ax.bar(languages, kept, label="kept", color="#4c9f70")
    bottoms = list(kept)
    palette = plt.cm.OrRd([0.35 + 0.5 * i / max(len(reasons), 1) for i in range(len(reasons))])
    for color, reason in zip(palette, reasons):
        counts = [per_language[lang]["reasons"].get(reason, 0) for lang in languages]
        ax.bar(languages, counts, bottom=bottoms, label=reason, color=color)
        bottoms = [b + c for b, c in zip(bottoms, counts)]
    ax.set_ylabel("records")
    ax.set_title("ingest results by language")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _finish(fig, path)


def save_filter_figure(kept: int, drop_reasons: Mapping[str, int], path: str | Path) -> Path:
    labels = ["kept"] + sorted(drop_reasons)
    values = [kept] + [drop_reasons[k] for k in sorted(drop_reasons)]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    colors = ["#4c9f70"] + ["#c65d4a"] * (len(labels) - 1)
    ax.bar(labels, values, color=colors)
    ax.set_ylabel("pairs")
    ax.set_title("consistency filtering outcome")
    fig.tight_layout()
    return _finish(fig, path)


def save_trace_figure(
    trace: Sequence[dict], evals: Sequence[dict], path: str | Path
) -> Path:
    """Loss curve with the temperature schedule on a twin axis; eval marks."""
    steps = [r["step"] for r in trace]
    losses = [r["loss"] for r in trace]
    taus = [r["tau_prime"] for r in trace]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, color="#2c5f8a", lw=1.0, label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    twin = ax.twinx()
    twin.plot(steps, taus, color="#c65d4a", lw=1.0, ls="--", label="sampling temperature")
    twin.set_ylabel("tau'")
    if evals:
        eval_steps = [r["step"] for r in evals]
        eval_mrr = [r["mrr"] for r in evals]
        ax.plot(eval_steps, eval_mrr, "o-", color="#4c9f70", ms=4, label="held-out MRR")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = twin.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, fontsize=8)
    ax.set_title("toy contrastive training")
    fig.tight_layout()
    return _finish(fig, path)


def save_metric_figure(report: MetricReport, path: str | Path) -> Path:
    values = [report.per_query[q] for q in sorted(report.per_query)]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.hist(values, bins=20, range=(0.0, 1.0), color="#2c5f8a")
    ax.axvline(report.mean, color="#c65d4a", ls="--",
               label=f"mean {report.mean:.4f}")
    ax.set_xlabel(f"{report.metric.upper()}@{report.k} per query")
    ax.set_ylabel("queries")
    ax.legend(fontsize=8)
    ax.set_title("retrieval metric distribution")
    fig.tight_layout()
    return _finish(fig, path)


def save_localization_figure(report: LocalizationReport, path: str | Path) -> Path:
    labels = [f"file top-{k}" for k in sorted(report.file_accuracy)] + [
        f"func top-{k}" for k in sorted(report.function_accuracy)
    ]
    values = [report.file_accuracy[k] for k in sorted(report.file_accuracy)] + [
        report.function_accuracy[k] for k in sorted(report.function_accuracy)
    ]
    fig, ax = plt.subplots(figsize=(6.5, 3.5))
    ax.bar(labels, values, color="#2c5f8a")
    ax.set_ylim(0, 1.0)
    ax.set_ylabel("accuracy")
    ax.set_title(f"localization accuracy ({report.mode} hit)")
    for i, value in enumerate(values):
        ax.text(i, value + 0.02, f"{value:.2f}", ha="center", fontsize=8)
    fig.tight_layout()
    return _finish(fig, path)


def save_audit_figure(report: AuditReport, path: str | Path) -> Path:
    labels = sorted(report.per_language) + ["overall"]
    values = [report.per_language[k] for k in sorted(report.per_language)]
    values.append(report.percent_correct)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(labels, values, color="#4c9f70")
    ax.set_ylim(0, 100)
    ax.set_ylabel("% judged correct")
    ax.set_title("pair-correctness audit")
    fig.tight_layout()
    return _finish(fig, path)


def save_experiment_figure(
    trace_curriculum: Sequence[dict],
    trace_baseline: Sequence[dict],
    mrr_curriculum: float,
    mrr_baseline: float,
    path: str | Path,
) -> Path:
    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.5))
    left.plot([r["step"] for r in trace_curriculum], [r["loss"] for r in trace_curriculum],
              label="curriculum", color="#2c5f8a", lw=0.9)
    left.plot([r["step"] for r in trace_baseline], [r["loss"] for r in trace_baseline],
              label="in-batch baseline", color="#c65d4a", lw=0.9)
    left.set_xlabel("step")
    left.set_ylabel("loss")
    left.legend(fontsize=8)
    right.bar(["curriculum", "baseline"], [mrr_curriculum, mrr_baseline],
              color=["#2c5f8a", "#c65d4a"])
    right.set_ylim(0, 1.0)
    right.set_ylabel("held-out MRR@10")
    for i, value in enumerate([mrr_curriculum, mrr_baseline]):
        right.text(i, value + 0.02, f"{value:.3f}", ha="center", fontsize=9)
    fig.tight_layout()
    return _finish(fig, path)
