"""Toy shared-weight bi-encoder with an exactly differentiated InfoNCE loss.

The encoder is a single linear map followed by L2 normalization: the smallest
model for which the contrastive gradient is nontrivial while staying fully
analytic. Every anchor is contrasted against all in-batch positives plus all
sampled hard negatives, so each positive faces N*(M+1)-1 negatives.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .curation import CuratedPair, NegativePool
from .errors import DataError, TrainingDivergedError
from .sampler import CurriculumSchedule, TrainingBatch, emit_batches

DEFAULT_TAU = 0.07


def encode(w: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Project feature rows through w and L2-normalize each row."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != w.shape[0]:
        raise DataError(
            f"feature shape {features.shape} incompatible with weights {w.shape}"
        )
    projected = features @ w
    norms = np.linalg.norm(projected, axis=1)
    if np.any(norms == 0.0):
        raise DataError("zero-norm projection; cannot normalize")
    return projected / norms[:, None]


@dataclass
class ContrastiveBatchTensors:
    """Unit-norm anchor/positive/negative embeddings plus the loss temperature."""

    anchors: np.ndarray  # (N, d)
    positives: np.ndarray  # (N, d)
    negatives: np.ndarray  # (N*M, d); M may be zero
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        n, d = self.anchors.shape
        if self.positives.shape != (n, d):
            raise DataError("positives must match anchors in shape")
        if self.negatives.size and self.negatives.shape[1] != d:
            raise DataError("negatives must share the embedding dimension")
        if self.negatives.size and self.negatives.shape[0] % n != 0:
            raise DataError("negative count must be a multiple of the batch size")
        if self.tau <= 0:
            raise DataError("tau must be positive")
        for name, rows in (("anchors", self.anchors), ("positives", self.positives),
                           ("negatives", self.negatives)):
            if rows.size:
                norms = np.linalg.norm(rows.astype(np.float64), axis=1)
                if not np.allclose(norms, 1.0, atol=1e-5):
                    raise DataError(f"{name} rows must be unit-norm")

    @property
    def n(self) -> int:
        return self.anchors.shape[0]

    @property
    def m(self) -> int:
        return 0 if self.negatives.size == 0 else self.negatives.shape[0] // self.n


def infonce_loss(batch: ContrastiveBatchTensors) -> float:
    """Mean InfoNCE over the batch.

    Per anchor i the denominator runs over every in-batch positive (its own
    included) and every hard negative; stabilized by max subtraction.
    """
    anchors = batch.anchors.astype(np.float64)
    candidates = np.vstack([batch.positives, batch.negatives]).astype(np.float64) \
        if batch.negatives.size else batch.positives.astype(np.float64)
    logits = (anchors @ candidates.T) / batch.tau
    peak = logits.max(axis=1, keepdims=True)
    log_denominator = np.log(np.exp(logits - peak).sum(axis=1)) + peak[:, 0]
    positive_logit = np.diag(logits[:, : batch.n])
    return float(np.mean(log_denominator - positive_logit))


def _backprop_unit_rows(
    features: np.ndarray, projected: np.ndarray, unit: np.ndarray, grad_unit: np.ndarray
) -> np.ndarray:
    """Gradient w.r.t. W of rows normalize(features @ W), given grad on the rows."""
    norms = np.linalg.norm(projected, axis=1, keepdims=True)
    inner = np.sum(grad_unit * unit, axis=1, keepdims=True)
    grad_projected = (grad_unit - inner * unit) / norms
    return features.T @ grad_projected


def infonce_grad(
    w: np.ndarray,
    anchor_features: np.ndarray,
    positive_features: np.ndarray,
    negative_features: np.ndarray,
    tau: float = DEFAULT_TAU,
) -> tuple[float, np.ndarray]:
    """Loss and its exact gradient w.r.t. the shared weight matrix.

    Gradient flows through both sides of every similarity: anchors, in-batch
    positives, and negatives are all projections through the same w.
    """
    anchor_features = np.asarray(anchor_features, dtype=np.float64)
    positive_features = np.asarray(positive_features, dtype=np.float64)
    negative_features = np.asarray(negative_features, dtype=np.float64)
    n = anchor_features.shape[0]
    has_negatives = negative_features.size > 0

    proj_a = anchor_features @ w
    proj_p = positive_features @ w
    norm_a = np.linalg.norm(proj_a, axis=1)
    norm_p = np.linalg.norm(proj_p, axis=1)
    if np.any(norm_a == 0.0) or np.any(norm_p == 0.0):
        raise DataError("zero-norm projection; cannot normalize")
    h_a = proj_a / norm_a[:, None]
    h_p = proj_p / norm_p[:, None]
    if has_negatives:
        proj_g = negative_features @ w
        norm_g = np.linalg.norm(proj_g, axis=1)
        if np.any(norm_g == 0.0):
            raise DataError("zero-norm projection; cannot normalize")
        h_g = proj_g / norm_g[:, None]
        candidates = np.vstack([h_p, h_g])
    else:
        candidates = h_p

    logits = (h_a @ candidates.T) / tau
    peak = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - peak)
    probs = expd / expd.sum(axis=1, keepdims=True)
    log_denominator = np.log(expd.sum(axis=1)) + peak[:, 0]
    loss = float(np.mean(log_denominator - np.diag(logits[:, :n])))

    grad_logits = probs.copy()
    grad_logits[np.arange(n), np.arange(n)] -= 1.0
    grad_sims = grad_logits / (n * tau)

    grad_h_a = grad_sims @ candidates
    grad_candidates = grad_sims.T @ h_a

    grad_w = _backprop_unit_rows(anchor_features, proj_a, h_a, grad_h_a)
    grad_w += _backprop_unit_rows(positive_features, proj_p, h_p, grad_candidates[:n])
    if has_negatives:
        grad_w += _backprop_unit_rows(negative_features, proj_g, h_g, grad_candidates[n:])
    return loss, grad_w


@dataclass
class ToyTrainConfig:
    feature_dim: int
    embed_dim: int
    n: int
    m: int
    steps: int
    tau: float = DEFAULT_TAU
    lr: float = 0.5
    eval_every: int = 50
    eval_k: int = 10
    seed: int = 0
    tau_start: float = 0.05
    tau_end: float = 0.001

    def schedule(self) -> CurriculumSchedule:
        return CurriculumSchedule(self.tau_start, self.tau_end, self.steps)


@dataclass
class ToyTrainResult:
    weights: np.ndarray
    trace: list[dict] = field(default_factory=list)  # {step, tau_prime, loss} lines
    evals: list[dict] = field(default_factory=list)  # {step, mrr} records

    def write_trace(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as handle:
            records = self.trace + self.evals
            records.sort(key=lambda r: (r["step"], "mrr" in r))
            for record in records:
                handle.write(json.dumps(record, sort_keys=True) + "\n")


def held_out_mrr(
    w: np.ndarray,
    query_features: np.ndarray,
    candidate_features: np.ndarray,
    gold_index: Sequence[int],
    k: int = 10,
) -> float:
    """MRR@k of each query's gold candidate under the current projection."""
    h_q = encode(w, query_features)
    h_c = encode(w, candidate_features)
    scores = h_q @ h_c.T
    total = 0.0
    for i, gold in enumerate(gold_index):
        row = scores[i]
        gold_score = row[gold]
        rank = int(np.sum(row > gold_score)) + int(np.sum((row == gold_score).nonzero()[0] < gold)) + 1
        if rank <= k:
            total += 1.0 / rank
    return total / len(gold_index)


def train_toy(
    config: ToyTrainConfig,
    text_features: Mapping[str, np.ndarray],
    code_features: Mapping[str, np.ndarray],
    curated: Sequence[CuratedPair],
    pools: Mapping[str, NegativePool],
    eval_fn: Callable[[np.ndarray], float] | None = None,
    batches: Iterable[TrainingBatch] | None = None,
) -> ToyTrainResult:
    """Plain gradient descent on the shared projection, deterministic per seed.

    Batches default to the curriculum sampler stream; pass `batches` to train
    on an externally produced stream (e.g. the random-negative baseline).
    """
    rng = np.random.default_rng([config.seed, 0x746F7954])
    w = rng.normal(scale=1.0 / math.sqrt(config.feature_dim),
                   size=(config.feature_dim, config.embed_dim))

    if batches is None:
        batches = emit_batches(
            curated, pools, config.schedule(), config.n, config.m, config.seed
        )

    result = ToyTrainResult(weights=w)
    for batch in batches:
        anchor = np.stack([text_features[item.query_id] for item in batch.items])
        positive = np.stack([code_features[item.positive_id] for item in batch.items])
        if batch.items[0].negative_ids:
            negative = np.stack(
                [code_features[nid] for item in batch.items for nid in item.negative_ids]
            )
        else:
            negative = np.zeros((0, config.feature_dim))
        loss, grad = infonce_grad(w, anchor, positive, negative, tau=config.tau)
        if not math.isfinite(loss):
            raise TrainingDivergedError(batch.step)
        w = w - config.lr * grad
        result.trace.append(
            {"step": batch.step, "tau_prime": batch.tau_prime, "loss": loss}
        )
        if eval_fn is not None and config.eval_every > 0 and (batch.step + 1) % config.eval_every == 0:
            result.evals.append({"step": batch.step, "mrr": float(eval_fn(w))})
    result.weights = w
    if eval_fn is not None and (not result.evals or result.evals[-1]["step"] != config.steps - 1):
        result.evals.append({"step": config.steps - 1, "mrr": float(eval_fn(w))})
    return result
