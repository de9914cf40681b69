"""Loss functions for bias-aware training.

The main classification loss is a per-sample reweighted cross entropy:
each sample's weight is (1 - alpha)^gamma, where alpha is the probability
the question-only head assigns to the true answer.  Samples the question
alone already answers get alpha near 1 and are down-weighted toward zero;
samples that need the image keep weight near 1.  Two reference ways of
producing alpha are included: from a precomputed per-question-type answer
table, and from the main model's own prediction (the multi-class focal
rule).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .autodiff import (
    Tensor,
    add,
    cross_entropy_per_sample,
    softmax,
    weighted_cross_entropy,
)
from .errors import ShapeError


class VariantKind(str, Enum):
    CE = "ce"
    LPF = "lpf"
    FOCAL = "focal"
    PRECOMPUTED = "precomputed"


@dataclass(frozen=True)
class LossVariant:
    """Which alpha source to use and how aggressively to down-weight.

    ``gamma`` is ignored for plain CE and pinned to 1 for the focal and
    precomputed variants; only the feedback variant sweeps it.
    """
    kind: VariantKind
    gamma: float = 0.0

    def __post_init__(self):
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.kind in (VariantKind.FOCAL, VariantKind.PRECOMPUTED) and self.gamma != 1.0:
            object.__setattr__(self, "gamma", 1.0)

    @classmethod
    def ce(cls) -> "LossVariant":
        return cls(VariantKind.CE, 0.0)

    @classmethod
    def lpf(cls, gamma: float) -> "LossVariant":
        return cls(VariantKind.LPF, gamma)

    @classmethod
    def focal(cls) -> "LossVariant":
        return cls(VariantKind.FOCAL, 1.0)

    @classmethod
    def precomputed(cls) -> "LossVariant":
        return cls(VariantKind.PRECOMPUTED, 1.0)


class PriorTable:
    """Per-question-type probability rows over the full answer vocabulary."""

    def __init__(self, table: np.ndarray):
        t = np.asarray(table, dtype=np.float64)
        if t.ndim != 2:
            raise ShapeError(f"prior table must be 2-D, got shape {t.shape}")
        if t.size and t.min() < 0.0:
            raise ValueError("prior table has negative entries")
        sums = t.sum(axis=1)
        if t.size and np.abs(sums - 1.0).max() > 1e-9:
            worst = int(np.abs(sums - 1.0).argmax())
            raise ValueError(f"prior row {worst} sums to {sums[worst]}, not 1")
        self.table = t

    @property
    def num_qtypes(self) -> int:
        return self.table.shape[0]

    @property
    def num_answers(self) -> int:
        return self.table.shape[1]

    def row(self, qtype_id: int) -> np.ndarray:
        if not 0 <= qtype_id < self.num_qtypes:
            raise KeyError(f"no prior row for question type {qtype_id} (have {self.num_qtypes})")
        return self.table[qtype_id]

    def __eq__(self, other) -> bool:
        return isinstance(other, PriorTable) and np.array_equal(self.table, other.table)


@dataclass
class BatchLossRecord:
    """Per-batch observability: what the reweighting actually did."""
    ce: np.ndarray      # per-sample unweighted cross entropy
    alpha: np.ndarray   # per-sample bias factor
    beta: np.ndarray    # per-sample weight (1 - alpha)^gamma
    lpf: float          # reweighted classification loss (batch mean)
    qo: float           # question-only loss (batch mean)
    total: float


def alpha_from_qo(logits_qo, targets) -> np.ndarray:
    """Bias factor: softmax probability of the true answer, as a constant.

    The result is a plain array with no graph attached, so nothing that
    consumes it can backpropagate into the question-only head.
    """
    data = logits_qo.data if isinstance(logits_qo, Tensor) else np.asarray(logits_qo, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f"expected [B, A] logits, got shape {data.shape}")
    t = np.asarray(targets)
    if t.size and (t.min() < 0 or t.max() >= data.shape[1]):
        raise ShapeError(f"target out of range [0, {data.shape[1]})")
    probs = softmax(data)
    return probs[np.arange(len(t)), t]


def beta(alpha, gamma: float):
    """Modulating weight (1 - alpha)^gamma; 1 when gamma is 0."""
    if gamma < 0.0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    a = np.asarray(alpha, dtype=np.float64)
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got range [{a.min()}, {a.max()}]")
    out = np.power(1.0 - a, gamma)
    return float(out) if np.isscalar(alpha) or np.ndim(alpha) == 0 else out


def lpf_loss(logits_vqa: Tensor, targets, alpha, gamma: float) -> Tensor:
    """Reweighted classification loss with constant per-sample weights."""
    weights = np.atleast_1d(np.asarray(beta(alpha, gamma), dtype=np.float64))
    return weighted_cross_entropy(logits_vqa, targets, weights)


def qo_loss(logits_qo: Tensor, targets) -> Tensor:
    """Plain mean cross entropy on the question-only logits."""
    batch = logits_qo.data.shape[0]
    return weighted_cross_entropy(logits_qo, targets, np.ones(batch))


def total_loss(l_lpf: Tensor, l_qo: Tensor) -> Tensor:
    """Unweighted sum of the two branch losses."""
    return add(l_lpf, l_qo)


def variant_alpha(kind: VariantKind, logits_vqa=None, priors: PriorTable | None = None,
                  qtype_ids=None, targets=None) -> np.ndarray:
    """Alpha for the focal and precomputed variants.

    FOCAL reads the true-answer probability off the main model's own
    logits (detached); PRECOMPUTED looks it up in an empirical
    per-question-type answer table.
    """
    if kind == VariantKind.FOCAL:
        if logits_vqa is None:
            raise ValueError("focal alpha needs the main model logits")
        return alpha_from_qo(logits_vqa, targets)
    if kind == VariantKind.PRECOMPUTED:
        if priors is None or qtype_ids is None:
            raise ValueError("precomputed alpha needs a prior table and question-type ids")
        q = np.asarray(qtype_ids)
        t = np.asarray(targets)
        if q.size and (q.min() < 0 or q.max() >= priors.num_qtypes):
            raise KeyError(f"no prior row for question type {q.max()} (have {priors.num_qtypes})")
        if t.size and (t.min() < 0 or t.max() >= priors.num_answers):
            raise ShapeError(f"target out of range [0, {priors.num_answers})")
        return priors.table[q, t]
    raise ValueError(f"variant {kind} does not define its own alpha")


def build_prior_table(split) -> PriorTable:
    """Empirical per-question-type answer distribution of a split.

    Every question type must occur at least once; rows are normalized
    counts over the full answer vocabulary.
    """
    samples = split.samples
    if not samples:
        raise ValueError("cannot build a prior table from an empty split")
    return prior_table_from_counts(
        np.array([s.qtype_id for s in samples]),
        np.array([s.answer_id for s in samples]),
        split.num_qtypes,
        split.num_answers,
    )


def prior_table_from_counts(qtype_ids: np.ndarray, answer_ids: np.ndarray,
                            num_qtypes: int, num_answers: int) -> PriorTable:
    counts = np.zeros((num_qtypes, num_answers))
    np.add.at(counts, (qtype_ids, answer_ids), 1.0)
    totals = counts.sum(axis=1)
    if (totals == 0).any():
        missing = int(np.argmin(totals))
        raise ValueError(f"question type {missing} has no samples")
    return PriorTable(counts / totals[:, None])


def batch_objective(logits_vqa: Tensor, logits_qo: Tensor, targets,
                    variant: LossVariant, priors: PriorTable | None = None,
                    qtype_ids=None) -> tuple[Tensor, BatchLossRecord]:
    """Assemble the full training objective for one batch.

    Returns the differentiable total loss plus a record of the per-sample
    quantities.  For plain CE the weights are identically 1 (alpha is
    still logged for observability, with an effective gamma of 0).
    """
    t = np.asarray(targets)
    if variant.kind in (VariantKind.CE, VariantKind.LPF):
        alpha = alpha_from_qo(logits_qo, t)
        gamma = 0.0 if variant.kind == VariantKind.CE else variant.gamma
    else:
        alpha = variant_alpha(variant.kind, logits_vqa=logits_vqa, priors=priors,
                              qtype_ids=qtype_ids, targets=t)
        gamma = variant.gamma
    l_lpf = lpf_loss(logits_vqa, t, alpha, gamma)
    l_qo = qo_loss(logits_qo, t)
    total = total_loss(l_lpf, l_qo)
    record = BatchLossRecord(
        ce=cross_entropy_per_sample(logits_vqa.data, t),
        alpha=np.asarray(alpha, dtype=np.float64),
        beta=np.atleast_1d(np.asarray(beta(alpha, gamma), dtype=np.float64)),
        lpf=float(l_lpf.data),
        qo=float(l_qo.data),
        total=float(total.data),
    )
    return total, record
