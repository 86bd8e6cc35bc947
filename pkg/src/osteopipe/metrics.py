"""Evaluation metrics: sensitivity, specificity, ROC AUC and cross-fold
mean with 95% Student-t confidence intervals.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .types import DatasetManifest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def sensitivity(c: ConfusionCounts) -> float:
    """True positive rate TP / (TP + FN)."""
    if c.tp + c.fn == 0:
        raise ValueError("sensitivity undefined: no positives")
    return c.tp / (c.tp + c.fn)


def specificity(c: ConfusionCounts) -> float:
    """True negative rate TN / (TN + FP)."""
    if c.tn + c.fp == 0:
        raise ValueError("specificity undefined: no negatives")
    return c.tn / (c.tn + c.fp)


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative, ties 1/2.

    Computed from average ranks (Mann-Whitney), which equals the
    trapezoidal area under the ROC curve over all distinct thresholds.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc requires both classes present")
    ranks = stats.rankdata(scores, method="average")
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def student_t_cdf(t: float, df: int) -> float:
    """Student-t CDF through the regularized incomplete beta function."""
    if df < 1:
        raise ValueError("df must be >= 1")
    x = df / (df + t * t)
    tail = 0.5 * float(special.betainc(df / 2.0, 0.5, x))
    return 1.0 - tail if t >= 0 else tail


def student_t_quantile(p: float, df: int, tol: float = 1e-9) -> float:
    """Inverse Student-t CDF by bisection, accurate well below 1e-6.

    The CDF is evaluated through the incomplete beta function; the
    quantile is bracketed by doubling and then bisected to ``tol``.
    """
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie in (0, 1)")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -student_t_quantile(1.0 - p, df, tol)
    hi = 1.0
    while student_t_cdf(hi, df) < p:
        hi *= 2.0
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if student_t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class FoldSummary:
    """Per-fold metric values with their mean and t-interval."""

    per_fold: tuple[float, ...]
    mean: float
    ci_low: float
    ci_high: float

    def formatted(self, decimals: int = 3) -> str:
        f = f"{{:.{decimals}f}}"
        return f"{f.format(self.mean)} ({f.format(self.ci_low)}–{f.format(self.ci_high)})"

    def to_dict(self) -> dict:
        return {
            "per_fold": list(self.per_fold),
            "mean": self.mean,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "formatted": self.formatted(),
        }


def t_confidence_interval(values, level: float = 0.95) -> FoldSummary:
    """Mean +/- t-quantile * s / sqrt(n) with sample standard deviation."""
    values = [float(v) for v in values]
    n = len(values)
    if n < 2:
        raise ValueError("confidence interval requires at least 2 values")
    mean = float(np.mean(values))
    s = float(np.std(values, ddof=1))
    tq = student_t_quantile((1.0 + level) / 2.0, n - 1)
    half = tq * s / np.sqrt(n)
    return FoldSummary(tuple(values), mean, mean - half, mean + half)


@dataclass
class FoldResult:
    patients: list[str]
    counts: ConfusionCounts
    auc: float | None
    tpr: float | None
    tnr: float | None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "patients": self.patients,
            "confusion": {
                "tp": self.counts.tp,
                "fp": self.counts.fp,
                "tn": self.counts.tn,
                "fn": self.counts.fn,
            },
            "auc": self.auc,
            "tpr": self.tpr,
            "tnr": self.tnr,
            "notes": self.notes,
        }


@dataclass
class EvaluationReport:
    threshold: float
    folds: list[FoldResult]
    summaries: dict[str, FoldSummary | None]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "folds": [f.to_dict() for f in self.folds],
            "summaries": {
                k: (v.to_dict() if v is not None else None) for k, v in self.summaries.items()
            },
        }


def evaluate_patientwise(
    manifest: DatasetManifest,
    confidences: dict[tuple[str, int], float],
    threshold: float,
    folds: list[list[str]],
) -> EvaluationReport:
    """Slice-level confusion and AUC per patient-level fold, plus
    cross-fold summaries.

    A fold containing a single class records its AUC (and the undefined
    rate) as unavailable rather than failing the run.
    """
    by_patient: dict[str, list] = {}
    for rec in manifest.records:
        by_patient.setdefault(rec.patient_id, []).append(rec)
    seen: set[str] = set()
    for fold in folds:
        for pid in fold:
            if pid not in by_patient:
                raise ValueError(f"fold patient {pid!r} not in manifest")
            if pid in seen:
                raise ValueError(f"patient {pid!r} appears in more than one fold")
            seen.add(pid)

    fold_results: list[FoldResult] = []
    for fold in folds:
        records = [r for pid in fold for r in by_patient[pid]]
        scores, labels = [], []
        for rec in records:
            key = rec.id
            if key not in confidences:
                raise ValueError(f"missing confidence for slice {key}")
            scores.append(confidences[key])
            labels.append(1 if rec.label == "tumor" else 0)
        scores_arr = np.array(scores)
        labels_arr = np.array(labels)
        pred = scores_arr > threshold
        counts = ConfusionCounts(
            tp=int(np.sum(pred & (labels_arr == 1))),
            fp=int(np.sum(pred & (labels_arr == 0))),
            tn=int(np.sum(~pred & (labels_arr == 0))),
            fn=int(np.sum(~pred & (labels_arr == 1))),
        )
        notes = []
        try:
            auc = roc_auc(scores_arr, labels_arr)
        except ValueError as exc:
            auc = None
            notes.append(f"auc unavailable: {exc}")
        tpr = sensitivity(counts) if counts.tp + counts.fn > 0 else None
        tnr = specificity(counts) if counts.tn + counts.fp > 0 else None
        fold_results.append(FoldResult(list(fold), counts, auc, tpr, tnr, notes))

    summaries: dict[str, FoldSummary | None] = {}
    for name in ("auc", "tpr", "tnr"):
        vals = [getattr(f, name) for f in fold_results if getattr(f, name) is not None]
        summaries[name] = t_confidence_interval(vals) if len(vals) >= 2 else None
        if summaries[name] is None:
            log.warning("metric %s has fewer than 2 defined folds; no CI", name)
    return EvaluationReport(threshold=threshold, folds=fold_results, summaries=summaries)
