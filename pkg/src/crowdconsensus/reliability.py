"""Agreement and evaluation metrics: Fleiss' kappa, worker error rates, binary scores."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .errors import DegenerateAgreement, MissingReference, NoRatableItems, TaskMismatch


@dataclass(frozen=True)
class KappaReport:
    kappa: float
    items_used: int
    items_skipped: int
    per_class_p: np.ndarray
    observed_agreement: float
    expected_agreement: float

    def to_dict(self, classes=None):
        p = [float(x) for x in self.per_class_p]
        return {
            "kappa": float(self.kappa),
            "items_used": self.items_used,
            "items_skipped": self.items_skipped,
            "per_class_p": dict(zip(classes, p)) if classes else p,
            "observed_agreement": float(self.observed_agreement),
            "expected_agreement": float(self.expected_agreement),
        }


def fleiss_kappa_counts(counts):
    """Fleiss' kappa from an items x classes matrix of rating counts.

    Items may have different numbers of ratings; those with fewer than two
    are skipped and counted in ``items_skipped``.
    """
    counts = np.asarray(counts, dtype=float)
    n = counts.sum(axis=1)
    used = n >= 2
    if not used.any():
        raise NoRatableItems("no item has at least two ratings")
    c, n_used = counts[used], n[used]
    P_i = ((c * (c - 1)).sum(axis=1)) / (n_used * (n_used - 1))
    P_bar = P_i.mean()
    p_j = c.sum(axis=0) / n_used.sum()
    P_e = float((p_j ** 2).sum())
    if P_e >= 1.0:
        raise DegenerateAgreement("all ratings fall in a single class; chance agreement is 1")
    kappa = (P_bar - P_e) / (1 - P_e)
    return KappaReport(float(kappa), int(used.sum()), int((~used).sum()), p_j, float(P_bar), P_e)


def fleiss_kappa(view):
    return fleiss_kappa_counts(view.counts())


def worker_error_rates(view, reference_labels: Mapping[str, int]):
    """Per-worker confusion against a reference labeling.

    Returns ``{worker_id: K x K array}``; entry (k, l) is the fraction of the
    worker's annotations on reference-class-k tasks answered l. Rows for
    classes the worker never saw are NaN. Workers without annotations are
    left out.
    """
    K = view.n_classes
    ref = np.full(view.n_tasks, -1)
    for i, tid in enumerate(view.task_ids):
        if tid in reference_labels:
            ref[i] = int(reference_labels[tid])
    missing = sorted({view.task_ids[i] for i in view.task_idx if ref[i] < 0})
    if missing:
        raise MissingReference(f"no reference label for task {missing[0]!r}", {"task_ids": missing})
    W = view.n_workers
    flat = view.worker_idx * K * K + ref[view.task_idx] * K + view.label_idx
    counts = np.bincount(flat, minlength=W * K * K).reshape(W, K, K).astype(float)
    rows = counts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = counts / rows
    return {view.worker_ids[w]: rates[w] for w in np.unique(view.worker_idx)}


@dataclass(frozen=True)
class EvalReport:
    """Binary confusion counts, reference as rows and prediction as columns.

    Ratios with a zero denominator are ``None`` and listed in ``undefined``.
    """

    tp: int
    fn: int
    fp: int
    tn: int
    precision: Optional[float]
    recall: Optional[float]
    specificity: Optional[float]
    accuracy: Optional[float]
    npv: Optional[float]
    undefined: tuple = ()

    @property
    def total(self):
        return self.tp + self.fn + self.fp + self.tn

    @classmethod
    def from_counts(cls, tp, fn, fp, tn):
        def ratio(name, num, den):
            if den == 0:
                undefined.append(name)
                return None
            return num / den

        undefined = []
        return cls(
            tp, fn, fp, tn,
            precision=ratio("precision", tp, tp + fp),
            recall=ratio("recall", tp, tp + fn),
            specificity=ratio("specificity", tn, tn + fp),
            accuracy=ratio("accuracy", tp + tn, tp + fn + fp + tn),
            npv=ratio("npv", tn, tn + fn),
            undefined=tuple(undefined),
        )

    def to_dict(self):
        return {
            "counts": {"tp": self.tp, "fn": self.fn, "fp": self.fp, "tn": self.tn},
            "precision": self.precision,
            "recall": self.recall,
            "specificity": self.specificity,
            "accuracy": self.accuracy,
            "npv": self.npv,
            "undefined": list(self.undefined),
        }


def binary_eval(predicted: Mapping[str, bool], reference: Mapping[str, bool]):
    """Score a yes/no labeling against a reference over the same task set."""
    if set(predicted) != set(reference):
        only_p = sorted(set(predicted) - set(reference))
        only_r = sorted(set(reference) - set(predicted))
        raise TaskMismatch("predicted and reference cover different tasks",
                           {"only_predicted": only_p[:20], "only_reference": only_r[:20]})
    tp = fn = fp = tn = 0
    for task, truth in reference.items():
        guess = bool(predicted[task])
        if truth:
            tp += guess
            fn += not guess
        else:
            fp += guess
            tn += not guess
    return EvalReport.from_counts(tp, fn, fp, tn)
