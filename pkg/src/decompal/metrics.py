"""Evaluation metrics: IoU, Dice, weighted F1, annotation ratios, alignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .core import ImageRecord, AnnotationState


@dataclass(frozen=True)
class ClassReport:
    """Per-class scores with macro and support-weighted aggregates.

    Classes whose denominator is empty (no true or predicted occurrence) are
    NaN and excluded from the macro mean; the weighted aggregate weighs each
    class by its true-label support.
    """

    per_class: np.ndarray
    support: np.ndarray
    macro: float
    weighted: float


def confusion_matrix(
    pred_labels: np.ndarray, true_labels: np.ndarray, n_classes: int
) -> np.ndarray:
    """Counts[t, p] of pixels with true class t+1 predicted as p+1."""
    pred = np.asarray(pred_labels).ravel()
    true = np.asarray(true_labels).ravel()
    if pred.shape != true.shape:
        raise ValueError("prediction and ground-truth shapes differ")
    idx = (true - 1) * n_classes + (pred - 1)
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(
        n_classes, n_classes
    )


def _report(per_class: np.ndarray, support: np.ndarray) -> ClassReport:
    defined = np.isfinite(per_class)
    macro = float(per_class[defined].mean()) if defined.any() else float("nan")
    total = float(support.sum())
    if total > 0:
        weighted = float(
            np.nansum(np.where(defined, per_class, 0.0) * support) / total
        )
    else:
        weighted = float("nan")
    return ClassReport(
        per_class=per_class, support=support, macro=macro, weighted=weighted
    )


def iou_from_confusion(cm: np.ndarray) -> ClassReport:
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    union = tp + fp + fn
    per_class = np.where(union > 0, tp / np.where(union > 0, union, 1.0), np.nan)
    return _report(per_class, cm.sum(axis=1))


def dice_from_confusion(cm: np.ndarray) -> ClassReport:
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    per_class = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1.0), np.nan)
    return _report(per_class, cm.sum(axis=1))


def f1_from_confusion(cm: np.ndarray) -> ClassReport:
    # F1 coincides with Dice per class; kept separate for reporting intent.
    return dice_from_confusion(cm)


def iou(pred_labels: np.ndarray, true_labels: np.ndarray, n_classes: int) -> ClassReport:
    """Per-class intersection over union."""
    return iou_from_confusion(confusion_matrix(pred_labels, true_labels, n_classes))


def dice(pred_labels: np.ndarray, true_labels: np.ndarray, n_classes: int) -> ClassReport:
    """Per-class Dice similarity."""
    return dice_from_confusion(confusion_matrix(pred_labels, true_labels, n_classes))


def weighted_f1(
    pred_labels: np.ndarray, true_labels: np.ndarray, n_classes: int
) -> float:
    """Support-weighted mean of per-class F1."""
    return f1_from_confusion(
        confusion_matrix(pred_labels, true_labels, n_classes)
    ).weighted


def per_class_annotation_ratio(
    state: AnnotationState, images: Mapping[int, ImageRecord], n_classes: int
) -> np.ndarray:
    """Annotated fraction of each class's true occurrence across the pool.

    Classes absent from the pool altogether are NaN.
    """
    totals = np.zeros(n_classes, dtype=np.int64)
    for img in images.values():
        totals += np.bincount(
            img.hidden_labels.ravel(), minlength=n_classes + 1
        )[1 : n_classes + 1]
    annotated = state.revealed_class_counts(n_classes)
    ratios = np.full(n_classes, np.nan)
    np.divide(annotated, totals, out=ratios, where=totals > 0)
    return ratios


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman rank correlation over finite pairs; NaN when degenerate."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    keep = np.isfinite(a) & np.isfinite(b)
    if keep.sum() < 2:
        return float("nan")
    rho = stats.spearmanr(a[keep], b[keep]).statistic
    return float(rho)


def confidence_alignment(
    sigma_history: Sequence[np.ndarray],
    per_class_test_history: Sequence[np.ndarray],
) -> np.ndarray:
    """Per-cycle rank correlation between class confidence and test scores."""
    if len(sigma_history) != len(per_class_test_history):
        raise ValueError("histories must have equal length")
    return np.array(
        [
            spearman(sig, perf)
            for sig, perf in zip(sigma_history, per_class_test_history)
        ]
    )
