"""
Cluster-to-condition alignment, confusion matrices and classification metrics.

Metrics are computed from exact rational counts; the percentages shown in
tables are rounded half away from zero at two decimals (98.575 -> 98.58).
"""

import itertools
import logging
import math
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Dict, Hashable, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from acflab.domain import DISPLAY_ORDER, Condition
from acflab.errors import InvalidInputError, UnsupportedSizeError

logger = logging.getLogger(__name__)

MAX_ALIGN_CLASSES = 8
ACCURACY_TARGET = Fraction(95, 100)

_DISPLAY_LABELS = [c.label for c in DISPLAY_ORDER]


# ============================================================================
# Models
# ============================================================================

class Alignment(BaseModel):
    """Cluster -> class map; clusters left over when G exceeds the class count map to None."""
    clusters: List[int]
    classes: List[str]
    mapping: Dict[int, Optional[str]]
    trace: int


class ClassMetrics(BaseModel):
    label: str
    support: int
    precision: float
    recall: float
    f1: float
    precision_pct: str
    recall_pct: str
    f1_pct: str
    zero_precision: bool = False


class ConfusionReport(BaseModel):
    classes: List[str]
    matrix: List[List[int]]
    unmatched: List[int]
    mapping: Dict[str, Optional[str]] = {}
    total: int
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_f1: float
    per_class: List[ClassMetrics]
    display: Dict[str, str]
    meets_target: bool


def percent(value: Fraction) -> str:
    """Two-decimal percentage, half away from zero."""
    q = Decimal(value.numerator * 100) / Decimal(value.denominator)
    return str(q.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _label(value) -> str:
    return value.label if isinstance(value, Condition) else str(value)


def _class_order(true_labels: Sequence[str]) -> List[str]:
    present = set(true_labels)
    if present <= set(_DISPLAY_LABELS):
        return list(_DISPLAY_LABELS)
    return sorted(present)


# ============================================================================
# Alignment and confusion
# ============================================================================

def contingency(pred_labels: Sequence[Hashable], true_labels: Sequence, classes: Optional[List[str]] = None):
    """Counts of (cluster, class) pairs; returns (clusters, classes, table)."""
    if len(pred_labels) != len(true_labels):
        raise InvalidInputError(
            f"label sequences differ in length ({len(pred_labels)} vs {len(true_labels)})"
        )
    if len(pred_labels) == 0:
        raise InvalidInputError("no labels to compare")
    truth = [_label(t) for t in true_labels]
    classes = list(classes) if classes is not None else _class_order(truth)
    clusters = sorted({int(p) for p in pred_labels})
    c_index = {c: i for i, c in enumerate(clusters)}
    k_index = {k: j for j, k in enumerate(classes)}
    unknown = set(truth) - set(k_index)
    if unknown:
        raise InvalidInputError(f"true labels outside the class list: {sorted(unknown)}")

    table = np.zeros((len(clusters), len(classes)), dtype=np.int64)
    for p, t in zip(pred_labels, truth):
        table[c_index[int(p)], k_index[t]] += 1
    return clusters, classes, table


def align(pred_labels: Sequence[Hashable], true_labels: Sequence, classes: Optional[List[str]] = None) -> Alignment:
    """
    Exhaustive search for the cluster -> class assignment maximizing matched
    counts. Ties keep the lexicographically smallest assignment.
    """
    clusters, classes, table = contingency(pred_labels, true_labels, classes)
    k = max(len(clusters), len(classes))
    if k > MAX_ALIGN_CLASSES:
        if (
            len(classes) > MAX_ALIGN_CLASSES
            or math.perm(len(clusters), len(classes)) > math.factorial(MAX_ALIGN_CLASSES)
        ):
            raise UnsupportedSizeError(
                f"alignment supports at most {MAX_ALIGN_CLASSES} classes and "
                f"{math.factorial(MAX_ALIGN_CLASSES)} candidate maps, got "
                f"{len(clusters)} clusters for {len(classes)} classes"
            )
        return _align_injective(clusters, classes, table)

    padded = np.zeros((k, k), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    perms = np.array(list(itertools.permutations(range(k))), dtype=np.int64)
    traces = padded[np.arange(k)[None, :], perms].sum(axis=1)
    best = perms[int(np.argmax(traces))]  # first maximum in lexicographic order

    mapping = {
        cluster: (classes[best[i]] if best[i] < len(classes) else None)
        for i, cluster in enumerate(clusters)
    }
    return Alignment(clusters=clusters, classes=classes, mapping=mapping, trace=int(traces.max()))


def _align_injective(clusters: List[int], classes: List[str], table: np.ndarray) -> Alignment:
    """More clusters than the square search allows: give each class its own cluster."""
    choices = np.array(list(itertools.permutations(range(len(clusters)), len(classes))), dtype=np.int64)
    traces = table[choices, np.arange(len(classes))[None, :]].sum(axis=1)
    best = choices[int(np.argmax(traces))]  # first maximum in lexicographic order
    owner = {int(best[j]): classes[j] for j in range(len(classes))}
    mapping = {cluster: owner.get(i) for i, cluster in enumerate(clusters)}
    return Alignment(clusters=clusters, classes=classes, mapping=mapping, trace=int(traces.max()))


def confusion(pred_labels: Sequence[Hashable], true_labels: Sequence, alignment: Alignment):
    """
    Rows are true classes and columns aligned classes, both in the alignment's
    class order. Returns (matrix, unmatched) where ``unmatched`` counts, per
    true class, the points that fell in clusters left without a class.
    """
    classes = alignment.classes
    k_index = {k: j for j, k in enumerate(classes)}
    matrix = np.zeros((len(classes), len(classes)), dtype=np.int64)
    unmatched = np.zeros(len(classes), dtype=np.int64)
    for p, t in zip(pred_labels, true_labels):
        row = k_index[_label(t)]
        target = alignment.mapping.get(int(p))
        if target is None:
            unmatched[row] += 1
        else:
            matrix[row, k_index[target]] += 1
    return matrix, unmatched


# ============================================================================
# Metrics
# ============================================================================

def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def summarize(
    matrix,
    classes: Optional[List[str]] = None,
    unmatched: Optional[Sequence[int]] = None,
    mapping: Optional[Dict[int, Optional[str]]] = None,
) -> ConfusionReport:
    M = np.asarray(matrix)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"confusion matrix must be square, got shape {M.shape}")
    if (M < 0).any() or not np.array_equal(M, np.round(M)):
        raise InvalidInputError("confusion matrix must hold non-negative integer counts")
    M = M.astype(np.int64)
    k = M.shape[0]
    classes = list(classes) if classes is not None else (
        list(_DISPLAY_LABELS) if k == len(_DISPLAY_LABELS) else [f"class{i + 1}" for i in range(k)]
    )
    extra = np.zeros(k, dtype=np.int64) if unmatched is None else np.asarray(unmatched, dtype=np.int64)

    support = M.sum(axis=1) + extra
    total = int(support.sum())
    if total <= 0:
        raise InvalidInputError("confusion matrix total must be positive")

    col = M.sum(axis=0)
    diag = np.diag(M)
    per_class = []
    precisions, recalls, f1s = [], [], []
    for i, label in enumerate(classes):
        p = _ratio(int(diag[i]), int(col[i]))
        r = _ratio(int(diag[i]), int(support[i]))
        f = (2 * p * r / (p + r)) if (p + r) else Fraction(0)
        if col[i] == 0:
            logger.warning("class %s received no predictions; precision reported as 0", label)
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
        per_class.append(
            ClassMetrics(
                label=label,
                support=int(support[i]),
                precision=float(p),
                recall=float(r),
                f1=float(f),
                precision_pct=percent(p),
                recall_pct=percent(r),
                f1_pct=percent(f),
                zero_precision=bool(col[i] == 0),
            )
        )

    accuracy = Fraction(int(diag.sum()), total)
    macro_p = sum(precisions, Fraction(0)) / k
    macro_r = sum(recalls, Fraction(0)) / k
    macro_f = sum(f1s, Fraction(0)) / k
    weighted_f = sum((int(support[i]) * f1s[i] for i in range(k)), Fraction(0)) / total

    return ConfusionReport(
        classes=classes,
        matrix=M.tolist(),
        unmatched=extra.tolist(),
        mapping={str(c): v for c, v in (mapping or {}).items()},
        total=total,
        accuracy=float(accuracy),
        macro_precision=float(macro_p),
        macro_recall=float(macro_r),
        macro_f1=float(macro_f),
        weighted_f1=float(weighted_f),
        per_class=per_class,
        display={
            "accuracy": percent(accuracy),
            "precision": percent(macro_p),
            "recall": percent(macro_r),
            "f1_macro": percent(macro_f),
            "f1_weighted": percent(weighted_f),
        },
        meets_target=accuracy >= ACCURACY_TARGET,
    )


def evaluate(pred_labels: Sequence[Hashable], true_labels: Sequence) -> ConfusionReport:
    """align -> confusion -> summarize in one call."""
    alignment = align(pred_labels, true_labels)
    matrix, unmatched = confusion(pred_labels, true_labels, alignment)
    return summarize(matrix, alignment.classes, unmatched, alignment.mapping)


# ============================================================================
# Table layouts
# ============================================================================

def confusion_frame(report: ConfusionReport) -> pd.DataFrame:
    """Confusion counts with one row per true class, predicted classes as columns."""
    df = pd.DataFrame(report.matrix, columns=report.classes)
    df.insert(0, "actual", report.classes)
    if any(report.unmatched):
        df["unmatched"] = report.unmatched
    return df


def metrics_frame(report: ConfusionReport) -> pd.DataFrame:
    """Overall row (accuracy, macro precision/recall, weighted F1) then per-class rows."""
    rows = [
        {
            "scope": "overall",
            "accuracy": report.display["accuracy"],
            "precision": report.display["precision"],
            "recall": report.display["recall"],
            "f1": report.display["f1_weighted"],
        }
    ]
    for cm in report.per_class:
        rows.append(
            {
                "scope": cm.label,
                "accuracy": "",
                "precision": cm.precision_pct,
                "recall": cm.recall_pct,
                "f1": cm.f1_pct,
            }
        )
    return pd.DataFrame(rows, columns=["scope", "accuracy", "precision", "recall", "f1"])
