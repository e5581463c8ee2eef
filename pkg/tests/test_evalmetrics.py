"""
Tests for cluster alignment, confusion matrices and metrics.
Run with: pytest tests/test_evalmetrics.py -v
"""

from fractions import Fraction

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from acflab.domain import DISPLAY_ORDER
from acflab.errors import InvalidInputError, UnsupportedSizeError
from acflab.evalmetrics import (
    align,
    confusion,
    confusion_frame,
    contingency,
    evaluate,
    metrics_frame,
    percent,
    summarize,
)
from acflab.mixture import map_labels, select
from acflab.synthlab import PAPER_REGIME_2D, generate_dataset

LABELS = [c.label for c in DISPLAY_ORDER]

# rows: true class; columns: aligned class, display order
REPORTED_MATRIX = [
    [1000, 0, 0, 0],
    [0, 1000, 0, 0],
    [0, 0, 968, 32],
    [0, 0, 25, 975],
]


def labels_from_matrix(matrix, cluster_of_class):
    """Expand a confusion matrix into (pred, true) label lists."""
    pred, true = [], []
    for i, row in enumerate(matrix):
        for j, count in enumerate(row):
            pred.extend([cluster_of_class[j]] * count)
            true.extend([LABELS[i]] * count)
    return pred, true


class TestPercent:
    """Test two-decimal half-up rounding."""

    def test_half_rounds_up(self):
        assert percent(Fraction(98575, 100000)) == "98.58"
        assert percent(Fraction(1, 8)) == "12.50"
        assert percent(Fraction(1)) == "100.00"


class TestReportedMatrix:
    """Test metrics on the published four-class confusion matrix."""

    @pytest.fixture
    def report(self):
        return summarize(REPORTED_MATRIX)

    def test_headline(self, report):
        assert report.classes == LABELS
        assert report.total == 4000
        assert report.display == {
            "accuracy": "98.58",
            "precision": "98.58",
            "recall": "98.58",
            "f1_macro": "98.57",
            "f1_weighted": "98.57",
        }
        assert report.meets_target

    def test_per_class(self, report):
        assert [m.precision_pct for m in report.per_class] == ["100.00", "100.00", "97.48", "96.82"]
        assert [m.recall_pct for m in report.per_class] == ["100.00", "100.00", "96.80", "97.50"]
        assert [m.f1_pct for m in report.per_class] == ["100.00", "100.00", "97.14", "97.16"]
        assert [m.support for m in report.per_class] == [1000, 1000, 1000, 1000]

    def test_column_sums(self, report):
        assert np.asarray(report.matrix).sum(axis=0).tolist() == [1000, 1000, 993, 1007]

    def test_from_cluster_labels(self):
        """Permuted cluster ids are aligned back onto the reported matrix."""
        pred, true = labels_from_matrix(REPORTED_MATRIX, cluster_of_class=[3, 1, 4, 2])
        report = evaluate(pred, true)
        assert report.matrix == REPORTED_MATRIX
        assert report.mapping == {"1": LABELS[1], "2": LABELS[3], "3": LABELS[0], "4": LABELS[2]}
        assert report.display["accuracy"] == "98.58"

    def test_frames(self, report):
        cf = confusion_frame(report)
        assert list(cf.columns) == ["actual"] + LABELS
        mf = metrics_frame(report)
        assert list(mf.columns) == ["scope", "accuracy", "precision", "recall", "f1"]
        assert mf.iloc[0].tolist() == ["overall", "98.58", "98.58", "98.58", "98.57"]
        assert mf["scope"].tolist()[1:] == LABELS


class TestAlign:
    """Test the exhaustive cluster-to-class alignment."""

    def test_identity(self):
        true = ["a", "a", "b", "b", "c"]
        alignment = align([1, 1, 2, 2, 3], true)
        assert alignment.mapping == {1: "a", 2: "b", 3: "c"}
        assert alignment.trace == 5

    def test_cyclic_shift(self):
        true = ["a", "b", "c"] * 4
        alignment = align([2, 3, 1] * 4, true)
        assert alignment.mapping == {2: "a", 3: "b", 1: "c"}

    def test_tie_keeps_smallest_assignment(self):
        alignment = align([1, 2], ["a", "a"], classes=["a", "b"])
        assert alignment.mapping == {1: "a", 2: "b"}

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_hungarian(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 7))
        pred = rng.integers(1, k + 1, size=300)
        true = [f"k{v}" for v in rng.integers(0, k, size=300)]
        _, _, table = contingency(pred, true)
        rows, cols = linear_sum_assignment(table, maximize=True)
        assert align(pred, true).trace == int(table[rows, cols].sum())

    def test_extra_clusters_are_unmatched(self):
        pred = [1, 1, 2, 2, 3]
        true = ["a", "a", "b", "b", "b"]
        alignment = align(pred, true)
        assert alignment.mapping[3] is None
        matrix, unmatched = confusion(pred, true, alignment)
        assert matrix.tolist() == [[2, 0], [0, 2]]
        assert unmatched.tolist() == [0, 1]
        report = summarize(matrix, alignment.classes, unmatched)
        assert report.total == 5
        assert report.accuracy == pytest.approx(0.8)
        assert "unmatched" in confusion_frame(report).columns

    def test_too_many_classes(self):
        with pytest.raises(UnsupportedSizeError):
            align(list(range(1, 10)), [f"c{i}" for i in range(9)])

    def test_nine_clusters_for_four_classes(self):
        """G=9 from the default range still aligns against the four conditions."""
        pred, true = [], []
        for cluster, label in zip((1, 2, 3, 4), ("a", "b", "c", "d")):
            pred += [cluster] * 10
            true += [label] * 10
        for cluster in range(5, 10):
            pred.append(cluster)
            true.append("a")
        alignment = align(pred, true)
        assert alignment.trace == 40
        assert alignment.mapping == {1: "a", 2: "b", 3: "c", 4: "d", 5: None, 6: None, 7: None, 8: None, 9: None}
        matrix, unmatched = confusion(pred, true, alignment)
        assert unmatched.tolist() == [5, 0, 0, 0]
        assert np.trace(matrix) == 40

    @pytest.mark.parametrize("seed", range(3))
    def test_many_clusters_match_hungarian(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.integers(1, 11, size=400)
        true = [f"k{v}" for v in rng.integers(0, 4, size=400)]
        _, _, table = contingency(pred, true)
        rows, cols = linear_sum_assignment(table, maximize=True)
        assert align(pred, true).trace == int(table[rows, cols].sum())

    def test_too_many_candidate_maps(self):
        # 16 clusters onto 4 classes is 43680 injective maps, above 8!
        pred = list(range(1, 17))
        true = ["a", "b", "c", "d"] * 4
        with pytest.raises(UnsupportedSizeError):
            align(pred, true)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            align([1, 2], ["a"])


class TestSummarize:
    """Test metric edge cases."""

    def test_class_without_predictions(self):
        report = summarize([[5, 0], [3, 0]], classes=["a", "b"])
        assert report.per_class[1].zero_precision
        assert report.per_class[1].precision == 0.0
        assert report.per_class[1].f1 == 0.0

    def test_balanced_weighted_equals_macro(self):
        report = summarize([[8, 2, 0], [1, 9, 0], [0, 3, 7]])
        assert report.weighted_f1 == pytest.approx(report.macro_f1)
        assert report.classes == ["class1", "class2", "class3"]

    def test_rejects_bad_matrices(self):
        with pytest.raises(InvalidInputError):
            summarize([[1, 2, 3], [4, 5, 6]])
        with pytest.raises(InvalidInputError):
            summarize([[1, -1], [0, 1]])
        with pytest.raises(InvalidInputError):
            summarize([[0, 0], [0, 0]])


class TestEndToEnd:
    """Cluster the four-condition dataset and score the recovered labels."""

    def test_meets_accuracy_target(self):
        ds = generate_dataset(PAPER_REGIME_2D, 250, seed=7)
        _, fit = select(ds.features, G_range=range(1, 7))
        report = evaluate(map_labels(fit, ds.features).tolist(), ds.labels)
        assert report.classes == LABELS
        assert report.meets_target
