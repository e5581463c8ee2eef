"""
Tests for the condition vocabulary and record tables.
Run with: pytest tests/test_domain.py -v
"""

import pandas as pd
import pytest

from acflab.domain import (
    CONDITIONS,
    DISPLAY_ORDER,
    Condition,
    ConditionCode,
    FacetLevel,
    Gender,
    PerformanceRecord,
    RepKind,
    check_unique_subjects,
    condition_from_label,
    condition_of,
    records_from_frame,
    records_to_frame,
)
from acflab.errors import InvalidInputError, ParseError


class TestConditions:
    """Test the facet x representation grid."""

    def test_code_table(self):
        """Each (facet, rep) pair maps to its fixed code."""
        assert condition_of(FacetLevel.HIGH, RepKind.DETERMINISTIC).code is ConditionCode.C1
        assert condition_of(FacetLevel.HIGH, RepKind.PROBABILISTIC).code is ConditionCode.C2
        assert condition_of(FacetLevel.LOW, RepKind.PROBABILISTIC).code is ConditionCode.C3
        assert condition_of(FacetLevel.LOW, RepKind.DETERMINISTIC).code is ConditionCode.C4

    def test_mismatched_code_rejected(self):
        """A condition whose code disagrees with its pair is invalid."""
        with pytest.raises(ValueError):
            Condition(facet=FacetLevel.HIGH, rep=RepKind.DETERMINISTIC, code=ConditionCode.C3)

    def test_labels_and_indices(self):
        """Labels use the persisted short spelling; indices follow C1..C4."""
        assert [c.label for c in CONDITIONS] == ["HiEqv-Det", "HiEqv-Prob", "LoEqv-Prob", "LoEqv-Det"]
        assert [c.index for c in CONDITIONS] == [0, 1, 2, 3]

    def test_display_order(self):
        """Confusion tables list C1, C2, C4, C3."""
        assert [c.label for c in DISPLAY_ORDER] == ["HiEqv-Det", "HiEqv-Prob", "LoEqv-Det", "LoEqv-Prob"]

    def test_parse_label_or_code(self):
        assert condition_from_label("C3").label == "LoEqv-Prob"
        assert condition_from_label("LoEqv-Det").code is ConditionCode.C4
        with pytest.raises(InvalidInputError):
            condition_from_label("MidEqv-Det")


class TestRecords:
    """Test the performance record schema."""

    def _records(self):
        return [
            PerformanceRecord(subject_id="S001", condition=CONDITIONS[0], gender=Gender.F, profit=-1.5),
            PerformanceRecord(subject_id="S002", condition=CONDITIONS[3], gender=Gender.M, profit=8.25),
        ]

    def test_frame_columns(self):
        df = records_to_frame(self._records())
        assert list(df.columns) == ["subject_id", "condition", "gender", "profit"]
        assert df["condition"].tolist() == ["HiEqv-Det", "LoEqv-Det"]

    def test_profit_has_six_decimals(self):
        records = self._records() + [
            PerformanceRecord(subject_id="S003", condition=CONDITIONS[1], gender=Gender.F, profit=-1e-9),
            PerformanceRecord(subject_id="S004", condition=CONDITIONS[2], gender=Gender.M, profit=1 / 3),
        ]
        assert records_to_frame(records)["profit"].tolist() == ["-1.500000", "8.250000", "0.000000", "0.333333"]

    def test_frame_back_to_records(self):
        records = self._records()
        assert records_from_frame(records_to_frame(records)) == records

    def test_bad_row_reports_line(self):
        """Line numbers count the header as line 1."""
        df = pd.DataFrame(
            {"subject_id": ["S1", "S2"], "condition": ["C1", "C2"], "gender": ["F", "X"], "profit": [1.0, 2.0]}
        )
        with pytest.raises(ParseError) as exc:
            records_from_frame(df)
        assert exc.value.line == 3
        assert exc.value.exit_code == 3

    def test_missing_columns(self):
        with pytest.raises(ParseError):
            records_from_frame(pd.DataFrame({"subject_id": ["S1"]}))

    def test_duplicate_subjects(self):
        rec = self._records()[0]
        with pytest.raises(InvalidInputError):
            check_unique_subjects([rec, rec])
