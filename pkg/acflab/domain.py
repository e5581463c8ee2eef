"""
Core vocabulary shared by every module: information facet (iF), information
representation (iR), the 2x2 condition grid, the task (K) and performance (P).
"""

from enum import Enum
from typing import Dict, Iterable, List, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from acflab.errors import InvalidInputError, ParseError


# ============================================================================
# Enumerations
# ============================================================================

class FacetLevel(str, Enum):
    """Equivocality level of the information scenario (iF)."""
    HIGH = "HighEquivocality"
    LOW = "LowEquivocality"

    @property
    def rank(self) -> int:
        # Low < High, used only to order report rows
        return 1 if self is FacetLevel.HIGH else 0

    @property
    def short(self) -> str:
        return "HiEqv" if self is FacetLevel.HIGH else "LoEqv"


class RepKind(str, Enum):
    """Form of the information presented to the trader (iR)."""
    DETERMINISTIC = "Deterministic"
    PROBABILISTIC = "Probabilistic"

    @property
    def short(self) -> str:
        return "Det" if self is RepKind.DETERMINISTIC else "Prob"


class ConditionCode(str, Enum):
    C1 = "C1"
    C2 = "C2"
    C3 = "C3"
    C4 = "C4"


class Gender(str, Enum):
    F = "F"
    M = "M"


_CODE_TABLE: Dict[Tuple[FacetLevel, RepKind], ConditionCode] = {
    (FacetLevel.HIGH, RepKind.DETERMINISTIC): ConditionCode.C1,
    (FacetLevel.HIGH, RepKind.PROBABILISTIC): ConditionCode.C2,
    (FacetLevel.LOW, RepKind.PROBABILISTIC): ConditionCode.C3,
    (FacetLevel.LOW, RepKind.DETERMINISTIC): ConditionCode.C4,
}


# ============================================================================
# Models
# ============================================================================

class Condition(BaseModel):
    """One cell of the facet x representation design."""
    model_config = ConfigDict(frozen=True)

    facet: FacetLevel
    rep: RepKind
    code: ConditionCode

    @model_validator(mode="after")
    def _check_code(self) -> "Condition":
        expected = _CODE_TABLE[(self.facet, self.rep)]
        if self.code != expected:
            raise ValueError(
                f"code {self.code.value} does not match ({self.facet.value}, {self.rep.value}); "
                f"expected {expected.value}"
            )
        return self

    @property
    def label(self) -> str:
        """Stable persisted spelling, e.g. 'HiEqv-Det'."""
        return f"{self.facet.short}-{self.rep.short}"

    @property
    def index(self) -> int:
        """0-based position in C1..C4 order."""
        return int(self.code.value[1]) - 1

    def __str__(self) -> str:
        return self.label


class TaskSpec(BaseModel):
    """The task K, held constant across conditions within an experiment."""
    model_config = ConfigDict(frozen=True)

    task_id: str
    description: str
    horizon_ticks: int = Field(..., ge=1)


class PerformanceRecord(BaseModel):
    """End-of-day outcome for one subject (P) with its condition and gender."""
    model_config = ConfigDict(frozen=True)

    subject_id: str
    condition: Condition
    gender: Gender
    profit: float


# ============================================================================
# Condition lookups
# ============================================================================

CONDITIONS: Tuple[Condition, ...] = tuple(
    Condition(facet=facet, rep=rep, code=code)
    for (facet, rep), code in sorted(_CODE_TABLE.items(), key=lambda kv: kv[1].value)
)

# Row order of the confusion-matrix tables: HiEqv-Det, HiEqv-Prob, LoEqv-Det, LoEqv-Prob
DISPLAY_ORDER: Tuple[Condition, ...] = (CONDITIONS[0], CONDITIONS[1], CONDITIONS[3], CONDITIONS[2])

_BY_CODE = {c.code: c for c in CONDITIONS}
_BY_LABEL = {c.label: c for c in CONDITIONS}

DEFAULT_TASK = TaskSpec(
    task_id="single-equity-day",
    description="Trade one equity for end-of-day realized profit after a news release",
    horizon_ticks=390,
)


def condition_of(facet: FacetLevel, rep: RepKind) -> Condition:
    """Return the unique condition for a (facet, representation) pair."""
    return _BY_CODE[_CODE_TABLE[(FacetLevel(facet), RepKind(rep))]]


def condition_from_code(code) -> Condition:
    return _BY_CODE[ConditionCode(code)]


def condition_from_label(label: str) -> Condition:
    """Parse a persisted label ('HiEqv-Det') or a bare code ('C1')."""
    if label in _BY_LABEL:
        return _BY_LABEL[label]
    try:
        return condition_from_code(label)
    except ValueError:
        raise InvalidInputError(f"unknown condition label {label!r}") from None


# ============================================================================
# Record tables
# ============================================================================

RECORD_COLUMNS = ["subject_id", "condition", "gender", "profit"]


def check_unique_subjects(records: Iterable[PerformanceRecord]) -> None:
    seen = set()
    for rec in records:
        if rec.subject_id in seen:
            raise InvalidInputError(f"duplicate subject_id {rec.subject_id!r}")
        seen.add(rec.subject_id)


def _profit_text(value: float) -> str:
    text = f"{float(value):.6f}"
    return "0.000000" if text == "-0.000000" else text


def records_to_frame(records: List[PerformanceRecord]) -> pd.DataFrame:
    """Flatten records to the persisted column schema; profit is fixed at 6 decimals."""
    return pd.DataFrame(
        {
            "subject_id": [r.subject_id for r in records],
            "condition": [r.condition.label for r in records],
            "gender": [r.gender.value for r in records],
            "profit": [_profit_text(r.profit) for r in records],
        },
        columns=RECORD_COLUMNS,
    )


def records_from_frame(df: pd.DataFrame) -> List[PerformanceRecord]:
    missing = [c for c in RECORD_COLUMNS if c not in df.columns]
    if missing:
        raise ParseError(f"record table lacks columns {missing}")
    records = []
    for i, row in enumerate(df.itertuples(index=False), start=2):
        try:
            records.append(
                PerformanceRecord(
                    subject_id=str(row.subject_id),
                    condition=condition_from_label(str(row.condition)),
                    gender=Gender(str(row.gender)),
                    profit=float(row.profit),
                )
            )
        except (ValueError, TypeError) as e:
            # line numbers count the header as line 1
            raise ParseError(str(e), line=i) from None
    check_unique_subjects(records)
    return records
