"""
Statistical battery: descriptives, Welch tests (forward and back-solved),
one-way and sequential factorial ANOVA, and distribution tails computed from
the regularized incomplete beta function.
"""

import logging
import math
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from acflab.domain import (
    CONDITIONS,
    FacetLevel,
    Gender,
    PerformanceRecord,
    RepKind,
)
from acflab.errors import (
    InfeasibleParametersError,
    InvalidDesignError,
    InvalidInputError,
    InvalidParameterError,
)

logger = logging.getLogger(__name__)


# ============================================================================
# Result models
# ============================================================================

class GroupStats(BaseModel):
    """Sample size, mean and n-1 standard deviation of one group."""
    group_key: str
    n: int = Field(..., ge=1)
    mean: float
    sd: Optional[float] = None  # undefined for n == 1


class TestKind(str, Enum):
    WELCH_T = "welch_t"
    F = "F"


class TestResult(BaseModel):
    statistic: float
    df: float
    p: float = Field(..., ge=0, le=1)
    kind: TestKind


class AnovaRow(BaseModel):
    term: str
    df: int
    sum_sq: float
    mean_sq: float
    F: Optional[float] = None
    p: Optional[float] = None


class AnovaTable(BaseModel):
    title: str = ""
    rows: List[AnovaRow] = Field(default_factory=list)
    residual: AnovaRow

    @property
    def n(self) -> int:
        return sum(r.df for r in self.rows) + self.residual.df + 1

    @property
    def total_ss(self) -> float:
        return sum(r.sum_sq for r in self.rows) + self.residual.sum_sq

    def row(self, term: str) -> AnovaRow:
        for r in self.rows:
            if r.term == term:
                return r
        raise KeyError(term)

    def to_frame(self) -> pd.DataFrame:
        """Df / Sum Sq / Mean Sq / F value / Pr(>F) layout with fixed decimals."""
        out = []
        for r in self.rows + [self.residual]:
            out.append(
                {
                    "term": r.term,
                    "Df": r.df,
                    "Sum Sq": f"{r.sum_sq:.6f}",
                    "Mean Sq": f"{r.mean_sq:.6f}",
                    "F value": "" if r.F is None else f"{r.F:.6f}",
                    "Pr(>F)": "" if r.p is None else f"{r.p:.4f}",
                    "signif": "" if r.p is None else significance_code(r.p),
                }
            )
        return pd.DataFrame(out, columns=["term", "Df", "Sum Sq", "Mean Sq", "F value", "Pr(>F)", "signif"])


def significance_code(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    if p < 0.1:
        return "."
    return ""


# ============================================================================
# Distribution tails
# ============================================================================

_CF_EPS = 1e-15
_CF_FPMIN = 1e-300
_CF_MAXIT = 10000


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_FPMIN:
        d = _CF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise InvalidParameterError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise InvalidParameterError(f"beta parameters must be positive, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(ln_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(ln_front) * _betacf(b, a, 1.0 - x) / b


def tail_prob_f(F: float, df1: float, df2: float) -> float:
    """Upper-tail probability of the F distribution."""
    if df1 <= 0 or df2 <= 0:
        raise InvalidParameterError(f"degrees of freedom must be positive, got ({df1}, {df2})")
    if math.isnan(F) or F < 0:
        raise InvalidParameterError(f"F must be >= 0, got {F}")
    if F == 0:
        return 1.0
    if math.isinf(F):
        return 0.0
    return min(1.0, max(0.0, betainc_reg(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * F))))


def tail_prob_t(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t."""
    if df <= 0:
        raise InvalidParameterError(f"degrees of freedom must be positive, got {df}")
    if math.isnan(t):
        raise InvalidParameterError("t is NaN")
    if math.isinf(t):
        return 0.0
    return min(1.0, max(0.0, betainc_reg(df / 2.0, 0.5, df / (df + t * t))))


# ============================================================================
# Descriptives
# ============================================================================

def describe(
    records: Sequence[Any],
    group_by: Callable[[Any], Any],
    value: Callable[[Any], float] = lambda r: r.profit,
    order: Optional[Sequence[str]] = None,
) -> List[GroupStats]:
    """
    Per-group n, mean and sample sd.

    Groups come out in first-appearance order unless ``order`` names them;
    a named group without records is an error.
    """
    if not records:
        raise InvalidInputError("describe() needs at least one record")

    df = pd.DataFrame(
        {
            "key": [str(group_by(r)) for r in records],
            "value": [float(value(r)) for r in records],
        }
    )
    agg = df.groupby("key", sort=False)["value"].agg(["count", "mean", "std"])

    keys = list(order) if order is not None else list(agg.index)
    missing = [k for k in keys if k not in agg.index]
    if missing:
        raise InvalidInputError(f"empty group(s): {missing}")

    out = []
    for key in keys:
        row = agg.loc[key]
        n = int(row["count"])
        out.append(
            GroupStats(
                group_key=key,
                n=n,
                mean=float(row["mean"]),
                sd=float(row["std"]) if n >= 2 else None,
            )
        )
    return out


def performance_summaries(records: Sequence[PerformanceRecord]) -> Dict[str, List[GroupStats]]:
    """Descriptive blocks by facet, by representation, by gender, by condition and gender x facet."""
    present = {r.condition.label for r in records}
    return {
        "facet": describe(records, lambda r: r.condition.facet.value),
        "representation": describe(records, lambda r: r.condition.rep.value),
        "gender": describe(records, lambda r: r.gender.value),
        "condition": describe(
            records,
            lambda r: r.condition.label,
            order=[c.label for c in CONDITIONS if c.label in present],
        ),
        "gender_by_facet": describe(records, lambda r: f"{r.condition.facet.short}/{r.gender.value}"),
    }


# ============================================================================
# Welch tests
# ============================================================================

def welch_from_summary(m1: float, s1: float, n1: int, m2: float, s2: float, n2: int) -> TestResult:
    """Welch two-sample t from summary statistics."""
    if n1 < 2 or n2 < 2:
        raise InvalidInputError("Welch test needs at least two observations per group")
    v1 = s1 * s1 / n1
    v2 = s2 * s2 / n2
    se2 = v1 + v2
    if se2 == 0:
        df = float(n1 + n2 - 2)
        if m1 == m2:
            return TestResult(statistic=0.0, df=df, p=1.0, kind=TestKind.WELCH_T)
        return TestResult(statistic=math.copysign(math.inf, m1 - m2), df=df, p=0.0, kind=TestKind.WELCH_T)
    t = (m1 - m2) / math.sqrt(se2)
    df = se2 * se2 / (v1 * v1 / (n1 - 1) + v2 * v2 / (n2 - 1))
    return TestResult(statistic=t, df=df, p=tail_prob_t(t, df), kind=TestKind.WELCH_T)


def welch_t(x: Sequence[float], y: Sequence[float]) -> TestResult:
    """Welch two-sample t-test with Satterthwaite degrees of freedom."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.size < 2 or ya.size < 2:
        raise InvalidInputError("Welch test needs at least two observations per group")
    return welch_from_summary(
        float(xa.mean()), float(xa.std(ddof=1)), int(xa.size),
        float(ya.mean()), float(ya.std(ddof=1)), int(ya.size),
    )


def backsolve_welch(
    m1: float, m2: float, t: float, df: float, n1: int, n2: int, floor: float = 1.0
) -> Tuple[float, float]:
    """
    Recover the two group sds from a reported Welch t and df.

    With a = s1^2/n1 and b = s2^2/n2 the report fixes a + b = (dm/t)^2 and the
    Satterthwaite df, which leaves a quadratic in a. Of the two roots, the one
    pairing the smaller sd with the mean nearer ``floor`` (the bottom of the
    response scale) is returned, as (s1, s2).
    """
    if t == 0 or not math.isfinite(t):
        raise InvalidParameterError(f"t must be finite and non-zero, got {t}")
    if n1 < 2 or n2 < 2:
        raise InvalidParameterError("each group needs n >= 2")
    if not (min(n1, n2) - 1 < df <= n1 + n2 - 2):
        raise InvalidParameterError(f"df={df} outside ({min(n1, n2) - 1}, {n1 + n2 - 2}]")

    S = ((m1 - m2) / t) ** 2
    Q = S * S / df
    k1 = 1.0 / (n1 - 1)
    k2 = 1.0 / (n2 - 1)
    # k1 a^2 + k2 (S - a)^2 = Q
    A = k1 + k2
    B = -2.0 * S * k2
    C = S * S * k2 - Q
    disc = B * B - 4.0 * A * C
    if disc < 0:
        if disc > -1e-9 * B * B:
            disc = 0.0
        else:
            raise InfeasibleParametersError(
                f"no real sds reproduce t={t}, df={df} (discriminant {disc:.6g})", discriminant=disc
            )

    root = math.sqrt(disc)
    candidates = []
    for a in ((-B - root) / (2.0 * A), (-B + root) / (2.0 * A)):
        b = S - a
        if a > 0 and b > 0:
            candidates.append((math.sqrt(n1 * a), math.sqrt(n2 * b)))
    if not candidates:
        raise InfeasibleParametersError(
            f"roots give non-positive variances for t={t}, df={df}", discriminant=disc
        )

    first_nearer_floor = abs(m1 - floor) <= abs(m2 - floor)
    for s1, s2 in candidates:
        if (s1 <= s2) == first_nearer_floor:
            return s1, s2
    return candidates[0]


# ============================================================================
# ANOVA
# ============================================================================

def _f_and_p(ss: float, df: int, ms_resid: float, df_resid: int) -> Tuple[float, float]:
    ms = ss / df
    if ms_resid > 0:
        F = ms / ms_resid
        return F, tail_prob_f(F, df, df_resid)
    if ss == 0:
        return 0.0, 1.0
    return math.inf, 0.0


def one_way_anova(
    values: Sequence[float],
    groups: Sequence[Any],
    term: str = "group",
    levels: Optional[Sequence[Any]] = None,
    title: str = "",
) -> AnovaTable:
    """Between/within decomposition with an upper-tail F test."""
    y = np.asarray(values, dtype=np.float64)
    g = [str(v) for v in groups]
    if y.size != len(g):
        raise InvalidInputError("values and groups differ in length")

    keys = [str(v) for v in levels] if levels is not None else list(dict.fromkeys(g))
    if len(keys) < 2:
        raise InvalidInputError("one-way ANOVA needs at least two groups")

    g_arr = np.asarray(g, dtype=object)
    members = {k: y[g_arr == k] for k in keys}
    empty = [k for k, v in members.items() if v.size == 0]
    if empty:
        raise InvalidInputError(f"empty group(s): {empty}")
    n = int(sum(v.size for v in members.values()))
    k = len(keys)
    if n <= k:
        raise InvalidDesignError(f"no residual degrees of freedom (n={n}, groups={k})")

    grand = float(np.concatenate(list(members.values())).mean())
    ssb = float(sum(v.size * (v.mean() - grand) ** 2 for v in members.values()))
    ssw = float(sum(((v - v.mean()) ** 2).sum() for v in members.values()))
    df_b, df_w = k - 1, n - k
    ms_w = ssw / df_w
    F, p = _f_and_p(ssb, df_b, ms_w, df_w)
    return AnovaTable(
        title=title,
        rows=[AnovaRow(term=term, df=df_b, sum_sq=ssb, mean_sq=ssb / df_b, F=F, p=p)],
        residual=AnovaRow(term="Residuals", df=df_w, sum_sq=ssw, mean_sq=ms_w),
    )


FACTORIAL_TERMS = ("facet", "rep", "facet:rep", "gender")

TERM_LABELS = {
    "facet": "Equivocality",
    "rep": "Information Representations",
    "facet:rep": "Equivocality x Information Representations",
    "gender": "Gender",
}


def _term_column(term: str, records: Sequence[PerformanceRecord]) -> np.ndarray:
    high = np.array([r.condition.facet is FacetLevel.HIGH for r in records], dtype=np.float64)
    prob = np.array([r.condition.rep is RepKind.PROBABILISTIC for r in records], dtype=np.float64)
    if term == "facet":
        return high
    if term == "rep":
        return prob
    if term == "facet:rep":
        return high * prob
    if term == "gender":
        return np.array([r.gender is Gender.F for r in records], dtype=np.float64)
    raise InvalidParameterError(f"unknown term {term!r}; expected one of {FACTORIAL_TERMS}")


def _rss(X: np.ndarray, y: np.ndarray) -> float:
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    return float(resid @ resid)


def factorial_anova_sequential(
    records: Sequence[PerformanceRecord],
    terms: Sequence[str] = FACTORIAL_TERMS,
    title: str = "",
) -> AnovaTable:
    """
    Type-I ANOVA: each term's sum of squares is the drop in residual SS when it
    enters the least-squares fit after the terms before it.
    """
    present = {r.condition.code for r in records}
    absent = [c.label for c in CONDITIONS if c.code not in present]
    if absent:
        raise InvalidDesignError(f"empty design cell(s): {absent}")

    y = np.array([r.profit for r in records], dtype=np.float64)
    n = y.size
    X = np.ones((n, 1))
    rank = 1
    rss_prev = _rss(X, y)

    steps = []
    for term in terms:
        X_next = np.column_stack([X, _term_column(term, records)])
        rank_next = int(np.linalg.matrix_rank(X_next))
        if rank_next == rank:
            raise InvalidDesignError(f"term {term!r} is aliased with earlier terms")
        rss_next = _rss(X_next, y)
        ss = rss_prev - rss_next
        if ss < 0:
            # round-off only; the fit is nested
            ss = 0.0
        steps.append((term, rank_next - rank, ss))
        X, rank, rss_prev = X_next, rank_next, rss_next

    df_resid = n - rank
    if df_resid <= 0:
        raise InvalidDesignError(f"no residual degrees of freedom (n={n}, parameters={rank})")
    ms_resid = rss_prev / df_resid

    rows = []
    for term, df, ss in steps:
        F, p = _f_and_p(ss, df, ms_resid, df_resid)
        rows.append(AnovaRow(term=TERM_LABELS.get(term, term), df=df, sum_sq=ss, mean_sq=ss / df, F=F, p=p))
    logger.debug("sequential ANOVA on %d records, residual df %d", n, df_resid)
    return AnovaTable(
        title=title,
        rows=rows,
        residual=AnovaRow(term="Residuals", df=df_resid, sum_sq=rss_prev, mean_sq=ms_resid),
    )


# ============================================================================
# Interaction plot data
# ============================================================================

class CellMean(BaseModel):
    facet: FacetLevel
    rep: RepKind
    label: str
    n: int
    mean: float


class InteractionData(BaseModel):
    cells: List[CellMean]
    indicator: int  # sign((C4 - C1) - (C3 - C2))
    contrast: float
    crosses: bool

    def mean_of(self, facet: FacetLevel, rep: RepKind) -> float:
        for c in self.cells:
            if c.facet is facet and c.rep is rep:
                return c.mean
        raise KeyError((facet, rep))


def interaction_plot_data(records: Sequence[PerformanceRecord]) -> InteractionData:
    """Four cell means for a two-line facet x representation plot."""
    stats = describe(records, lambda r: r.condition.label, order=[c.label for c in CONDITIONS])
    by_label = {s.group_key: s for s in stats}
    cells = [
        CellMean(facet=c.facet, rep=c.rep, label=c.label, n=by_label[c.label].n, mean=by_label[c.label].mean)
        for c in CONDITIONS
    ]
    c1, c2, c3, c4 = (cell.mean for cell in cells)
    contrast = (c4 - c1) - (c3 - c2)
    indicator = int(np.sign(contrast))
    # Det minus Prob at each facet level; opposite signs mean the lines cross
    gap_high = c1 - c2
    gap_low = c4 - c3
    return InteractionData(
        cells=cells,
        indicator=indicator,
        contrast=contrast,
        crosses=bool(gap_high * gap_low < 0),
    )


# ============================================================================
# Hypothesis battery
# ============================================================================

class HypothesisResult(BaseModel):
    name: str
    description: str
    source: str  # which ANOVA table the p-value comes from
    p: float
    effect: float  # signed so that a positive value is the hypothesized direction
    supported: bool


def _mean_profit(rows: Sequence[PerformanceRecord]) -> float:
    return float(np.mean([r.profit for r in rows]))


def hypothesis_battery(
    records: Sequence[PerformanceRecord], alpha: float = 0.05
) -> Tuple[AnovaTable, Dict[str, AnovaTable], List[HypothesisResult]]:
    """
    Factorial table, the three one-way tables, and the Ha-He verdicts.

    A hypothesis is supported when its term is significant at ``alpha`` and
    the means differ in the stated direction.
    """
    factorial = factorial_anova_sequential(
        records, title="ANOVA for performance means of high and low equivocality"
    )

    def subset(pred):
        return [r for r in records if pred(r)]

    high = subset(lambda r: r.condition.facet is FacetLevel.HIGH)
    low = subset(lambda r: r.condition.facet is FacetLevel.LOW)
    prob = subset(lambda r: r.condition.rep is RepKind.PROBABILISTIC)
    det = subset(lambda r: r.condition.rep is RepKind.DETERMINISTIC)

    one_way = {
        "high_equivocality": one_way_anova(
            [r.profit for r in high], [r.condition.rep.value for r in high],
            term="iR: Det and Prob",
            levels=[RepKind.DETERMINISTIC.value, RepKind.PROBABILISTIC.value],
            title="ANOVA for performance means under high equivocality",
        ),
        "probabilistic": one_way_anova(
            [r.profit for r in prob], [r.condition.facet.value for r in prob],
            term="iF: High and Low",
            levels=[FacetLevel.HIGH.value, FacetLevel.LOW.value],
            title="ANOVA for performance means under probabilistic condition",
        ),
        "deterministic": one_way_anova(
            [r.profit for r in det], [r.condition.facet.value for r in det],
            term="iF: High and Low",
            levels=[FacetLevel.HIGH.value, FacetLevel.LOW.value],
            title="ANOVA for performance means under deterministic condition",
        ),
    }

    interaction = interaction_plot_data(records)
    cell = interaction.mean_of
    H, L = FacetLevel.HIGH, FacetLevel.LOW
    D, P = RepKind.DETERMINISTIC, RepKind.PROBABILISTIC

    specs = [
        ("Ha", "Low equivocality outperforms high equivocality", "factorial",
         factorial.row(TERM_LABELS["facet"]).p, _mean_profit(low) - _mean_profit(high)),
        ("Hb", "Under high equivocality, Prob outperforms Det", "high_equivocality",
         one_way["high_equivocality"].rows[0].p, cell(H, P) - cell(H, D)),
        ("Hc", "Under Prob, low equivocality outperforms high", "probabilistic",
         one_way["probabilistic"].rows[0].p, cell(L, P) - cell(H, P)),
        ("Hd", "Under Det, low equivocality outperforms high", "deterministic",
         one_way["deterministic"].rows[0].p, cell(L, D) - cell(H, D)),
        ("He", "The gain from high to low equivocality is larger under Det than under Prob", "factorial",
         factorial.row(TERM_LABELS["facet:rep"]).p, interaction.contrast),
    ]
    verdicts = [
        HypothesisResult(
            name=name, description=desc, source=src, p=p, effect=effect,
            supported=bool(p < alpha and effect > 0),
        )
        for name, desc, src, p, effect in specs
    ]
    return factorial, one_way, verdicts
