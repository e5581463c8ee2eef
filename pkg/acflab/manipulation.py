"""
Equivocality manipulation checks reproduced as synthetic Likert groups.
"""

import logging
from typing import List

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from acflab.domain import RepKind
from acflab.stats import TestResult, backsolve_welch, significance_code, welch_t
from acflab.synthlab import STREAM_MANIPULATION, make_rng

logger = logging.getLogger(__name__)

LIKERT_FLOOR = 1.0


class ManipulationSummary(BaseModel):
    """Reported low- vs high-equivocality ratings for one representation."""
    model_config = ConfigDict(frozen=True)

    name: str
    representation: RepKind
    low_mean: float
    high_mean: float
    t: float
    df: float
    n_low: int = Field(22, ge=2)
    n_high: int = Field(22, ge=2)


class ManipulationResult(BaseModel):
    summary: ManipulationSummary
    low_sd: float
    high_sd: float
    reproduced: TestResult
    signif: str


def builtin_manipulation_checks() -> List[ManipulationSummary]:
    return [
        ManipulationSummary(
            name="A", representation=RepKind.PROBABILISTIC,
            low_mean=1.62, high_mean=5.81, t=-14.69, df=31.10,
        ),
        ManipulationSummary(
            name="B", representation=RepKind.DETERMINISTIC,
            low_mean=1.53, high_mean=6.05, t=-22.23, df=35.48,
        ),
    ]


def _draw(seed: int, stream_id: int, n: int, mean: float, sd: float, match_moments: bool) -> np.ndarray:
    z = make_rng(seed, stream_id).normals(n)
    if match_moments:
        z = (z - z.mean()) / z.std(ddof=1)
    return mean + sd * z


def run_manipulation_check(
    summary: ManipulationSummary, seed: int, match_moments: bool = True
) -> ManipulationResult:
    """
    Back-solve the group sds from the reported t and df, draw both groups and
    rerun the Welch test. With ``match_moments`` the draws are standardized so
    the sample moments, and therefore t and df, equal the reported ones.
    """
    low_sd, high_sd = backsolve_welch(
        summary.low_mean, summary.high_mean, summary.t, summary.df,
        summary.n_low, summary.n_high, floor=LIKERT_FLOOR,
    )
    offset = STREAM_MANIPULATION + 2 * (ord(summary.name[0]) - ord("A"))
    low = _draw(seed, offset, summary.n_low, summary.low_mean, low_sd, match_moments)
    high = _draw(seed, offset + 1, summary.n_high, summary.high_mean, high_sd, match_moments)
    result = welch_t(low, high)
    logger.debug("manipulation check %s: t=%.3f df=%.2f", summary.name, result.statistic, result.df)
    return ManipulationResult(
        summary=summary,
        low_sd=low_sd,
        high_sd=high_sd,
        reproduced=result,
        signif=significance_code(result.p),
    )


def manipulation_frame(results: List[ManipulationResult]) -> pd.DataFrame:
    rows = []
    for r in results:
        s = r.summary
        rows.append(
            {
                "check": s.name,
                "representation": s.representation.value,
                "low_mean": s.low_mean,
                "high_mean": s.high_mean,
                "low_sd": r.low_sd,
                "high_sd": r.high_sd,
                "reported_t": s.t,
                "reported_df": s.df,
                "t": r.reproduced.statistic,
                "df": r.reproduced.df,
                "p": r.reproduced.p,
                "signif": r.signif,
            }
        )
    return pd.DataFrame(rows)
