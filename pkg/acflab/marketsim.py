"""
Single-equity trading-day simulator with condition-parameterized agents.

The price follows an arithmetic random walk plus a linear drift from the
start price to the end-of-day fundamental after the news tick. An agent forms
a perceived value at the news tick, commits to a direction, trades toward its
perceived value in fixed lots, and closes any inventory at the final price.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from acflab.domain import (
    CONDITIONS,
    Condition,
    ConditionCode,
    Gender,
    PerformanceRecord,
    condition_from_code,
)
from acflab.errors import CalibrationError, InvalidParameterError
from acflab.synthlab import (
    STREAM_CALIBRATION,
    STREAM_EXPERIMENT,
    RngLanes,
    RngStream,
    make_lanes,
)

logger = logging.getLogger(__name__)

THRESHOLD_FACTOR = 0.5
DEFAULT_CELLS = (22, 22, 19, 22)
DEFAULT_GENDERS = (40, 45)

_NONE, _BUY, _SELL, _SHORT = 0, 1, 2, 3
_SIDE_NAMES = {_BUY: "buy", _SELL: "sell", _SHORT: "short"}


# ============================================================================
# Models
# ============================================================================

class MarketScenario(BaseModel):
    model_config = ConfigDict(frozen=True)

    start_price: float = Field(20.0, gt=0)
    fundamental_eod: float = Field(22.0, gt=0)
    n_ticks: int = Field(390, ge=2)
    volatility: float = Field(0.02, ge=0)
    news_tick: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _news_inside_day(self) -> "MarketScenario":
        if self.news_tick >= self.n_ticks:
            raise ValueError(f"news_tick {self.news_tick} must be < n_ticks {self.n_ticks}")
        return self

    @property
    def rise(self) -> float:
        return self.fundamental_eod - self.start_price


class AgentParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    condition: Condition
    perception_bias: float = 0.0
    perception_noise_sd: float = Field(0.0, ge=0)
    trade_size: float = Field(1.0, ge=0)
    max_position: float = Field(10.0, gt=0)


class Fill(BaseModel):
    tick: int
    side: str
    qty: float
    price: float


class TradeLog(BaseModel):
    fills: List[Fill]
    perceived_value: float
    direction: int
    eod_profit: float


# ============================================================================
# Price process
# ============================================================================

def _drift(scenario: MarketScenario) -> np.ndarray:
    n = scenario.n_ticks
    span = n - 1 - scenario.news_tick
    t = np.arange(n, dtype=np.float64)
    if span <= 0:
        frac = np.zeros(n)
    else:
        frac = np.clip((t - scenario.news_tick) / span, 0.0, 1.0)
    return scenario.rise * frac


def paths_from_normals(scenario: MarketScenario, Z: np.ndarray) -> np.ndarray:
    """Price paths (lanes x n_ticks) from per-tick standard normals (lanes x n_ticks-1)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    walk = np.zeros((Z.shape[0], scenario.n_ticks))
    walk[:, 1:] = np.cumsum(scenario.volatility * Z, axis=1)
    paths = scenario.start_price + _drift(scenario)[None, :] + walk
    paths[:, -1] = scenario.fundamental_eod + walk[:, -1]
    return paths


def price_path(scenario: MarketScenario, rng: RngStream) -> np.ndarray:
    """One price path; path[0] is the start price, consuming n_ticks-1 normals."""
    return paths_from_normals(scenario, rng.normals(scenario.n_ticks - 1))[0]


# ============================================================================
# Trading
# ============================================================================

def _threshold(scenario: MarketScenario, t: int) -> float:
    return THRESHOLD_FACTOR * scenario.volatility * math.sqrt(scenario.n_ticks - 1 - t)


def _trade(
    scenario: MarketScenario,
    paths: np.ndarray,
    vhat: np.ndarray,
    size: np.ndarray,
    max_pos: np.ndarray,
    record: bool = False,
):
    """
    Vectorized trading over lanes. Returns (profit, direction, qty, side) where
    qty/side are lanes x n_ticks matrices when ``record`` is set, else None.
    """
    L, n = paths.shape
    news = scenario.news_tick
    pos = np.zeros(L)
    cash = np.zeros(L)
    qty = np.zeros((L, n)) if record else None
    side = np.zeros((L, n), dtype=np.int8) if record else None

    theta0 = _threshold(scenario, news) if news < n - 1 else 0.0
    edge0 = vhat - paths[:, news]
    direction = np.where(edge0 > theta0, 1, np.where(-edge0 > theta0, -1, 0))
    if news >= n - 1:
        direction = np.zeros(L, dtype=int)
    is_long = direction == 1
    is_short = direction == -1

    for t in range(news, n - 1):
        p = paths[:, t]
        theta = _threshold(scenario, t)
        up = (vhat - p) > theta
        down = (p - vhat) > theta

        long_buy = np.where(is_long & up, np.minimum(size, max_pos - pos), 0.0)
        long_sell = np.where(is_long & down, np.minimum(size, pos), 0.0)
        short_sell = np.where(is_short & down, np.minimum(size, max_pos + pos), 0.0)
        cover = np.where(is_short & up, np.minimum(size, -pos), 0.0)
        buys = np.maximum(long_buy, 0.0) + np.maximum(cover, 0.0)
        sells = np.maximum(long_sell, 0.0)
        shorts = np.maximum(short_sell, 0.0)

        pos += buys - sells - shorts
        cash += (sells + shorts - buys) * p
        if record:
            qty[:, t] = buys + sells + shorts
            side[:, t] = np.where(buys > 0, _BUY, np.where(sells > 0, _SELL, np.where(shorts > 0, _SHORT, _NONE)))

    close = paths[:, -1]
    cash += pos * close
    if record:
        qty[:, -1] = np.abs(pos)
        side[:, -1] = np.where(pos > 0, _SELL, np.where(pos < 0, _BUY, _NONE))
    return cash, direction, qty, side


def _logs(paths, vhat, profit, direction, qty, side) -> List[TradeLog]:
    logs = []
    for i in range(paths.shape[0]):
        ticks = np.nonzero(side[i])[0]
        fills = [
            Fill(tick=int(t), side=_SIDE_NAMES[int(side[i, t])], qty=float(qty[i, t]), price=float(paths[i, t]))
            for t in ticks
        ]
        logs.append(
            TradeLog(
                fills=fills,
                perceived_value=float(vhat[i]),
                direction=int(direction[i]),
                eod_profit=float(profit[i]),
            )
        )
    return logs


def _agent_arrays(agents: Sequence[AgentParams]):
    bias = np.array([a.perception_bias for a in agents])
    noise = np.array([a.perception_noise_sd for a in agents])
    size = np.array([a.trade_size for a in agents])
    max_pos = np.array([a.max_position for a in agents])
    return bias, noise, size, max_pos


def simulate_day(scenario: MarketScenario, agent: AgentParams, rng: RngStream) -> TradeLog:
    """
    One agent, one day. Draws the price path first, then the agent's
    perception shock.
    """
    Z = rng.normals(scenario.n_ticks - 1)
    z = rng.normal()
    paths = paths_from_normals(scenario, Z)
    bias, noise, size, max_pos = _agent_arrays([agent])
    vhat = scenario.fundamental_eod + bias + noise * z
    profit, direction, qty, side = _trade(scenario, paths, vhat, size, max_pos, record=True)
    return _logs(paths, vhat, profit, direction, qty, side)[0]


def simulate_batch(scenario: MarketScenario, agents: Sequence[AgentParams], lanes: RngLanes) -> List[TradeLog]:
    """simulate_day for many agents at once, agent i on lane i."""
    if len(agents) != len(lanes):
        raise InvalidParameterError(f"{len(agents)} agents for {len(lanes)} lanes")
    if not agents:
        return []
    Z = np.empty((len(lanes), scenario.n_ticks - 1))
    for t in range(scenario.n_ticks - 1):
        Z[:, t] = lanes.normal()
    z = lanes.normal()
    paths = paths_from_normals(scenario, Z)
    bias, noise, size, max_pos = _agent_arrays(agents)
    vhat = scenario.fundamental_eod + bias + noise * z
    profit, direction, qty, side = _trade(scenario, paths, vhat, size, max_pos, record=True)
    return _logs(paths, vhat, profit, direction, qty, side)


# ============================================================================
# Calibration
# ============================================================================

class CalibratedAgent(BaseModel):
    params: AgentParams
    target_mean: float
    target_sd: float
    achieved_mean: float
    achieved_sd: float
    objective: float
    iterations: int
    n_agents: int

    @property
    def within_tolerance(self) -> bool:
        tol_m, tol_s = moment_tolerances(self.target_mean, self.target_sd)
        return (
            abs(self.achieved_mean - self.target_mean) <= tol_m
            and abs(self.achieved_sd - self.target_sd) <= tol_s
        )


def moment_tolerances(target_mean: float, target_sd: float) -> Tuple[float, float]:
    """10% of |mean| (0.5 absolute below 1) and 15% of sd."""
    tol_m = 0.5 if abs(target_mean) < 1 else 0.1 * abs(target_mean)
    tol_s = max(0.15 * target_sd, 1e-9)
    return tol_m, tol_s


class _CommonDraws:
    """Common random numbers shared by every candidate evaluated in a search."""

    def __init__(self, scenario: MarketScenario, n_agents: int, seed: int):
        lanes = make_lanes(seed, [STREAM_CALIBRATION + i for i in range(n_agents)])
        Z = np.empty((n_agents, scenario.n_ticks - 1))
        for t in range(scenario.n_ticks - 1):
            Z[:, t] = lanes.normal()
        self.z = lanes.normal()
        self.paths = paths_from_normals(scenario, Z)
        self.scenario = scenario

    def moments(self, bias: float, noise: float, size: float, max_pos: float, limit: Optional[int] = None):
        paths = self.paths if limit is None else self.paths[:limit]
        z = self.z if limit is None else self.z[:limit]
        vhat = self.scenario.fundamental_eod + bias + noise * z
        L = paths.shape[0]
        profit, _, _, _ = _trade(self.scenario, paths, vhat, np.full(L, size), np.full(L, max_pos))
        return float(profit.mean()), float(profit.std(ddof=1))


def _objective(mean: float, sd: float, target_mean: float, target_sd: float) -> float:
    tol_m, tol_s = moment_tolerances(target_mean, target_sd)
    return ((mean - target_mean) / tol_m) ** 2 + ((sd - target_sd) / tol_s) ** 2


def _calibrate_one(
    draws: _CommonDraws,
    condition: Condition,
    target_mean: float,
    target_sd: float,
    budget: int,
    max_position: float,
    grid_agents: int,
    stop_objective: float,
) -> CalibratedAgent:
    scenario = draws.scenario
    rise = abs(scenario.rise) or 1.0

    def score(x, limit=None):
        m, s = draws.moments(x[0], x[1], x[2], max_position, limit)
        return _objective(m, s, target_mean, target_sd), m, s

    # zero-trade candidate first so exact (0, 0) targets are hit without search
    candidates = [(0.0, 0.0, 0.0)]
    for frac in np.linspace(-0.25, 1.25, 7):
        for noise in (0.0, 0.05, 0.15, 0.4, 1.0):
            for size in (1.0, 0.5 * max_position):
                candidates.append((-rise + frac * rise, noise * rise, size))

    best_x, best_j = None, math.inf
    for x in candidates:
        j, _, _ = score(x, grid_agents)
        if j < best_j:
            best_x, best_j = x, j

    x = list(best_x)
    j, m, s = score(x)
    steps = [0.1 * rise, 0.1 * rise, 0.1 * max_position]
    lower = [-math.inf, 0.0, 0.0]
    upper = [math.inf, math.inf, max_position]

    iterations = 0
    while iterations < budget and j >= stop_objective and max(steps) > 1e-6:
        iterations += 1
        improved = False
        for k in range(3):
            for sign in (1.0, -1.0):
                trial = list(x)
                trial[k] = min(max(trial[k] + sign * steps[k], lower[k]), upper[k])
                if trial[k] == x[k]:
                    continue
                tj, tm, ts = score(trial)
                if tj < j:
                    x, j, m, s = trial, tj, tm, ts
                    improved = True
                    break
        if not improved:
            steps = [st / 2 for st in steps]

    params = AgentParams(
        condition=condition,
        perception_bias=x[0],
        perception_noise_sd=x[1],
        trade_size=x[2],
        max_position=max_position,
    )
    logger.info(
        "calibrated %s: target (%.3f, %.3f) achieved (%.3f, %.3f) after %d iterations",
        condition.label, target_mean, target_sd, m, s, iterations,
    )
    return CalibratedAgent(
        params=params,
        target_mean=target_mean,
        target_sd=target_sd,
        achieved_mean=m,
        achieved_sd=s,
        objective=j,
        iterations=iterations,
        n_agents=draws.paths.shape[0],
    )


def calibrate_agents(
    targets: Dict[ConditionCode, Tuple[float, float]],
    scenario: MarketScenario,
    budget: int,
    seed: int,
    n_agents: int = 2000,
    max_position: float = 10.0,
    grid_agents: int = 500,
    stop_objective: float = 0.25,
) -> Dict[ConditionCode, CalibratedAgent]:
    """
    Moment-match (bias, noise, trade size) per condition to target end-of-day
    profit (mean, sd): a coarse grid on a subsample of agents, then coordinate
    descent with step halving on the full set.

    Raises CalibrationError listing per-condition residuals when any condition
    misses tolerance.
    """
    if budget < 1:
        raise InvalidParameterError(f"budget must be >= 1, got {budget}")
    if n_agents < 2:
        raise InvalidParameterError(f"n_agents must be >= 2, got {n_agents}")

    draws = _CommonDraws(scenario, n_agents, seed)
    results: Dict[ConditionCode, CalibratedAgent] = {}
    for code in sorted(targets, key=lambda c: ConditionCode(c).value):
        target_mean, target_sd = targets[code]
        results[ConditionCode(code)] = _calibrate_one(
            draws,
            condition_from_code(code),
            float(target_mean),
            float(target_sd),
            budget,
            max_position,
            min(grid_agents, n_agents),
            stop_objective,
        )

    failed = {
        code.value: {
            "mean_residual": r.achieved_mean - r.target_mean,
            "sd_residual": r.achieved_sd - r.target_sd,
        }
        for code, r in results.items()
        if not r.within_tolerance
    }
    if failed:
        raise CalibrationError(
            f"calibration missed tolerance for {sorted(failed)} within budget {budget}",
            residuals=failed,
        )
    return results


def resimulate_moments(
    scenario: MarketScenario, params: AgentParams, n_agents: int, seed: int
) -> Tuple[float, float]:
    """Independent re-simulation of a calibrated agent on fresh streams."""
    lanes = make_lanes(seed, [STREAM_EXPERIMENT + i for i in range(n_agents)])
    logs = simulate_batch(scenario, [params] * n_agents, lanes)
    profit = np.array([log.eod_profit for log in logs])
    return float(profit.mean()), float(profit.std(ddof=1))


# ============================================================================
# Experiment
# ============================================================================

def assignment_order(cells: Sequence[int]) -> List[int]:
    """Condition index per subject, interleaved round-robin across conditions."""
    remaining = list(cells)
    order = []
    while any(r > 0 for r in remaining):
        for idx, r in enumerate(remaining):
            if r > 0:
                order.append(idx)
                remaining[idx] -= 1
    return order


def run_experiment(
    cells: Sequence[int],
    genders: Tuple[int, int],
    scenario: MarketScenario,
    params: Dict[ConditionCode, AgentParams],
    seed: int,
) -> List[PerformanceRecord]:
    """
    One simulated trading day per subject. Subject i (in interleaved order)
    trades on stream STREAM_EXPERIMENT + i; the first nF subjects are female.
    """
    if len(cells) != 4 or any(c < 0 for c in cells):
        raise InvalidParameterError(f"cells must be four non-negative counts, got {list(cells)}")
    n_female, n_male = genders
    if n_female < 0 or n_male < 0:
        raise InvalidParameterError(f"gender counts must be non-negative, got {genders}")
    total = sum(cells)
    if total != n_female + n_male:
        raise InvalidParameterError(
            f"cell total {total} does not match gender total {n_female + n_male}"
        )
    for cond in CONDITIONS:
        if cells[cond.index] and cond.code not in params:
            raise InvalidParameterError(f"no agent parameters for {cond.code.value}")

    order = assignment_order(cells)
    width = max(3, len(str(total)))
    agents = [params[CONDITIONS[idx].code] for idx in order]
    lanes = make_lanes(seed, [STREAM_EXPERIMENT + i for i in range(total)])
    logs = simulate_batch(scenario, agents, lanes)

    records = [
        PerformanceRecord(
            subject_id=f"S{i + 1:0{width}d}",
            condition=CONDITIONS[idx],
            gender=Gender.F if i < n_female else Gender.M,
            profit=log.eod_profit,
        )
        for i, (idx, log) in enumerate(zip(order, logs))
    ]
    logger.info("simulated %d subjects across cells %s", total, list(cells))
    return sorted(records, key=lambda r: r.subject_id)
