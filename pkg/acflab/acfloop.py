"""
Adaptive representation recommender.

For each facet level the loop runs a two-armed bandit over the
representations: feedback updates the arm statistics from observed
performance, feedforward picks the representation to serve next.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from acflab.domain import CONDITIONS, ConditionCode, FacetLevel, RepKind, condition_of
from acflab.errors import InvalidInputError, InvalidParameterError
from acflab.stats import GroupStats, describe
from acflab.synthlab import STREAM_LOOP, Calibration, RngStream, make_rng

logger = logging.getLogger(__name__)

DEFAULT_EXPLORATION_C = 2.0
ARM_ORDER = (RepKind.DETERMINISTIC, RepKind.PROBABILISTIC)


class Policy(str, Enum):
    GREEDY_MEAN = "greedy_mean"
    OPTIMISM = "optimism"


# ============================================================================
# Arm statistics
# ============================================================================

class ArmStats(BaseModel):
    """Streaming count, mean and sum of squared deviations for one (facet, rep) arm."""

    facet: FacetLevel
    rep: RepKind
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, x: float) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    @property
    def sd(self) -> Optional[float]:
        return math.sqrt(self.m2 / (self.n - 1)) if self.n >= 2 else None


def _pooled(a: ArmStats, b: ArmStats) -> Tuple[int, float, float]:
    """Combine two streaming summaries into (n, mean, m2)."""
    n = a.n + b.n
    if n == 0:
        return 0, 0.0, 0.0
    delta = b.mean - a.mean
    mean = a.mean + delta * b.n / n
    m2 = a.m2 + b.m2 + delta * delta * a.n * b.n / n
    return n, mean, m2


class Observation(BaseModel):
    model_config = ConfigDict(frozen=True)

    t: int
    facet: FacetLevel
    rep: RepKind
    performance: float


class LoopState(BaseModel):
    """
    Single-writer recommender state; arms are recoverable from ``history``.
    ``rng`` is the stream a simulated run draws facets and rewards from; it
    stays None when performance comes from outside.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    policy: Policy = Policy.OPTIMISM
    exploration_c: float = Field(DEFAULT_EXPLORATION_C, ge=0)
    arms: Dict[str, ArmStats] = Field(default_factory=dict)
    history: List[Observation] = Field(default_factory=list)
    rng: Optional[RngStream] = Field(default=None, exclude=True, repr=False)

    def arm(self, facet: FacetLevel, rep: RepKind) -> ArmStats:
        return self.arms[condition_of(facet, rep).code.value]


def new_state(
    policy: Policy = Policy.OPTIMISM,
    exploration_c: float = DEFAULT_EXPLORATION_C,
    rng: Optional[RngStream] = None,
) -> LoopState:
    arms = {
        cond.code.value: ArmStats(facet=cond.facet, rep=cond.rep)
        for cond in CONDITIONS
    }
    return LoopState(policy=Policy(policy), exploration_c=exploration_c, arms=arms, rng=rng)


# ============================================================================
# Feedforward / feedback
# ============================================================================

def _bonus_scale(state: LoopState, facet: FacetLevel, arm: ArmStats) -> float:
    """The larger of the arm's own sd and the sd pooled over both arms of the facet."""
    det, prob = (state.arm(facet, rep) for rep in ARM_ORDER)
    t_facet, _, m2 = _pooled(det, prob)
    pooled = math.sqrt(m2 / (t_facet - 1)) if t_facet >= 2 else 0.0
    return max(arm.sd or 0.0, pooled)


def _score(state: LoopState, facet: FacetLevel, arm: ArmStats) -> float:
    if state.policy is Policy.GREEDY_MEAN:
        return arm.mean
    t_facet = sum(state.arm(facet, rep).n for rep in ARM_ORDER)
    scale = _bonus_scale(state, facet, arm)
    return arm.mean + state.exploration_c * scale * math.sqrt(math.log(t_facet) / arm.n)


def recommend(state: LoopState, facet: FacetLevel) -> RepKind:
    """
    Unplayed arms first (Det, then Prob); otherwise the higher policy score.
    Equal scores go to Det.
    """
    facet = FacetLevel(facet)
    arms = [state.arm(facet, rep) for rep in ARM_ORDER]
    for arm in arms:
        if arm.n == 0:
            return arm.rep
    det_score, prob_score = (_score(state, facet, arm) for arm in arms)
    return RepKind.PROBABILISTIC if prob_score > det_score else RepKind.DETERMINISTIC


def observe(state: LoopState, facet: FacetLevel, rep: RepKind, performance: float) -> LoopState:
    """Record one outcome; mutates and returns ``state``."""
    if not math.isfinite(performance):
        raise InvalidInputError(f"performance must be finite, got {performance}")
    facet, rep = FacetLevel(facet), RepKind(rep)
    state.arm(facet, rep).update(float(performance))
    state.history.append(
        Observation(t=len(state.history) + 1, facet=facet, rep=rep, performance=float(performance))
    )
    return state


def replay(
    history: Sequence[Observation],
    policy: Policy = Policy.OPTIMISM,
    exploration_c: float = DEFAULT_EXPLORATION_C,
) -> LoopState:
    state = new_state(policy, exploration_c)
    for obs in history:
        observe(state, obs.facet, obs.rep, obs.performance)
    return state


def fit_predictor(history: Sequence[Observation]) -> List[GroupStats]:
    """Per-arm (n, mean, sd) in C1..C4 order, identical to describe() on the same rows."""
    if not history:
        raise InvalidInputError("fit_predictor needs a non-empty history")
    present = {condition_of(o.facet, o.rep).label for o in history}
    return describe(
        history,
        group_by=lambda o: condition_of(o.facet, o.rep).label,
        value=lambda o: o.performance,
        order=[c.label for c in CONDITIONS if c.label in present],
    )


# ============================================================================
# Environment and simulation loop
# ============================================================================

class ArmSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: float
    sd: float = Field(..., ge=0)


class Environment(BaseModel):
    """True per-condition reward distributions; sd 0 gives deterministic rewards."""
    model_config = ConfigDict(frozen=True)

    name: str
    arms: Dict[ConditionCode, ArmSpec]

    def arm(self, facet: FacetLevel, rep: RepKind) -> ArmSpec:
        return self.arms[condition_of(facet, rep).code]

    def best_mean(self, facet: FacetLevel) -> float:
        return max(self.arm(facet, rep).mean for rep in ARM_ORDER)

    def best_rep(self, facet: FacetLevel) -> RepKind:
        det, prob = (self.arm(facet, rep).mean for rep in ARM_ORDER)
        return RepKind.PROBABILISTIC if prob > det else RepKind.DETERMINISTIC


def environment_from_calibration(cal: Calibration) -> Environment:
    """Rewards come from the last axis, which carries performance."""
    axis = cal.dim - 1
    return Environment(
        name=cal.name,
        arms={
            g.condition.code: ArmSpec(mean=g.mean[axis], sd=g.sd[axis])
            for g in cal.per_condition
        },
    )


class LoopStep(BaseModel):
    step: int
    facet: FacetLevel
    choice: RepKind
    reward: float
    cum_regret: float


class FacetFrequency(BaseModel):
    facet: FacetLevel
    n: int
    deterministic: float
    probabilistic: float

    @property
    def modal(self) -> Optional[RepKind]:
        if self.n == 0:
            return None
        return RepKind.PROBABILISTIC if self.probabilistic > self.deterministic else RepKind.DETERMINISTIC


class LoopTrace(BaseModel):
    environment: str
    policy: Policy
    exploration_c: float
    T: int
    seed: int
    steps: List[LoopStep]
    final_quarter: List[FacetFrequency]
    arms: List[ArmStats]
    total_regret: float

    def frequency(self, facet: FacetLevel) -> FacetFrequency:
        for f in self.final_quarter:
            if f.facet == facet:
                return f
        raise KeyError(facet)

    def modal_choices(self) -> Dict[str, Optional[str]]:
        return {
            f.facet.value: (f.modal.value if f.modal is not None else None)
            for f in self.final_quarter
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "step": [s.step for s in self.steps],
                "facet": [s.facet.value for s in self.steps],
                "choice": [s.choice.value for s in self.steps],
                "reward": [s.reward for s in self.steps],
                "cum_regret": [s.cum_regret for s in self.steps],
            },
            columns=["step", "facet", "choice", "reward", "cum_regret"],
        )


def _final_quarter(steps: List[LoopStep]) -> List[FacetFrequency]:
    tail = steps[len(steps) - len(steps) // 4:]
    out = []
    for facet in (FacetLevel.HIGH, FacetLevel.LOW):
        chosen = [s.choice for s in tail if s.facet == facet]
        n = len(chosen)
        det = sum(1 for c in chosen if c is RepKind.DETERMINISTIC)
        out.append(
            FacetFrequency(
                facet=facet,
                n=n,
                deterministic=det / n if n else 0.0,
                probabilistic=(n - det) / n if n else 0.0,
            )
        )
    return out


def run_loop(
    env: Environment,
    policy: Policy,
    T: int,
    seed: int,
    exploration_c: float = DEFAULT_EXPLORATION_C,
) -> LoopTrace:
    """
    Each step draws the facet (High when u < 0.5), recommends, draws the
    reward from the chosen arm and observes it. One stream per run.
    """
    if isinstance(env, Calibration):
        env = environment_from_calibration(env)
    if T < 8:
        raise InvalidParameterError(f"T must be >= 8, got {T}")

    state = new_state(policy, exploration_c, rng=make_rng(seed, STREAM_LOOP))
    rng = state.rng
    steps: List[LoopStep] = []
    regret = 0.0
    for step in range(1, T + 1):
        facet = FacetLevel.HIGH if rng.uniform() < 0.5 else FacetLevel.LOW
        rep = recommend(state, facet)
        spec = env.arm(facet, rep)
        reward = spec.mean + spec.sd * rng.normal()
        observe(state, facet, rep, reward)
        regret += env.best_mean(facet) - spec.mean
        steps.append(LoopStep(step=step, facet=facet, choice=rep, reward=reward, cum_regret=regret))

    logger.debug("loop %s/%s T=%d seed=%d regret=%.3f", env.name, Policy(policy).value, T, seed, regret)
    return LoopTrace(
        environment=env.name,
        policy=Policy(policy),
        exploration_c=exploration_c,
        T=T,
        seed=seed,
        steps=steps,
        final_quarter=_final_quarter(steps),
        arms=[state.arms[c.code.value] for c in CONDITIONS],
        total_regret=regret,
    )


def loop_batch(
    env: Environment,
    policy: Policy,
    T: int,
    seeds: Sequence[int],
    exploration_c: float = DEFAULT_EXPLORATION_C,
    workers: int = 1,
) -> List[LoopTrace]:
    """Independent replications, returned in seed order."""
    ordered = sorted(seeds)

    def run(seed: int) -> LoopTrace:
        return run_loop(env, policy, T, seed, exploration_c)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, ordered))
    return [run(s) for s in ordered]
