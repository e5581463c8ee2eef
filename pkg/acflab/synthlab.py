"""
Seedable random streams and per-condition Gaussian data synthesis.

The generator is xoshiro256** seeded through the splitmix64 finalizer, so a
(seed, stream_id) pair yields the same sequence on every platform. ``RngStream``
is the scalar single-owner stream; ``RngLanes`` advances many independent
streams at once with numpy and produces, lane for lane, the exact sequence the
scalar stream would.
"""

import logging
import math
from typing import Iterable, List, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from acflab.domain import CONDITIONS, Condition, ConditionCode, condition_from_label
from acflab.errors import InvalidParameterError

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# Stream namespaces. Synthesis uses the bare condition index (namespace 0).
STREAM_SYNTH = 0
STREAM_EXPERIMENT = 1 << 32
STREAM_LOOP = 2 << 32
STREAM_MANIPULATION = 3 << 32
STREAM_CALIBRATION = 4 << 32


# ============================================================================
# 64-bit mixing
# ============================================================================

def mix64(z: int) -> int:
    """splitmix64 finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def seed_state(seed: int, stream_id: int) -> List[int]:
    """Derive the four xoshiro state words for a (seed, stream_id) pair."""
    key = mix64((seed & MASK64) ^ mix64((stream_id * GOLDEN_GAMMA + 0x5851F42D4C957F2D) & MASK64))
    words = []
    for _ in range(4):
        key = (key + GOLDEN_GAMMA) & MASK64
        words.append(mix64(key))
    if not any(words):
        words[0] = 1
    return words


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


# ============================================================================
# Scalar stream
# ============================================================================

class RngStream:
    """Single-owner xoshiro256** stream."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._s = seed_state(self.seed, self.stream_id)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform draw on (0, 1] with 53 bits of resolution."""
        return ((self.next_u64() >> 11) + 1) * (1.0 / 9007199254740992.0)

    def normal(self) -> float:
        """Standard normal via two-uniform Box-Muller; the second variate is discarded."""
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, count: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(count)], dtype=np.float64)

    def state(self) -> tuple:
        return tuple(self._s)


def make_rng(seed: int, stream_id: int = 0) -> RngStream:
    """Create the deterministic stream for (seed, stream_id)."""
    return RngStream(seed, stream_id)


# ============================================================================
# Vectorized lanes
# ============================================================================

_U5 = np.uint64(5)
_U9 = np.uint64(9)
_U11 = np.uint64(11)
_U17 = np.uint64(17)


def _rotl_arr(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class RngLanes:
    """Many independent streams advanced in lock-step; lane i == make_rng(seed, stream_ids[i])."""

    def __init__(self, seed: int, stream_ids: Sequence[int]):
        self.seed = int(seed)
        self.stream_ids = [int(s) for s in stream_ids]
        words = [seed_state(self.seed, sid) for sid in self.stream_ids]
        self._s = np.array(words, dtype=np.uint64).T.copy() if words else np.zeros((4, 0), dtype=np.uint64)

    def __len__(self) -> int:
        return self._s.shape[1]

    def next_u64(self) -> np.ndarray:
        s = self._s
        result = _rotl_arr(s[1] * _U5, 7) * _U9
        t = s[1] << _U17
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl_arr(s[3], 45)
        return result

    def uniform(self) -> np.ndarray:
        return ((self.next_u64() >> _U11).astype(np.float64) + 1.0) * (1.0 / 9007199254740992.0)

    def normal(self) -> np.ndarray:
        u1 = self.uniform()
        u2 = self.uniform()
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def make_lanes(seed: int, stream_ids: Iterable[int]) -> RngLanes:
    return RngLanes(seed, list(stream_ids))


def sample_normal(rng: RngStream, mean: float, sd: float) -> float:
    """One draw from N(mean, sd^2)."""
    if not (sd > 0) or not math.isfinite(sd):
        raise InvalidParameterError(f"sd must be positive and finite, got {sd}")
    return mean + sd * rng.normal()


# ============================================================================
# Calibrations
# ============================================================================

class ConditionGaussian(BaseModel):
    """Axis-aligned Gaussian for one condition."""
    model_config = ConfigDict(frozen=True)

    condition: Condition
    mean: List[float]
    sd: List[float]

    @field_validator("sd")
    @classmethod
    def _positive_sd(cls, v: List[float]) -> List[float]:
        if any(not (s > 0) for s in v):
            raise ValueError("all sd components must be > 0")
        return v

    @model_validator(mode="after")
    def _same_dim(self) -> "ConditionGaussian":
        if len(self.mean) != len(self.sd) or len(self.mean) not in (1, 2):
            raise ValueError("mean and sd must share dimension 1 or 2")
        return self


class Calibration(BaseModel):
    """Per-condition generating parameters."""
    model_config = ConfigDict(frozen=True)

    name: str
    dim: int = Field(..., ge=1, le=2)
    per_condition: List[ConditionGaussian]

    @model_validator(mode="after")
    def _one_per_condition(self) -> "Calibration":
        codes = sorted(g.condition.code.value for g in self.per_condition)
        if codes != [c.code.value for c in CONDITIONS]:
            raise ValueError(f"calibration {self.name!r} needs exactly one entry per condition, got {codes}")
        if any(len(g.mean) != self.dim for g in self.per_condition):
            raise ValueError(f"calibration {self.name!r} mixes dimensions")
        return self

    def gaussian(self, condition: Condition) -> ConditionGaussian:
        for g in self.per_condition:
            if g.condition.code == condition.code:
                return g
        raise KeyError(condition.code)


def _cal(name: str, params: dict) -> Calibration:
    per = [
        ConditionGaussian(condition=c, mean=list(params[c.code][0]), sd=list(params[c.code][1]))
        for c in CONDITIONS
    ]
    return Calibration(name=name, dim=len(per[0].mean), per_condition=per)


# Performance means/sds by condition from the human-subjects experiment.
TABLE5_1D = _cal(
    "table5_1d",
    {
        ConditionCode.C1: ((-0.72,), (11.27,)),
        ConditionCode.C2: ((5.13,), (5.61,)),
        ConditionCode.C3: ((7.39,), (0.81,)),
        ConditionCode.C4: ((8.19,), (2.39,)),
    },
)

# Axis 0 carries the facet signal, axis 1 the performance signal. Unit sds;
# C3/C4 sit 3.806 apart, every other pair is at least 10 apart.
C3_C4_SEPARATION = 3.806
PAPER_REGIME_2D = _cal(
    "paper_regime_2d",
    {
        ConditionCode.C1: ((12.0, 0.0), (1.0, 1.0)),
        ConditionCode.C2: ((12.0, 10.0), (1.0, 1.0)),
        ConditionCode.C3: ((0.0, 8.0), (1.0, 1.0)),
        ConditionCode.C4: ((0.0, 8.0 + C3_C4_SEPARATION), (1.0, 1.0)),
    },
)


def builtin_calibrations() -> List[Calibration]:
    return [TABLE5_1D, PAPER_REGIME_2D]


def get_calibration(name: str) -> Calibration:
    for cal in builtin_calibrations():
        if cal.name == name:
            return cal
    raise InvalidParameterError(
        f"unknown calibration {name!r}; available: {[c.name for c in builtin_calibrations()]}"
    )


# ============================================================================
# Dataset synthesis
# ============================================================================

class SyntheticDataset(BaseModel):
    """Labeled feature rows drawn from a calibration."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    features: np.ndarray
    labels: List[Condition]
    seed: int
    calibration_name: str

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def label_strings(self) -> List[str]:
        return [c.label for c in self.labels]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.features, columns=[f"x{i}" for i in range(self.dim)])
        df["label"] = self.label_strings()
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame, seed: int, calibration_name: str) -> "SyntheticDataset":
        cols = sorted(c for c in df.columns if c.startswith("x"))
        return cls(
            features=df[cols].to_numpy(dtype=np.float64),
            labels=[condition_from_label(str(v)) for v in df["label"]],
            seed=seed,
            calibration_name=calibration_name,
        )


def generate_dataset(cal: Calibration, n_per_condition: int, seed: int) -> SyntheticDataset:
    """Draw n_per_condition rows per condition, in C1..C4 order, one stream per condition."""
    if n_per_condition < 1:
        raise InvalidParameterError(f"n_per_condition must be >= 1, got {n_per_condition}")

    blocks = []
    labels: List[Condition] = []
    for cond in CONDITIONS:
        g = cal.gaussian(cond)
        rng = make_rng(seed, STREAM_SYNTH + cond.index)
        block = np.empty((n_per_condition, cal.dim), dtype=np.float64)
        for i in range(n_per_condition):
            for axis in range(cal.dim):
                block[i, axis] = sample_normal(rng, g.mean[axis], g.sd[axis])
        blocks.append(block)
        labels.extend([cond] * n_per_condition)

    logger.debug("generated %d rows from %s (seed=%d)", n_per_condition * 4, cal.name, seed)
    return SyntheticDataset(
        features=np.vstack(blocks),
        labels=labels,
        seed=seed,
        calibration_name=cal.name,
    )
