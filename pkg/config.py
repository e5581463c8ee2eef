import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from acflab.acfloop import DEFAULT_EXPLORATION_C, Policy
from acflab.errors import ConfigError, InvalidParameterError
from acflab.marketsim import DEFAULT_CELLS, DEFAULT_GENDERS, MarketScenario
from acflab.mixture import DEFAULT_MAX_ITER, DEFAULT_TOL, VarianceModel
from acflab.synthlab import get_calibration

load_dotenv()

# ============================================================================
# Logging Configuration
# ============================================================================
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("LOG_FILE")  # unset: console only
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
VERBOSE_LOGGING = os.getenv("VERBOSE_LOGGING", "false").lower() == "true"

# ============================================================================
# Execution Configuration
# ============================================================================
ACF_WORKERS = int(os.getenv("ACF_WORKERS", "1"))  # threads for model selection / loop batches
ACF_OUTPUT_DIR = os.getenv("ACF_OUTPUT_DIR", "runs/default")

# ============================================================================
# Run Defaults
# ============================================================================
DEFAULT_DATASET_CALIBRATION = "paper_regime_2d"
DEFAULT_PERFORMANCE_CALIBRATION = "table5_1d"
DEFAULT_N_PER_CONDITION = 1000


# ============================================================================
# Run Document
# ============================================================================

class MixtureConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    G_range: List[int] = Field(default_factory=lambda: list(range(1, 10)))
    models: List[VarianceModel] = Field(default_factory=lambda: [VarianceModel.E, VarianceModel.V])
    tol: float = Field(DEFAULT_TOL, gt=0)
    max_iter: int = Field(DEFAULT_MAX_ITER, ge=1)


class LoopConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    policy: Policy = Policy.OPTIMISM
    T: int = Field(4000, ge=8)
    exploration_c: float = Field(DEFAULT_EXPLORATION_C, ge=0)
    environment: str = DEFAULT_PERFORMANCE_CALIBRATION


class CalibrationSearchConfig(BaseModel):
    """Agent moment matching against the per-condition performance targets."""
    model_config = ConfigDict(extra="forbid")

    targets: str = DEFAULT_PERFORMANCE_CALIBRATION
    budget: int = Field(40, ge=1)
    n_agents: int = Field(2000, ge=2)
    max_position: float = Field(10.0, gt=0)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: Optional[int] = None
    calibration: str = DEFAULT_DATASET_CALIBRATION
    n_per_condition: int = Field(DEFAULT_N_PER_CONDITION, ge=1)
    cells: List[int] = Field(default_factory=lambda: list(DEFAULT_CELLS))
    gender_counts: List[int] = Field(default_factory=lambda: list(DEFAULT_GENDERS))
    scenario: MarketScenario = Field(default_factory=MarketScenario)
    agents: CalibrationSearchConfig = Field(default_factory=CalibrationSearchConfig)
    mixture: MixtureConfig = Field(default_factory=MixtureConfig)
    loop: LoopConfig = Field(default_factory=LoopConfig)
    output_dir: str = ACF_OUTPUT_DIR

    @property
    def out_path(self) -> Path:
        return Path(self.output_dir)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``a.b=value`` assignments to a raw config dict (values parsed as JSON when possible)."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"--set has an empty key: {item!r}")
        node = raw
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"--set {key}: {part!r} is not a section")
            node = child
        node[parts[-1]] = _parse_value(value)
    return raw


def validate_config(config: RunConfig, require_seed: bool = True) -> RunConfig:
    """Cross-field checks the schema cannot express. Raises ConfigError."""
    if require_seed and config.seed is None:
        raise ConfigError("an explicit seed is required (--seed N or \"seed\" in the config)")

    for name in (config.calibration, config.agents.targets, config.loop.environment):
        try:
            get_calibration(name)
        except InvalidParameterError as e:
            raise ConfigError(str(e)) from None

    if len(config.cells) != 4 or any(c < 1 for c in config.cells):
        raise ConfigError(f"cells must be four positive counts, got {config.cells}")
    if len(config.gender_counts) != 2 or any(g < 0 for g in config.gender_counts):
        raise ConfigError(f"gender_counts must be two non-negative counts, got {config.gender_counts}")
    if sum(config.cells) != sum(config.gender_counts):
        raise ConfigError(
            f"cells total {sum(config.cells)} does not match gender total {sum(config.gender_counts)}"
        )
    if not config.mixture.G_range or min(config.mixture.G_range) < 1:
        raise ConfigError(f"mixture.G_range must hold positive counts, got {config.mixture.G_range}")
    if not config.mixture.models:
        raise ConfigError("mixture.models must not be empty")
    return config


def load_run_config(
    path: Optional[str] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
    require_seed: bool = True,
) -> RunConfig:
    """Read the JSON run document, apply CLI overrides, validate."""
    raw: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} line {e.lineno}: {e.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")

    apply_overrides(raw, overrides)
    if seed is not None:
        raw["seed"] = seed
    if output_dir is not None:
        raw["output_dir"] = output_dir

    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from None
    return validate_config(config, require_seed=require_seed)
