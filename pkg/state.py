from typing import Any, Dict, List, Optional, TypedDict

from pydantic import BaseModel

from config import RunConfig


class StageResult(BaseModel):
    """What one command wrote and the headline numbers it printed."""
    command: str
    artifacts: List[str]
    summary: Dict[str, Any] = {}


# ============================================================================
# LangGraph State Schema (TypedDict)
# ============================================================================

class LabState(TypedDict):
    """
    State flowing through the pipeline graph. Each stage node reads the
    config, writes its artifacts, and records its result here.
    """
    config: RunConfig

    # Stage outputs
    dataset: Optional[Any]
    results: Dict[str, StageResult]

    # Tracking & metadata
    execution_log: List[str]
    status: str  # created, synthesizing, clustering, experimenting, looping, reporting, completed, failed
    error_state: Optional[str]
    exit_code: int


# ============================================================================
# Helper Functions
# ============================================================================

def create_initial_state(config: RunConfig) -> LabState:
    """Create initial state for a pipeline run."""
    return {
        "config": config,
        "dataset": None,
        "results": {},
        "execution_log": [],
        "status": "created",
        "error_state": None,
        "exit_code": 0,
    }


def state_to_dict(state: LabState) -> dict:
    """Convert state to a JSON-serializable dict (the dataset is summarized, not dumped)."""
    result = {}
    for key, value in state.items():
        if key == "dataset":
            result[key] = None if value is None else {"n": value.n, "dim": value.dim}
        elif isinstance(value, BaseModel):
            result[key] = value.model_dump(mode="json")
        elif isinstance(value, dict):
            result[key] = {
                k: v.model_dump(mode="json") if isinstance(v, BaseModel) else v
                for k, v in value.items()
            }
        else:
            result[key] = value
    return result


def log_state_transition(state: LabState, new_status: str, message: str) -> LabState:
    """Log state transition for debugging."""
    state["execution_log"].append(f"[{new_status}] {message}")
    state["status"] = new_status
    return state
