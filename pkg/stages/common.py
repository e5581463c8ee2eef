"""
Plumbing shared by the stage commands: artifact bookkeeping and the
error-capturing wrapper every graph node goes through.
"""

import logging
from typing import Callable, List

from acflab.errors import AcfLabError
from config import RunConfig
from data_manager import ensure_output_dir, register_artifacts, write_json
from state import LabState, StageResult, log_state_transition

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"


def finish(config: RunConfig, command: str, artifacts: List[str], summary: dict) -> StageResult:
    """Write the resolved config next to the artifacts and update the catalog."""
    out = ensure_output_dir(config.output_dir)
    write_json(out / CONFIG_FILE, config)
    files = sorted(set(artifacts) | {CONFIG_FILE})
    register_artifacts(out, command, files)
    return StageResult(command=command, artifacts=files, summary=summary)


def run_node(
    state: LabState,
    command: str,
    running: str,
    done: str,
    fn: Callable[[LabState], StageResult],
) -> LabState:
    """Run one stage inside the graph; failures are recorded on the state, never raised."""
    log_state_transition(state, running, f"Running {command}")
    try:
        result = fn(state)
    except AcfLabError as e:
        logger.error("%s failed: %s", command, e)
        state["error_state"] = f"{command}: {e}"
        state["exit_code"] = e.exit_code
        return log_state_transition(state, "failed", f"{command} failed: {e}")

    state["results"][command] = result
    return log_state_transition(state, done, f"{command} wrote {len(result.artifacts)} files")
