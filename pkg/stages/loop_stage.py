"""
Loop stage - runs the adaptive recommender against a calibration environment.
"""

import logging

from acflab.acfloop import Observation, environment_from_calibration, fit_predictor, run_loop
from acflab.synthlab import get_calibration
from config import RunConfig
from data_manager import ensure_output_dir, write_csv, write_json
from stages.common import finish, run_node
from state import LabState, StageResult

logger = logging.getLogger(__name__)

TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"


def loop(config: RunConfig) -> StageResult:
    out = ensure_output_dir(config.output_dir)
    env = environment_from_calibration(get_calibration(config.loop.environment))
    trace = run_loop(env, config.loop.policy, config.loop.T, config.seed, config.loop.exploration_c)

    history = [Observation(t=s.step, facet=s.facet, rep=s.choice, performance=s.reward) for s in trace.steps]
    write_csv(out / TRACE_FILE, trace.to_frame())
    write_json(
        out / SUMMARY_FILE,
        {
            "environment": trace.environment,
            "policy": trace.policy.value,
            "exploration_c": trace.exploration_c,
            "T": trace.T,
            "seed": trace.seed,
            "total_regret": trace.total_regret,
            "final_quarter": trace.final_quarter,
            "modal_choices": trace.modal_choices(),
            "arms": trace.arms,
            "predictor": fit_predictor(history),
        },
    )
    logger.info("loop T=%d regret %.3f modal %s", trace.T, trace.total_regret, trace.modal_choices())
    return finish(
        config,
        "loop",
        [TRACE_FILE, SUMMARY_FILE],
        {"total_regret": trace.total_regret, "modal_choices": trace.modal_choices()},
    )


def cmd_loop(config: RunConfig) -> StageResult:
    return loop(config)


def loop_node(state: LabState) -> LabState:
    return run_node(state, "loop", "looping", "looped", lambda s: loop(s["config"]))
