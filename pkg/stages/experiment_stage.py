"""
Experiment stage - calibrates condition agents to the performance targets,
simulates the between-subjects experiment and runs the statistical battery.
"""

import logging
from typing import Dict, List

import pandas as pd

from acflab.domain import ConditionCode, records_to_frame
from acflab.errors import InvalidDesignError, ParseError
from acflab.manipulation import builtin_manipulation_checks, manipulation_frame, run_manipulation_check
from acflab.marketsim import AgentParams, CalibratedAgent, calibrate_agents, run_experiment
from acflab.stats import hypothesis_battery, interaction_plot_data, performance_summaries
from acflab.synthlab import get_calibration
from config import RunConfig
from data_manager import ensure_output_dir, read_json, write_csv, write_json
from stages.common import finish, run_node
from state import LabState, StageResult

logger = logging.getLogger(__name__)

AGENTS_FILE = "agents.json"
RECORDS_FILE = "records.csv"
DESCRIBE_FILE = "describe.csv"
ANOVA_FILE = "anova.csv"
ONE_WAY_FILES = {
    "high_equivocality": "anova_high_equivocality.csv",
    "probabilistic": "anova_probabilistic.csv",
    "deterministic": "anova_deterministic.csv",
}
INTERACTION_FILE = "interaction.csv"
MANIPULATION_FILE = "manipulation.csv"
EXPERIMENT_FILE = "experiment.json"


def performance_targets(name: str) -> Dict[ConditionCode, tuple]:
    """Per-condition (mean, sd) of the performance axis of a calibration."""
    cal = get_calibration(name)
    axis = cal.dim - 1
    return {g.condition.code: (g.mean[axis], g.sd[axis]) for g in cal.per_condition}


def _provenance(config: RunConfig) -> dict:
    return {
        "seed": config.seed,
        "targets": config.agents.targets,
        "scenario": config.scenario.model_dump(mode="json"),
        "budget": config.agents.budget,
        "n_agents": config.agents.n_agents,
        "max_position": config.agents.max_position,
    }


def load_or_calibrate(config: RunConfig) -> Dict[ConditionCode, CalibratedAgent]:
    """Reuse agents.json when it was produced under the same settings, else calibrate."""
    path = config.out_path / AGENTS_FILE
    if path.is_file():
        saved = read_json(path)
        if saved.get("provenance") == _provenance(config):
            try:
                return {
                    ConditionCode(code): CalibratedAgent.model_validate(agent)
                    for code, agent in saved["agents"].items()
                }
            except (KeyError, ValueError) as e:
                raise ParseError(f"{AGENTS_FILE}: {e}") from None
        logger.info("%s was produced under other settings; recalibrating", AGENTS_FILE)

    agents = calibrate_agents(
        performance_targets(config.agents.targets),
        config.scenario,
        budget=config.agents.budget,
        seed=config.seed,
        n_agents=config.agents.n_agents,
        max_position=config.agents.max_position,
    )
    write_json(path, {"provenance": _provenance(config), "agents": {c.value: a for c, a in agents.items()}})
    return agents


def _describe_frame(blocks) -> pd.DataFrame:
    rows = [
        {"block": block, "group": g.group_key, "n": g.n, "mean": g.mean, "sd": g.sd}
        for block, groups in blocks.items()
        for g in groups
    ]
    return pd.DataFrame(rows, columns=["block", "group", "n", "mean", "sd"])


def experiment(config: RunConfig) -> StageResult:
    out = ensure_output_dir(config.output_dir)
    agents = load_or_calibrate(config)
    params: Dict[ConditionCode, AgentParams] = {code: a.params for code, a in agents.items()}

    records = run_experiment(config.cells, tuple(config.gender_counts), config.scenario, params, config.seed)
    write_csv(out / RECORDS_FILE, records_to_frame(records))
    blocks = performance_summaries(records)
    write_csv(out / DESCRIBE_FILE, _describe_frame(blocks))

    interaction = interaction_plot_data(records)
    write_csv(
        out / INTERACTION_FILE,
        pd.DataFrame(
            [{"facet": c.facet.value, "rep": c.rep.value, "condition": c.label, "n": c.n, "mean": c.mean}
             for c in interaction.cells],
            columns=["facet", "rep", "condition", "n", "mean"],
        ),
    )

    manipulation = [run_manipulation_check(s, config.seed) for s in builtin_manipulation_checks()]
    write_csv(out / MANIPULATION_FILE, manipulation_frame(manipulation))

    artifacts: List[str] = [AGENTS_FILE, RECORDS_FILE, DESCRIBE_FILE, INTERACTION_FILE, MANIPULATION_FILE]
    summary = {
        "subjects": len(records),
        "cells": list(config.cells),
        "gender_counts": list(config.gender_counts),
        "performance_targets": config.agents.targets,
        "agents": {c.value: a for c, a in agents.items()},
        "describe": blocks,
        "interaction": interaction,
        "manipulation": manipulation,
        "anova": None,
        "one_way": None,
        "hypotheses": None,
        "anova_error": None,
    }
    try:
        factorial, one_way, verdicts = hypothesis_battery(records)
    except InvalidDesignError as e:
        logger.warning("ANOVA skipped: %s", e)
        summary["anova_error"] = str(e)
    else:
        write_csv(out / ANOVA_FILE, factorial.to_frame())
        artifacts.append(ANOVA_FILE)
        for key, table in one_way.items():
            write_csv(out / ONE_WAY_FILES[key], table.to_frame())
            artifacts.append(ONE_WAY_FILES[key])
        summary.update({"anova": factorial, "one_way": one_way, "hypotheses": verdicts})

    write_json(out / EXPERIMENT_FILE, summary)
    artifacts.append(EXPERIMENT_FILE)

    headline = {
        "subjects": len(records),
        "residual_df": summary["anova"].residual.df if summary["anova"] is not None else None,
        "anova_error": summary["anova_error"],
    }
    return finish(config, "experiment", artifacts, headline)


def cmd_experiment(config: RunConfig) -> StageResult:
    return experiment(config)


def experiment_node(state: LabState) -> LabState:
    return run_node(state, "experiment", "experimenting", "experimented", lambda s: experiment(s["config"]))
