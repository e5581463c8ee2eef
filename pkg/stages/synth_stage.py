"""
Synth stage - draws the labeled per-condition dataset.
"""

import logging
from typing import Tuple

import pandas as pd

from acflab.stats import describe
from acflab.synthlab import SyntheticDataset, generate_dataset, get_calibration
from config import RunConfig
from data_manager import ensure_output_dir, write_csv, write_json
from stages.common import finish, run_node
from state import LabState, StageResult

logger = logging.getLogger(__name__)

DATASET_FILE = "dataset.csv"
CALIBRATION_FILE = "calibration.json"


def describe_dataset(dataset: SyntheticDataset) -> pd.DataFrame:
    """Per-condition n / mean / sd for every feature axis."""
    rows = []
    for axis in range(dataset.dim):
        points = list(zip(dataset.labels, dataset.features[:, axis]))
        for g in describe(points, group_by=lambda p: p[0].label, value=lambda p: p[1]):
            rows.append({"axis": f"x{axis}", "condition": g.group_key, "n": g.n, "mean": g.mean, "sd": g.sd})
    return pd.DataFrame(rows, columns=["axis", "condition", "n", "mean", "sd"])


def synthesize(config: RunConfig) -> Tuple[StageResult, SyntheticDataset]:
    out = ensure_output_dir(config.output_dir)
    cal = get_calibration(config.calibration)
    dataset = generate_dataset(cal, config.n_per_condition, config.seed)

    write_csv(out / DATASET_FILE, dataset.to_frame(), comment=f"seed={config.seed} calibration={cal.name}")
    write_json(out / CALIBRATION_FILE, cal)

    table = describe_dataset(dataset)
    logger.info("synthesized %d rows from %s", dataset.n, cal.name)
    result = finish(
        config,
        "synth",
        [DATASET_FILE, CALIBRATION_FILE],
        {
            "calibration": cal.name,
            "rows": dataset.n,
            "dim": dataset.dim,
            "describe": table.to_dict(orient="records"),
        },
    )
    return result, dataset


def cmd_synth(config: RunConfig) -> StageResult:
    return synthesize(config)[0]


def synth_node(state: LabState) -> LabState:
    def run(s: LabState) -> StageResult:
        result, dataset = synthesize(s["config"])
        s["dataset"] = dataset
        return result

    return run_node(state, "synth", "synthesizing", "synthesized", run)
