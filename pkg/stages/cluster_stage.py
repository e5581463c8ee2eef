"""
Cluster stage - BIC model selection on the dataset, then alignment of the
recovered clusters with the true conditions.
"""

import logging
from collections import Counter
from typing import Optional

import pandas as pd

from acflab.errors import ParseError
from acflab.evalmetrics import confusion_frame, evaluate, metrics_frame
from acflab.mixture import map_labels, select
from acflab.synthlab import SyntheticDataset
from config import ACF_WORKERS, RunConfig
from data_manager import (
    ensure_output_dir,
    parse_comment_fields,
    read_comment,
    read_csv,
    write_csv,
    write_json,
)
from stages.common import finish, run_node
from stages.synth_stage import DATASET_FILE
from state import LabState, StageResult

logger = logging.getLogger(__name__)

BIC_FILE = "bic.csv"
CONFUSION_FILE = "confusion.csv"
METRICS_CSV = "metrics.csv"
METRICS_FILE = "metrics.json"


def load_dataset(config: RunConfig) -> SyntheticDataset:
    path = config.out_path / DATASET_FILE
    header = read_comment(path) if path.is_file() else None
    fields = parse_comment_fields(header)
    raw = read_csv(path)
    feature_cols = [c for c in raw.columns if c.startswith("x")]
    if not feature_cols or "label" not in raw.columns:
        raise ParseError(f"{DATASET_FILE} needs x0[,x1] and label columns", line=1 + (header is not None))
    df = read_csv(path, numeric=tuple(feature_cols))
    try:
        seed = int(fields.get("seed", config.seed if config.seed is not None else 0))
    except ValueError:
        raise ParseError(f"{DATASET_FILE}: bad seed in header {header!r}", line=1) from None
    try:
        return SyntheticDataset.from_frame(df, seed=seed, calibration_name=fields.get("calibration", "unknown"))
    except ValueError as e:
        raise ParseError(f"{DATASET_FILE}: {e}") from None


def cluster(config: RunConfig, dataset: Optional[SyntheticDataset] = None) -> StageResult:
    out = ensure_output_dir(config.output_dir)
    if dataset is None:
        dataset = load_dataset(config)

    G_range = [g for g in config.mixture.G_range if g < dataset.n]
    if len(G_range) < len(config.mixture.G_range):
        logger.warning("G_range clipped to %s for n=%d", G_range, dataset.n)

    surface, fit = select(
        dataset.features,
        G_range=G_range,
        models=config.mixture.models,
        seed=config.seed,
        tol=config.mixture.tol,
        max_iter=config.mixture.max_iter,
        workers=ACF_WORKERS,
    )
    labels = map_labels(fit, dataset.features)
    report = evaluate(labels, dataset.labels)
    sizes = Counter(int(l) for l in labels)

    bic_df = pd.DataFrame(
        [
            {"G": e.G, "model": e.model.value, "bic": e.bic, "loglik": e.loglik, "converged": e.converged}
            for e in surface.entries
        ],
        columns=["G", "model", "bic", "loglik", "converged"],
    )
    write_csv(out / BIC_FILE, bic_df)
    write_csv(out / CONFUSION_FILE, confusion_frame(report))
    write_csv(out / METRICS_CSV, metrics_frame(report))
    write_json(
        out / METRICS_FILE,
        {
            "calibration": dataset.calibration_name,
            "seed": dataset.seed,
            "n": dataset.n,
            "best_G": surface.best_G,
            "best_model": surface.best_model.value,
            "cluster_sizes": {str(k): sizes[k] for k in sorted(sizes)},
            "fit": fit.model_dump(mode="json", exclude={"loglik_trace"}),
            "accuracy": report.accuracy,
            "report": report,
        },
    )
    logger.info(
        "selected G=%d %s, accuracy %s%%", surface.best_G, surface.best_model.value, report.display["accuracy"]
    )
    return finish(
        config,
        "cluster",
        [BIC_FILE, CONFUSION_FILE, METRICS_CSV, METRICS_FILE],
        {
            "best_G": surface.best_G,
            "best_model": surface.best_model.value,
            "accuracy": report.display["accuracy"],
            "meets_target": report.meets_target,
        },
    )


def cmd_cluster(config: RunConfig) -> StageResult:
    return cluster(config)


def cluster_node(state: LabState) -> LabState:
    return run_node(
        state, "cluster", "clustering", "clustered", lambda s: cluster(s["config"], s.get("dataset"))
    )
