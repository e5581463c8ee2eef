"""
Report stage - assembles report.md from the JSON outputs of the other stages.

The report is a pure function of those files, so regenerating it over
unchanged inputs gives identical bytes.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from acflab.domain import CONDITIONS
from acflab.stats import significance_code
from config import RunConfig
from data_manager import ensure_output_dir, read_json, register_artifacts, require_inputs, write_text
from stages.cluster_stage import METRICS_FILE
from stages.experiment_stage import EXPERIMENT_FILE
from stages.loop_stage import SUMMARY_FILE
from stages.synth_stage import CALIBRATION_FILE
from stages.common import run_node
from state import LabState, StageResult

logger = logging.getLogger(__name__)

REPORT_FILE = "report.md"
REQUIRED_INPUTS = [CALIBRATION_FILE, METRICS_FILE, EXPERIMENT_FILE, SUMMARY_FILE]


def _num(value: Optional[float], digits: int = 2) -> str:
    if value is None:
        return "NA"
    return f"{value:.{digits}f}"


def _p(value: Optional[float]) -> str:
    if value is None:
        return ""
    return "< 0.001" if value < 0.001 else f"{value:.4f}"


def _table(headers: Sequence[str], rows: List[Sequence[Any]]) -> List[str]:
    lines = ["| " + " | ".join(headers) + " |", "|" + "|".join("---" for _ in headers) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(str(c) for c in row) + " |")
    return lines


def _anova_block(table: Dict[str, Any]) -> List[str]:
    rows = []
    for r in table["rows"] + [table["residual"]]:
        rows.append(
            [
                r["term"], r["df"], _num(r["sum_sq"]), _num(r["mean_sq"]), _num(r.get("F")),
                _p(r.get("p")), significance_code(r["p"]) if r.get("p") is not None else "",
            ]
        )
    return [f"**{table['title']}**", ""] + _table(
        ["Term", "Df", "Sum Sq", "Mean Sq", "F value", "Pr(>F)", ""], rows
    ) + [""]


def _manipulation_section(experiment: Dict[str, Any]) -> List[str]:
    lines = ["## Manipulation checks", "", "_Provenance: reported check summaries, groups back-solved from t and df._", ""]
    rows = []
    for m in experiment["manipulation"]:
        s, rep = m["summary"], m["reproduced"]
        rows.append(
            [
                s["name"], s["representation"], _num(s["low_mean"]), _num(s["high_mean"]),
                _num(m["low_sd"], 3), _num(m["high_sd"], 3), _num(rep["statistic"]), _num(rep["df"]),
                _p(rep["p"]), m["signif"],
            ]
        )
    lines += _table(
        ["Check", "Representation", "Low mean", "High mean", "Low sd", "High sd", "t", "df", "p", ""], rows
    )
    return lines + [""]


def _conditions_section() -> List[str]:
    rows = [[c.code.value, c.facet.value, c.rep.value, c.label] for c in CONDITIONS]
    return ["## Experimental conditions", ""] + _table(["Code", "Facet", "Representation", "Label"], rows) + [""]


def _performance_section(experiment: Dict[str, Any]) -> List[str]:
    lines = [
        "## Performance",
        "",
        f"_Provenance: {experiment['subjects']} simulated subjects, agents matched to "
        f"`{experiment['performance_targets']}`._",
        "",
    ]
    rows = []
    for block in ("facet", "representation", "condition", "gender", "gender_by_facet"):
        for g in experiment["describe"].get(block, []):
            rows.append([block, g["group_key"], g["n"], _num(g["mean"]), _num(g["sd"])])
    lines += _table(["Block", "Group", "n", "Mean", "SD"], rows) + [""]

    rows = []
    for code in sorted(experiment["agents"]):
        a = experiment["agents"][code]
        rows.append(
            [code, _num(a["target_mean"]), _num(a["target_sd"]), _num(a["achieved_mean"]), _num(a["achieved_sd"])]
        )
    lines += ["**Agent calibration**", ""]
    lines += _table(["Condition", "Target mean", "Target sd", "Achieved mean", "Achieved sd"], rows)
    return lines + [""]


def _anova_section(experiment: Dict[str, Any]) -> List[str]:
    lines = ["## Analysis of variance", ""]
    if experiment.get("anova") is None:
        return lines + [f"ANOVA not available: {experiment.get('anova_error')}", ""]
    lines += _anova_block(experiment["anova"])
    for key in ("high_equivocality", "probabilistic", "deterministic"):
        lines += _anova_block(experiment["one_way"][key])
    rows = [
        [
            h["name"], h["description"], h["source"], _p(h["p"]), _num(h["effect"]),
            "supported" if h["supported"] else "not supported",
        ]
        for h in experiment["hypotheses"]
    ]
    lines += ["**Hypotheses**", ""] + _table(["Hypothesis", "Statement", "Source", "p", "Effect", "Verdict"], rows)
    return lines + [""]


def _interaction_section(experiment: Dict[str, Any]) -> List[str]:
    inter = experiment["interaction"]
    rows = [[c["label"], c["facet"], c["rep"], c["n"], _num(c["mean"])] for c in inter["cells"]]
    lines = ["## Interaction", ""] + _table(["Condition", "Facet", "Representation", "n", "Mean"], rows)
    lines += [
        "",
        f"Interaction contrast (C4 - C1) - (C3 - C2): {_num(inter['contrast'])} "
        f"(indicator {inter['indicator']:+d}, lines {'cross' if inter['crosses'] else 'do not cross'})",
        "",
    ]
    return lines


def _cluster_section(calibration: Dict[str, Any], metrics: Dict[str, Any]) -> List[str]:
    report = metrics["report"]
    lines = [
        "## Clustering",
        "",
        f"_Provenance: calibration `{calibration['name']}` ({calibration['dim']}-D), seed {metrics['seed']}, "
        f"n = {metrics['n']}; BIC selected G = {metrics['best_G']}, model {metrics['best_model']}._",
        "",
    ]
    sizes = ", ".join(f"{k}: {v}" for k, v in metrics["cluster_sizes"].items())
    lines += [f"Cluster sizes: {sizes}", ""]

    headers = ["Actual"] + report["classes"]
    if any(report["unmatched"]):
        headers.append("Unmatched")
    rows = []
    for i, label in enumerate(report["classes"]):
        row = [label] + report["matrix"][i]
        if any(report["unmatched"]):
            row.append(report["unmatched"][i])
        rows.append(row)
    lines += ["**Confusion matrix**", ""] + _table(headers, rows) + [""]

    d = report["display"]
    lines += ["**Classification metrics**", ""]
    lines += _table(
        ["Metric", "Value"],
        [
            ["Accuracy", f"{d['accuracy']}%"],
            ["Precision", f"{d['precision']}%"],
            ["Recall", f"{d['recall']}%"],
            ["F1* (Weighted)", f"{d['f1_weighted']}%"],
        ],
    )
    lines += [""]
    rows = [[c["label"], f"{c['precision_pct']}%", f"{c['recall_pct']}%", f"{c['f1_pct']}%"] for c in report["per_class"]]
    lines += _table(["Class", "Precision", "Recall", "F1"], rows)
    target = "meets" if report["meets_target"] else "misses"
    lines += ["", f"Accuracy {target} the 95% target.", ""]
    return lines


def _loop_section(summary: Dict[str, Any]) -> List[str]:
    lines = [
        "## Adaptive loop",
        "",
        f"_Provenance: environment `{summary['environment']}`, policy {summary['policy']} "
        f"(c = {_num(summary['exploration_c'])}), T = {summary['T']}, seed {summary['seed']}._",
        "",
        f"Total regret: {_num(summary['total_regret'], 3)}",
        "",
    ]
    rows = []
    for f in summary["final_quarter"]:
        modal = summary["modal_choices"].get(f["facet"]) or "NA"
        rows.append([f["facet"], f["n"], _num(f["deterministic"], 3), _num(f["probabilistic"], 3), modal])
    lines += ["**Final-quarter choice frequencies**", ""]
    lines += _table(["Facet", "Steps", "Deterministic", "Probabilistic", "Modal"], rows) + [""]
    rows = [[g["group_key"], g["n"], _num(g["mean"]), _num(g["sd"])] for g in summary["predictor"]]
    lines += ["**Predictor**", ""] + _table(["Condition", "n", "Mean", "SD"], rows)
    return lines + [""]


def build_report(out_dir: Path) -> str:
    require_inputs(out_dir, REQUIRED_INPUTS)
    calibration = read_json(out_dir / CALIBRATION_FILE)
    metrics = read_json(out_dir / METRICS_FILE)
    experiment = read_json(out_dir / EXPERIMENT_FILE)
    summary = read_json(out_dir / SUMMARY_FILE)

    lines = ["# Adaptive cognitive fit report", ""]
    lines += _manipulation_section(experiment)
    lines += _conditions_section()
    lines += _performance_section(experiment)
    lines += _anova_section(experiment)
    lines += _interaction_section(experiment)
    lines += _cluster_section(calibration, metrics)
    lines += _loop_section(summary)
    return "\n".join(lines).rstrip("\n") + "\n"


def report(output_dir) -> StageResult:
    out = Path(output_dir)
    text = build_report(out)
    ensure_output_dir(out)
    write_text(out / REPORT_FILE, text)
    register_artifacts(out, "report", [REPORT_FILE])
    logger.info("report written to %s", out / REPORT_FILE)
    return StageResult(command="report", artifacts=[REPORT_FILE], summary={"path": str(out / REPORT_FILE)})


def cmd_report(config: RunConfig) -> StageResult:
    return report(config.output_dir)


def report_node(state: LabState) -> LabState:
    return run_node(state, "report", "reporting", "completed", lambda s: report(s["config"].output_dir))
