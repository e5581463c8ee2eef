"""
Integration tests for the ACF lab pipeline.
Run with: pytest tests/test_integration.py -v
"""

import json
import re

import pandas as pd
import pytest

from acflab.domain import CONDITIONS
from acflab.errors import ConfigError
from acflab.marketsim import AgentParams, CalibratedAgent
from config import RunConfig, apply_overrides, load_run_config
from data_manager import read_comment, write_json
from graph import STAGE_ORDER, _route_to, create_graph
from main import main
from stages.experiment_stage import AGENTS_FILE, _provenance
from state import create_initial_state, state_to_dict

SMALL = ["--set", "n_per_condition=40", "--set", "mixture.G_range=[1,2,3,4,5]"]


def seed_agents(out_dir, seed):
    """Pre-write agents.json so the experiment stage skips calibration."""
    config = load_run_config(seed=seed, output_dir=str(out_dir))
    agents = {
        c.code.value: CalibratedAgent(
            params=AgentParams(condition=c, perception_bias=-1.5 + 0.25 * c.index, perception_noise_sd=0.4),
            target_mean=0.0,
            target_sd=1.0,
            achieved_mean=0.0,
            achieved_sd=1.0,
            objective=0.0,
            iterations=0,
            n_agents=2000,
        )
        for c in CONDITIONS
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / AGENTS_FILE, {"provenance": _provenance(config), "agents": agents})


class TestConfig:
    """Test the run document and CLI overrides."""

    def test_defaults(self):
        config = load_run_config(seed=1)
        assert config.cells == [22, 22, 19, 22]
        assert config.gender_counts == [40, 45]
        assert config.loop.T == 4000
        assert config.calibration == "paper_regime_2d"

    def test_overrides(self):
        raw = apply_overrides({}, ["loop.T=8000", "loop.policy=greedy_mean", "scenario.volatility=0.05"])
        assert raw == {"loop": {"T": 8000, "policy": "greedy_mean"}, "scenario": {"volatility": 0.05}}
        config = load_run_config(overrides=["loop.T=8000"], seed=3)
        assert config.loop.T == 8000

    def test_config_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 5, "n_per_condition": 10}))
        config = load_run_config(str(path), overrides=["n_per_condition=20"])
        assert (config.seed, config.n_per_condition) == (5, 20)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {},
            {"seed": 1, "overrides": ["calibration=nope"]},
            {"seed": 1, "overrides": ["gender_counts=[40,40]"]},
            {"seed": 1, "overrides": ["unknown_key=1"]},
            {"seed": 1, "overrides": ["loop.T=4"]},
            {"seed": 1, "overrides": ["no_equals_sign"]},
        ],
    )
    def test_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            load_run_config(**kwargs)

    def test_report_needs_no_seed(self):
        assert load_run_config(require_seed=False).seed is None


class TestStateAndGraph:
    """Test state creation and LangGraph compilation."""

    def test_initial_state(self):
        state = create_initial_state(RunConfig(seed=1))
        assert state["status"] == "created"
        assert state["error_state"] is None
        assert state["exit_code"] == 0
        assert state_to_dict(state)["config"]["seed"] == 1

    def test_graph_compiles(self):
        assert create_graph() is not None
        assert STAGE_ORDER == ["synth", "cluster", "experiment", "loop", "report"]

    def test_routing_stops_on_error(self):
        route = _route_to("cluster")
        assert route({"error_state": None}) == "cluster"
        assert route({"error_state": "synth: boom"}) == "end"


class TestCli:
    """Run the subcommands against a temporary output directory."""

    def test_synth_is_byte_reproducible(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["synth", "--seed", "7", "--out", str(out_a), *SMALL]) == 0
        assert main(["synth", "--seed", "7", "--out", str(out_b), *SMALL]) == 0
        assert (out_a / "dataset.csv").read_bytes() == (out_b / "dataset.csv").read_bytes()
        assert read_comment(out_a / "dataset.csv") == "seed=7 calibration=paper_regime_2d"
        catalog = json.loads((out_a / "catalog.json").read_text())
        assert catalog["commands"]["synth"] == ["calibration.json", "config.json", "dataset.csv"]

    def test_single_row_per_condition(self, tmp_path):
        assert main(["synth", "--seed", "1", "--out", str(tmp_path), "--set", "n_per_condition=1"]) == 0
        df = pd.read_csv(tmp_path / "dataset.csv", skiprows=1)
        assert len(df) == 4
        assert df["label"].tolist() == [c.label for c in CONDITIONS]

    def test_missing_seed_is_a_usage_error(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path)]) == 1

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["bogus"])
        assert exc.value.code == 1

    def test_cluster_outputs_ignore_worker_count(self, tmp_path, monkeypatch):
        import stages.cluster_stage as cluster_stage

        out = str(tmp_path)
        assert main(["synth", "--seed", "2", "--out", out, *SMALL]) == 0
        assert main(["cluster", "--seed", "2", "--out", out, *SMALL]) == 0
        serial = {n: (tmp_path / n).read_bytes() for n in ("bic.csv", "confusion.csv", "metrics.json")}
        monkeypatch.setattr(cluster_stage, "ACF_WORKERS", 4)
        assert main(["cluster", "--seed", "2", "--out", out, *SMALL]) == 0
        assert {n: (tmp_path / n).read_bytes() for n in serial} == serial

    def test_report_on_empty_directory(self, tmp_path, capsys):
        assert main(["report", "--out", str(tmp_path)]) == 5
        printed = capsys.readouterr().out
        for name in ("calibration.json", "metrics.json", "experiment.json", "summary.json"):
            assert name in printed

    def test_cluster_without_dataset(self, tmp_path):
        assert main(["cluster", "--seed", "1", "--out", str(tmp_path)]) == 5

    def test_cluster_rejects_bad_numbers(self, tmp_path):
        (tmp_path / "dataset.csv").write_text(
            "# seed=1 calibration=paper_regime_2d\nx0,x1,label\n1.0,2.0,HiEqv-Det\nabc,2.0,HiEqv-Prob\n"
        )
        assert main(["cluster", "--seed", "1", "--out", str(tmp_path)]) == 3

    def test_loop_minimum_horizon(self, tmp_path):
        assert main(["loop", "--seed", "3", "--out", str(tmp_path), "--set", "loop.T=8"]) == 0
        trace = pd.read_csv(tmp_path / "trace.csv")
        assert len(trace) == 8
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["T"] == 8

    def test_stage_by_stage_then_report(self, tmp_path):
        out = str(tmp_path)
        seed_agents(tmp_path, seed=11)
        for command in ("synth", "cluster", "experiment", "loop"):
            assert main([command, "--seed", "11", "--out", out, *SMALL, "--set", "loop.T=400"]) == 0

        records = pd.read_csv(tmp_path / "records.csv")
        assert len(records) == 85
        experiment = json.loads((tmp_path / "experiment.json").read_text())
        assert experiment["anova"]["residual"]["df"] == 80
        assert [h["name"] for h in experiment["hypotheses"]] == ["Ha", "Hb", "Hc", "Hd", "He"]

        assert main(["report", "--out", out]) == 0
        first = (tmp_path / "report.md").read_text()
        assert "## Clustering" in first
        assert "| Accuracy |" in first
        assert main(["report", "--out", out]) == 0
        assert (tmp_path / "report.md").read_text() == first

    def test_records_profit_has_six_decimals(self, tmp_path):
        seed_agents(tmp_path, seed=12)
        assert main(["experiment", "--seed", "12", "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "records.csv").read_text().splitlines()
        assert lines[0] == "subject_id,condition,gender,profit"
        assert len(lines) == 86
        for line in lines[1:]:
            assert re.fullmatch(r"-?\d+\.\d{6}", line.rsplit(",", 1)[1]), line

    def test_experiment_and_loop_are_byte_reproducible(self, tmp_path, monkeypatch):
        import stages.cluster_stage as cluster_stage

        def run(out_dir):
            seed_agents(out_dir, seed=9)
            for command in ("experiment", "loop"):
                assert main([command, "--seed", "9", "--out", str(out_dir), "--set", "loop.T=400"]) == 0
            return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir()) if p.name != "config.json"}

        first = run(tmp_path / "a")
        assert {"records.csv", "experiment.json", "trace.csv", "summary.json"} <= set(first)
        assert run(tmp_path / "b") == first
        monkeypatch.setattr(cluster_stage, "ACF_WORKERS", 4)
        assert run(tmp_path / "a") == first

    def test_one_subject_per_cell_skips_the_anova(self, tmp_path):
        """Gender is aliased with equivocality, so the tables are skipped but the command succeeds."""
        seed_agents(tmp_path, seed=4)
        overrides = ["--set", "cells=[1,1,1,1]", "--set", "gender_counts=[2,2]"]
        assert main(["experiment", "--seed", "4", "--out", str(tmp_path), *overrides]) == 0
        experiment = json.loads((tmp_path / "experiment.json").read_text())
        assert experiment["subjects"] == 4
        assert experiment["anova"] is None
        assert experiment["hypotheses"] is None
        assert experiment["anova_error"]
        assert not (tmp_path / "anova.csv").exists()
        assert len(pd.read_csv(tmp_path / "records.csv")) == 4

    def test_pipeline(self, tmp_path):
        seed_agents(tmp_path, seed=5)
        code = main(["pipeline", "--seed", "5", "--out", str(tmp_path), *SMALL, "--set", "loop.T=200"])
        assert code == 0
        catalog = json.loads((tmp_path / "catalog.json").read_text())
        assert set(catalog["commands"]) == set(STAGE_ORDER)
        assert (tmp_path / "report.md").is_file()
