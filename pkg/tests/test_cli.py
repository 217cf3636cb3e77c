import json
from pathlib import Path

import pandas as pd
import pytest
import yaml
from rich.console import Console

from main import main
from src.core.errors import ConfigError
from src.core.types import Policy, SweepResult
from src.dashboard.display import SweepDisplay, create_verify_table, verify_frame
from src.dashboard.heatmaps import create_heatmap, load_results, metric_grid
from src.experiments.config_loader import load_config, parse_config
from src.experiments.sweep import expand_cells, run_cells, run_sweep
from src.experiments.verify import CheckOutcome, VerifyReport, verify
from src.market.datasets import DatasetKind, DatasetSpec, load_csv
from src.metrics.metrics import aggregate, results_frame

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

TINY = {
    "name": "tiny",
    "horizon": 8,
    "seeds": [0],
    "policies": ["NonRobust", "RobustCTR"],
    "eps_a_grid": [0.0, 1.0e-3],
    "eps_b_grid": [0.0],
    "warmup": {"rounds": 2},
    "refit": {"multi_starts": 1, "max_alternations": 2},
    "campaign": {"budget": 0.2, "cpc_cap": 1.0},
    "dataset": {"kind": "Synthetic", "n_advertisers": 2},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY), encoding="utf-8")
    return path


class TestConfig:
    def test_defaults(self):
        config = parse_config({})
        assert config.horizon == 100
        assert len(config.eps_a_grid) == 7
        assert config.eps_a_grid[0] == pytest.approx(1e-6)
        assert config.eps_a_grid[-1] == pytest.approx(1e-2)

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            parse_config({"eps_a_grid": []})

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config({"horizon": 10, "budgett": 1.0})

    def test_unknown_dataset_key(self):
        with pytest.raises(ConfigError):
            parse_config({"dataset": {"kind": "Synthetic", "size": 3}})

    def test_eps_out_of_range(self):
        with pytest.raises(ConfigError):
            parse_config({"eps_a_grid": [0.5]})

    def test_eps_override(self):
        assert parse_config({"eps_a_grid": [0.5], "allow_eps_override": True}).eps_a_grid == (0.5,)

    def test_unknown_policy(self):
        with pytest.raises(ConfigError):
            parse_config({"policies": ["Greedy"]})

    def test_from_dataset_budget(self):
        config = parse_config({"campaign": {"budget": "from_dataset", "cpc_cap": 300}})
        assert config.budget is None
        with pytest.raises(ConfigError):
            config.campaigns(Policy.NON_ROBUST, 0.0, 0.0, 2)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("horizon: [1, 2\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    @pytest.mark.parametrize("name", ["synthetic", "synthetic_ctr_only", "ipinyou_like", "bat_like"])
    def test_presets_load(self, name):
        config = load_config(CONFIG_DIR / f"{name}.yaml")
        assert config.n_cells == len(expand_cells(config))


class TestSweep:
    def test_expand_cells(self, tiny_config):
        cells = expand_cells(load_config(tiny_config))
        assert len(cells) == 4
        assert {c.policy for c in cells} == {Policy.NON_ROBUST, Policy.ROBUST_CTR}

    def test_outputs_reproducible(self, tiny_config, tmp_path):
        first = run_sweep(tiny_config, tmp_path / "a", jobs=1, build="test")
        second = run_sweep(tiny_config, tmp_path / "b", jobs=1, build="test")
        assert first.csv_path.read_bytes() == second.csv_path.read_bytes()
        assert first.json_path.read_bytes() == second.json_path.read_bytes()

        frame = pd.read_csv(first.csv_path, keep_default_na=False)
        assert len(frame) == 4
        assert list(frame.columns)[:6] == ["policy", "eps_a", "eps_b", "seed", "tcv", "cpc_avg"]
        assert set(frame["build"]) == {"test"}
        assert len(json.loads(first.json_path.read_text(encoding="utf-8"))) == 4

    def test_progress_callback(self, tiny_config, tmp_path):
        seen = []
        run_sweep(tiny_config, tmp_path, jobs=1, build="test", on_done=seen.append)
        assert len(seen) == 4
        assert all(isinstance(r, SweepResult) for r in seen)


class TestVerify:
    def test_psd_suite(self):
        report = verify("psd", n_instances=50)
        assert report.passed

    def test_unknown_suite(self):
        with pytest.raises(ValueError):
            verify("bogus")

    @pytest.mark.slow
    def test_metrics_suite(self):
        assert verify("metrics", n_instances=1).passed


class TestMain:
    def test_unknown_suite_exit_code(self):
        assert main(["verify", "--suite", "bogus"]) == 2

    def test_verify_csv(self, capsys):
        assert main(["verify", "--suite", "psd", "--instances", "20", "--format", "csv"]) == 0
        assert capsys.readouterr().out.startswith("suite,check,passed")

    def test_gen_data(self, tmp_path):
        out = tmp_path / "data" / "synthetic.csv"
        assert main(["gen-data", "--preset", "synthetic", "--seed", "3", "--out", str(out)]) == 0
        rounds = load_csv(DatasetSpec(kind=DatasetKind.CSV_REPLAY, path=str(out)))
        assert len(rounds) == 100
        assert rounds[0].n_advertisers == 10

    def test_unknown_preset(self, tmp_path):
        assert main(["gen-data", "--preset", "criteo", "--out", str(tmp_path / "x.csv")]) == 2

    def test_bad_config_exit_code(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("horizon: 0\n", encoding="utf-8")
        assert main(["run", "--config", str(path), "--out-dir", str(tmp_path)]) == 2

    def test_run(self, tiny_config, tmp_path):
        assert main(["run", "--config", str(tiny_config), "--out-dir", str(tmp_path), "--jobs", "1"]) == 0
        assert (tmp_path / "tiny_results.csv").exists()
        assert (tmp_path / "tiny_summary.json").exists()


def sample_results():
    out = []
    for policy, shift in ((Policy.NON_ROBUST, 0.0), (Policy.ROBUST_CTR, 0.5)):
        for eps_a in (0.0, 1e-3):
            for seed in (0, 1):
                out.append(SweepResult(policy=policy, eps_a=eps_a, eps_b=0.0, seed=seed,
                                       tcv=1.0 + shift + seed, cpc_avg=None if seed else 2.0))
    return out


class TestDashboard:
    def test_metric_grid_and_baseline(self, tmp_path):
        path = tmp_path / "r.csv"
        results_frame(sample_results()).to_csv(path, index=False, na_rep="")
        frame = load_results(path)
        grid = metric_grid(frame, "RobustCTR", "mean_tcv")
        assert grid.shape == (1, 2)
        assert grid.values.tolist() == [[2.0, 2.0]]
        diff = metric_grid(frame, "RobustCTR", "mean_tcv", baseline="NonRobust")
        assert diff.values.tolist() == [[0.5, 0.5]]
        assert metric_grid(frame, "RobustCTR", "mean_cpc").values.tolist() == [[2.0, 2.0]]

    def test_empty_heatmap(self):
        fig = create_heatmap(pd.DataFrame(), "TCV")
        assert fig.layout.annotations[0].text == "没有数据"

    def test_summary_tables(self):
        display = SweepDisplay(Console(record=True, width=160))
        results = sample_results()
        assert display.create_summary_table(results).row_count == 4
        assert display.create_best_table(results).row_count == 2
        display.show_sweep(results, csv_path="results/x.csv")
        assert "results/x.csv" in display.console.export_text()

    def test_verify_table(self):
        report = VerifyReport("psd", [CheckOutcome("a", True, 3), CheckOutcome("b", False, 3, 1, "gap")])
        assert create_verify_table(report).row_count == 2
        frame = verify_frame(report)
        assert frame["passed"].tolist() == [True, False]
        assert not report.passed


def preset_means(preset, policies, eps_a, eps_b, seeds=(0, 1, 2, 3)):
    """在预设上以单个 ε 单元重跑，返回 {policy: 聚合行} 与逐条结果"""
    raw = yaml.safe_load((CONFIG_DIR / preset).read_text(encoding="utf-8"))
    raw.update(seeds=list(seeds), policies=policies, eps_a_grid=[eps_a], eps_b_grid=[eps_b])
    results = run_cells(parse_config(raw, base_dir=CONFIG_DIR), jobs=1, build="test")
    summary = aggregate(results).set_index("policy")
    return summary, results


@pytest.mark.slow
class TestDirectionalReproduction:
    def test_joint_robust_beats_nonrobust_at_large_epsilon(self):
        summary, results = preset_means("synthetic.yaml", ["NonRobust", "RobustJoint"], 1e-2, 1e-2)
        robust, plain = summary.loc["RobustJoint"], summary.loc["NonRobust"]
        by_seed = {(r.policy, r.seed): r.tcv for r in results}
        assert any(abs(by_seed[(Policy.ROBUST_JOINT, s)] - by_seed[(Policy.NON_ROBUST, s)]) > 1e-9 for s in range(4))
        assert robust.mean_tcv >= plain.mean_tcv - plain.std_tcv
        assert robust.mean_cpc <= plain.mean_cpc + plain.std_cpc

    def test_ctr_only_ordering(self):
        summary, _ = preset_means("synthetic_ctr_only.yaml", ["NonRobust", "Risk", "RobustCTR"], 1e-2, 0.0)
        robust, risk, plain = summary.loc["RobustCTR"], summary.loc["Risk"], summary.loc["NonRobust"]
        assert robust.mean_tcv >= risk.mean_tcv - risk.std_tcv
        assert risk.mean_tcv >= plain.mean_tcv - plain.std_tcv
