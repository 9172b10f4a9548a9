import numpy as np
import pandas as pd
import pytest
import ujson

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.utils import read_table, read_table_header
from dwm_lab.env.mdp import TRACE_COLUMNS
from dwm_lab.lab.lab_runner import LabRunner
from dwm_lab.run_config import load_run_config
from dwm_lab.tools.lab_benchmark import BENCHMARK_COLUMNS, _detected_within
from dwm_lab.tools.lab_identify import split_segments

SMALL = "--mtc_twin.horizon=40 --mtc_twin.onset=10 --config.replications=2"


@pytest.fixture
def lab(tmp_path):
    def run(request: str):
        return LabRunner().handle_request(f"{request} {SMALL} --config.output_dir={tmp_path}")
    return run


def _hash(tmp_path, extra: dict = None) -> str:
    overrides = {"mtc_twin": {"horizon": 40, "onset": 10}, "config": {"replications": 2, "output_dir": str(tmp_path)}}
    for section, values in (extra or {}).items():
        overrides.setdefault(section, {}).update(values)
    return load_run_config(overrides=overrides).hash


class TestSimulate:
    def test_writes_traces_and_summary(self, lab, tmp_path):
        path = lab("simulate")
        summary = ujson.loads(path.read_text())
        assert summary["command"] == "simulate"
        assert summary["attack"] == "replay"
        assert summary["config_hash"] == _hash(tmp_path)
        assert len(summary["summary"]["detection_times"]) == 2
        trace_path = tmp_path / "simulate" / "trace_rep001.csv"
        header = read_table_header(trace_path)
        assert header["config_hash"] == summary["config_hash"]
        assert header["replication"] == "1"
        trace = read_table(trace_path)
        assert list(trace.columns) == TRACE_COLUMNS
        assert len(trace) == 40
        assert len(read_table(tmp_path / "simulate" / "episodes.csv")) == 2


class TestEvaluate:
    def test_uses_held_out_seeds(self, lab, tmp_path):
        summary = ujson.loads(lab("evaluate").read_text())
        assert summary["eval_seed"] == 2024 + 100000
        episodes = read_table(tmp_path / "evaluate" / "episodes.csv")
        assert sorted(episodes["attacked"].tolist()) == [0, 0, 1, 1]
        assert set(episodes["seed"]) == {102024}

    def test_missing_checkpoint(self, lab):
        with pytest.raises(ConfigurationError, match="not found"):
            lab("evaluate --watermark.policy=ddpg --watermark.checkpoint=/nonexistent/policy.npz")


class TestBenchmark:
    def test_constant_arms(self, lab, tmp_path):
        path = lab("benchmark --benchmark.arms=[none,low,high] --benchmark.lqg_variances=[0.5]")
        table = read_table(path)
        assert list(table.columns) == BENCHMARK_COLUMNS
        assert table["arm"].tolist() == ["none", "low", "high"]
        none_row = table.set_index("arm").loc["none"]
        assert none_row["energy_mean"] == 0.0
        assert none_row["degradation_mean"] == 0.0
        high = table.set_index("arm").loc["high"]
        assert high["energy_mean"] > table.set_index("arm").loc["low"]["energy_mean"]
        assert high["arl1_uncensored"] == 2
        assert high["detected_within_2"] >= high["detected_within_1"]
        report = (tmp_path / "benchmark" / "report.md").read_text()
        assert "| high |" in report
        assert "relative to the `high` arm" in report
        assert (tmp_path / "benchmark" / "inter_alarm.csv").is_file()

    def test_detection_shares_count_missed_runs(self):
        assert _detected_within([0, 2, 5], runs=4, steps=2) == 0.5
        assert _detected_within([0, 2, 5], runs=4, steps=1) == 0.25
        assert np.isnan(_detected_within([], runs=0, steps=1))

    def test_lqg_arms(self, lab):
        table = read_table(lab("benchmark --benchmark.arms=[lqg] --benchmark.lqg_variances=[0.5,0.25]"))
        assert table["arm"].tolist() == ["lqg_1", "lqg_2"]
        assert table["U"].tolist() == [0.5, 0.25]

    def test_ddpg_arm_needs_a_checkpoint(self, lab):
        with pytest.raises(ConfigurationError, match="train"):
            lab("benchmark --benchmark.arms=[ddpg]")


class TestSweep:
    def test_grid(self, lab, tmp_path):
        path = lab("sweep --sweep.variances=[2.5e-3,1.0e-9] --sweep.episodes=2")
        header = read_table_header(path)
        assert header["attack"] == "replay"
        table = read_table(path)
        assert table["U"].tolist() == [1e-9, 2.5e-3]
        assert (table["episodes"] == 2).all()
        assert table["detection_belief_mean"].iloc[1] > table["detection_belief_mean"].iloc[0]
        assert table["degradation_mean"].iloc[1] > table["degradation_mean"].iloc[0]


class TestTrain:
    def test_train_resume_and_evaluate(self, lab, tmp_path):
        knobs = "--ddpg.batch_size=16 --mtc_twin.hidden=8 --ddpg.checkpoint_every=1"
        checkpoint = lab(f"train --ddpg.episodes=2 {knobs}")
        assert checkpoint == tmp_path / "train" / "policy.npz"
        curve = read_table(tmp_path / "train" / "learning_curve_from0000.csv")
        assert curve["episode"].tolist() == [0, 1]
        assert np.all(np.isfinite(curve["return"]))
        assert curve["ou_sigma"].iloc[1] < curve["ou_sigma"].iloc[0]

        lab(f"train --ddpg.episodes=3 --ddpg.resume={checkpoint} {knobs}")
        assert read_table(tmp_path / "train" / "learning_curve_from0002.csv")["episode"].tolist() == [2]

        summary = ujson.loads(lab(f"evaluate --watermark.policy=ddpg {knobs}").read_text())
        assert summary["policy"] == "ddpg"
        assert summary["summary"]["energy"] >= 0.0


def _motor_log(seed: int = 0):
    rng = np.random.default_rng(seed)
    y, u = [0.0], []
    for t in range(600):
        b, mean = (0.01, 1.2) if t < 300 else (0.02, -0.7)
        u_t = rng.choice([0.0, mean]) + 0.01 * rng.standard_normal()
        u.append(u_t)
        y.append(y[-1] + b * u_t + 1e-3 * rng.standard_normal())
    return np.array(y[:600]), np.array(u)


class TestIdentify:
    def test_fragment_round_trip(self, lab, tmp_path):
        y, u = _motor_log()
        pd.DataFrame({"y": y}).to_csv(tmp_path / "y.csv", index=False)
        pd.DataFrame({"u": u}).to_csv(tmp_path / "u.csv", index=False)
        path = lab(f"identify --identify.y_csv={tmp_path / 'y.csv'} --identify.u_csv={tmp_path / 'u.csv'} "
                   f"--identify.boundaries=[300]")
        fragment = ujson.loads(path.read_text())
        segments = fragment["motor_twin"]["segments"]
        assert len(segments) == 2
        assert segments[0]["b"] == pytest.approx(0.01, rel=0.1)
        assert segments[1]["b"] == pytest.approx(0.02, rel=0.1)
        assert segments[0]["setpoint"] == pytest.approx(y[299])

        rc = load_run_config(path, overrides={"config": {"environment": "motor_twin"}})
        assert [s.b for s in rc.twin.segments] == [s["b"] for s in segments]

    def test_missing_series(self, lab):
        with pytest.raises(ConfigurationError, match="y_csv"):
            lab("identify")

    def test_boundaries_must_increase(self):
        assert split_segments(10, [4]) == [slice(0, 4), slice(4, 10)]
        with pytest.raises(ConfigurationError):
            split_segments(10, [6, 3])
        with pytest.raises(ConfigurationError):
            split_segments(10, [10])
