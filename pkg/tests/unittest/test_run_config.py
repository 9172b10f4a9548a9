import pytest

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.types import AttackKind, EnvironmentKind
from dwm_lab.algo.utils import write_json
from dwm_lab.config_loader import find_project_settings
from dwm_lab.run_config import OUTPUT_DIR_ENV, load_run_config


class TestLoadRunConfig:
    def test_defaults(self):
        rc = load_run_config()
        assert rc.config.environment == EnvironmentKind.MTC_TWIN
        assert rc.twin.horizon == 1000
        assert rc.twin.b == [[0.010]]
        assert rc.attack.kind == AttackKind.REPLAY
        assert len(rc.motor_twin.segments) == 4
        assert len(rc.hash) == 16

    def test_overrides_merge_into_sections(self):
        rc = load_run_config(overrides={"detector": {"alpha": 0.01}, "sweep": {"variances": ["1e-4", 1.0e-3]}})
        assert rc.detector.alpha == 0.01
        assert rc.detector.estimator_mode.value == "compensating"
        assert rc.sweep.variances == [1e-4, 1e-3]

    def test_unknown_key_names_its_path(self):
        with pytest.raises(ConfigurationError, match="detector.bogus"):
            load_run_config(overrides={"detector": {"bogus": 1}})

    def test_invalid_value_names_its_path(self):
        with pytest.raises(ConfigurationError, match="detector.alpha"):
            load_run_config(overrides={"detector": {"alpha": 2.0}})

    def test_unknown_benchmark_arm(self):
        with pytest.raises(ConfigurationError, match="benchmark.arms"):
            load_run_config(overrides={"benchmark": {"arms": ["none", "random"]}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_run_config(tmp_path / "absent.toml")

    def test_yaml_file(self, tmp_path):
        path = tmp_path / "lab.yaml"
        path.write_text("attack:\n  kind: flip_post\nmtc_twin:\n  horizon: 300\n")
        rc = load_run_config(path)
        assert rc.attack.kind == AttackKind.FLIP_POST
        assert rc.mtc_twin.horizon == 300
        assert rc.mtc_twin.onset == 200

    def test_identified_fragment_replaces_the_segments(self, tmp_path):
        segment = {"a": 1.0, "b": 0.01, "q": 1e-6, "setpoint": 5.0, "gmm_weights": [1.0], "gmm_means": [0.2],
                   "gmm_variances": [1e-4]}
        path = write_json({"motor_twin": {"segments": [segment, segment]}}, tmp_path / "fragment.json")
        rc = load_run_config(path, overrides={"config": {"environment": "motor_twin"}})
        assert len(rc.twin.segments) == 2
        assert rc.twin.segments[1].setpoint == 5.0
        assert rc.twin.decision_block == 500

    def test_output_dir_from_environment(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
        assert load_run_config().output_dir == tmp_path


class TestHashes:
    def test_hash_ignores_where_and_how_fast(self):
        base = load_run_config()
        moved = load_run_config(overrides={"config": {"output_dir": "elsewhere", "workers": 4}})
        assert moved.hash == base.hash

    def test_hash_tracks_what_is_computed(self):
        assert load_run_config(overrides={"detector": {"alpha": 0.01}}).hash != load_run_config().hash

    def test_environment_hash_ignores_evaluation_settings(self):
        base = load_run_config()
        swept = load_run_config(overrides={"sweep": {"episodes": 3}, "config": {"replications": 5}})
        assert swept.env_hash == base.env_hash
        assert load_run_config(overrides={"reward": {"w1": 0.5}}).env_hash != base.env_hash


class TestProjectSettings:
    def test_nearest_pyproject_with_a_lab_table(self, tmp_path):
        (tmp_path / ".git").mkdir()
        (tmp_path / "pyproject.toml").write_text('[tool.dwm-lab.config]\nseed = 7\n')
        nested = tmp_path / "experiments" / "motor"
        nested.mkdir(parents=True)
        (tmp_path / "experiments" / "pyproject.toml").write_text('[project]\nname = "other"\n')
        assert find_project_settings(nested) == (tmp_path / "pyproject.toml").resolve()

    def test_stops_at_the_repository_root(self, tmp_path):
        (tmp_path / "pyproject.toml").write_text('[tool.dwm-lab.config]\nseed = 7\n')
        repo = tmp_path / "repo"
        (repo / ".git").mkdir(parents=True)
        assert find_project_settings(repo) is None
