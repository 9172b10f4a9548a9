import pytest

from dwm_lab import cli
from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.lab.lab_runner import LabRunner, commands
from dwm_lab.run_config import OUTPUT_DIR_ENV


class TestLabRunner:
    def test_commands(self):
        assert commands == ["identify", "simulate", "train", "evaluate", "benchmark", "sweep"]

    def test_unknown_command(self):
        with pytest.raises(ConfigurationError, match="Unknown command"):
            LabRunner().handle_request("calibrate")

    def test_invalid_override(self):
        with pytest.raises(ConfigurationError, match="belief.prior"):
            LabRunner().handle_request(["simulate", "--belief.prior=1.5"])


class TestCli:
    def test_configuration_error_exit_code(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
        assert cli.run(["simulate", "--detector.alpha=2"]) == cli.EXIT_CONFIG_ERROR

    def test_missing_config_file(self, tmp_path):
        assert cli.run(["--config", str(tmp_path / "absent.toml"), "simulate"]) == cli.EXIT_CONFIG_ERROR

    def test_successful_run(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
        code = cli.run(["simulate", "--mtc_twin.horizon=30", "--mtc_twin.onset=10", "--config.replications=1",
                        "--config.write_traces=false"])
        assert code == cli.EXIT_OK
        assert (tmp_path / "simulate" / "summary.json").is_file()

    def test_unknown_command_is_rejected_by_the_parser(self):
        with pytest.raises(SystemExit):
            cli.run(["calibrate"])

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.run(["--version"])
        assert info.value.code == 0
        assert capsys.readouterr().out.startswith("dwm-lab ")
