import os
import shlex
from pathlib import Path
from typing import List, Optional, Union

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.utils import parse_override_args
from dwm_lab.log import get_logger, setup_logger
from dwm_lab.run_config import load_run_config
from dwm_lab.tools.lab_benchmark import LabBenchmark
from dwm_lab.tools.lab_evaluate import LabEvaluate
from dwm_lab.tools.lab_identify import LabIdentify
from dwm_lab.tools.lab_simulate import LabSimulate
from dwm_lab.tools.lab_sweep import LabSweep
from dwm_lab.tools.lab_train import LabTrain

command2class = {
    "identify": LabIdentify,
    "simulate": LabSimulate,
    "train": LabTrain,
    "evaluate": LabEvaluate,
    "benchmark": LabBenchmark,
    "sweep": LabSweep,
}

commands = list(command2class.keys())


class LabRunner:
    def __init__(self, config_file: Optional[Union[str, Path]] = None):
        self.config_file = config_file

    def handle_request(self, request: Union[str, List[str]]) -> Path:
        """
        Resolve the configuration for one command and run it.

        Args:
            request: the command followed by '--section.key=value' overrides, as a string or a list.

        Returns:
            The main output file of the command.

        Raises:
            ConfigurationError: unknown command, unreadable configuration or invalid override.
        """
        if isinstance(request, str):
            action, *args = shlex.split(request)
        else:
            action, *args = request

        action = action.lstrip("/").lower()
        if action not in command2class:
            raise ConfigurationError(f"Unknown command: {action}. Supported commands: {', '.join(commands)}")
        overrides, args = parse_override_args(args)
        run_config = load_run_config(self.config_file, overrides)
        if run_config.config.log_folder or run_config.config.verbosity_level:
            level = "DEBUG" if run_config.config.verbosity_level else os.environ.get("LOG_LEVEL", "INFO")
            setup_logger(level, log_folder=run_config.config.log_folder)
        with get_logger().contextualize(command=action, config_hash=run_config.hash):
            get_logger().info(f"Running {action} (config {run_config.hash})")
            get_logger().info(f"dwm-lab {action} started", telemetry=True)
            output = command2class[action](run_config, args=args).run()
            get_logger().info(f"dwm-lab {action} finished", telemetry=True, output=str(output))
            return output
