from pathlib import Path
from typing import List

import pandas as pd

from dwm_lab.algo.utils import write_json, write_table
from dwm_lab.log import get_logger
from dwm_lab.run_config import RunConfig
from dwm_lab.tools.episodes import EpisodeOutcome, policy_from_config, replication_jobs, run_jobs, summarize, trace_header


class LabSimulate:
    """
    Runs config.replications seeded episodes of the configured twin, scenario and watermark policy, and writes
    one trace CSV per episode, a per-episode table and a summary JSON.
    """

    def __init__(self, run_config: RunConfig, args: List[str] = None):
        self.run_config = run_config
        self.args = args or []
        self.output_dir = run_config.output_dir / "simulate"

    def run(self) -> Path:
        policy = policy_from_config(self.run_config)
        get_logger().info(f"Simulating {self.run_config.config.replications} episodes of "
                          f"{self.run_config.config.environment.value} with policy {policy.label}")
        outcomes = run_jobs(self.run_config, replication_jobs(self.run_config, policy.label, policy))
        if self.run_config.config.write_traces:
            self._write_traces(outcomes)
        episodes = pd.DataFrame([outcome.row() for outcome in outcomes])
        write_table(episodes, self.output_dir / "episodes.csv", {"config_hash": self.run_config.hash})

        attacked = [outcome for outcome in outcomes if outcome.attacked]
        nominal = [outcome for outcome in outcomes if not outcome.attacked]
        summary = summarize(attacked, nominal)
        payload = {
            "command": "simulate",
            "config_hash": self.run_config.hash,
            "policy": policy.label,
            "attack": self.run_config.attack.kind.value,
            "summary": summary.to_dict(),
            "mean_return": float(episodes["total_return"].mean()),
            "confident_times": [outcome.confident_time for outcome in attacked],
        }
        path = write_json(payload, self.output_dir / "summary.json")
        get_logger().info(f"Simulation summary written to {path}")
        get_logger().info("simulate summary", telemetry=True, summary=payload["summary"])
        return path

    def _write_traces(self, outcomes: List[EpisodeOutcome]):
        for outcome in outcomes:
            write_table(outcome.trace, self.output_dir / f"trace_rep{outcome.job.replication:03d}.csv",
                        trace_header(self.run_config, "simulate", outcome))
