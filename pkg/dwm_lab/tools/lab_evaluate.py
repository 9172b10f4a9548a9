from pathlib import Path
from typing import List

import pandas as pd

from dwm_lab.algo.types import AttackKind
from dwm_lab.algo.utils import write_json, write_table
from dwm_lab.log import get_logger
from dwm_lab.run_config import RunConfig
from dwm_lab.tools.episodes import policy_from_config, replication_jobs, run_jobs, summarize


class LabEvaluate:
    """
    Evaluates the configured watermark policy on seeds disjoint from training: config.replications nominal
    episodes for ARL0, energy and degradation, and as many attacked episodes for ARL1 and inter-alarm gaps.
    """

    def __init__(self, run_config: RunConfig, args: List[str] = None):
        self.run_config = run_config
        self.args = args or []
        self.output_dir = run_config.output_dir / "evaluate"

    def run(self) -> Path:
        config = self.run_config.config
        seed = config.seed + config.eval_seed_offset
        policy = policy_from_config(self.run_config)
        attack = self.run_config.attack.kind
        if attack == AttackKind.NONE:
            get_logger().warning("attack.kind is 'none', ARL1 will not be estimated")
        jobs = replication_jobs(self.run_config, policy.label, policy, AttackKind.NONE, seed=seed)
        if attack != AttackKind.NONE:
            jobs += replication_jobs(self.run_config, policy.label, policy, attack, seed=seed)
        outcomes = run_jobs(self.run_config, jobs)

        attacked = [outcome for outcome in outcomes if outcome.attacked]
        nominal = [outcome for outcome in outcomes if not outcome.attacked]
        summary = summarize(attacked, nominal)
        write_table(pd.DataFrame([outcome.row() for outcome in outcomes]), self.output_dir / "episodes.csv",
                    {"config_hash": self.run_config.hash})
        payload = {
            "command": "evaluate",
            "config_hash": self.run_config.hash,
            "policy": policy.label,
            "attack": attack.value,
            "eval_seed": seed,
            "summary": summary.to_dict(),
        }
        path = write_json(payload, self.output_dir / "summary.json")
        arl1 = summary.arl1.mean if summary.arl1 else float("nan")
        get_logger().info(f"Evaluation summary written to {path}: ARL0 {summary.arl0.mean:.1f}, ARL1 {arl1:.2f}")
        get_logger().info("evaluate summary", telemetry=True, summary=payload["summary"])
        return path
