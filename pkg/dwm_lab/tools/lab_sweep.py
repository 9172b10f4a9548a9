from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from dwm_lab.algo.metrics import sweep
from dwm_lab.algo.types import AttackKind, PolicyKind
from dwm_lab.algo.utils import write_table
from dwm_lab.log import get_logger
from dwm_lab.run_config import RunConfig
from dwm_lab.tools.episodes import EpisodeOutcome, PolicySpec, replication_jobs, run_jobs


def mean_belief_after_onset(outcome: EpisodeOutcome) -> float:
    """Detection belief d_t averaged over the attacked part of the episode."""
    trace = outcome.trace
    after = trace["d"][trace["t"] >= outcome.onset]
    return float(after.mean()) if len(after) else float("nan")


class LabSweep:
    """
    Detection/degradation trade-off over a grid of constant watermark variances: every variance is run
    sweep.episodes times under the configured attack (for the belief) and without it (for the degradation).
    """

    def __init__(self, run_config: RunConfig, args: List[str] = None):
        self.run_config = run_config
        self.args = args or []
        self.output_dir = run_config.output_dir / "sweep"

    def run(self) -> Path:
        section = self.run_config.sweep
        attack = self.run_config.attack.kind
        if attack == AttackKind.NONE:
            get_logger().warning("attack.kind is 'none', the detection-belief column measures false confidence")
        attacked_jobs, nominal_jobs = [], []
        for U in section.variances:
            spec = PolicySpec(PolicyKind.CONSTANT, float(U))
            attacked_jobs += replication_jobs(self.run_config, spec.label, spec, attack, replications=section.episodes)
            nominal_jobs += replication_jobs(self.run_config, spec.label, spec, AttackKind.NONE,
                                             replications=section.episodes)
        outcomes = run_jobs(self.run_config, attacked_jobs + nominal_jobs)

        results: Dict[Tuple[float, int], Dict[str, float]] = {}
        for index, outcome in enumerate(outcomes):
            entry = results.setdefault((outcome.job.policy.variance, outcome.job.replication), {})
            if index < len(attacked_jobs):
                entry["detection_belief"] = mean_belief_after_onset(outcome)
            else:
                entry["degradation"] = outcome.degradation

        table = sweep(section.variances, section.episodes, lambda U, episode: results[(float(U), episode)])
        path = write_table(table, self.output_dir / "sweep.csv", {"config_hash": self.run_config.hash,
                                                                   "attack": attack.value})
        knee = table[table["detection_belief_mean"] > 0.9]["U"]
        get_logger().info(f"Sweep of {len(table)} variances written to {path}")
        get_logger().info("sweep summary", telemetry=True,
                          knee=float(knee.iloc[0]) if len(knee) else None,
                          max_belief=float(np.nanmax(table["detection_belief_mean"])))
        return path
