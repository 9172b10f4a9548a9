from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from jinja2 import Environment, StrictUndefined

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.metrics import RunSummary
from dwm_lab.algo.types import AttackKind, PolicyKind
from dwm_lab.algo.utils import write_table
from dwm_lab.config_loader import get_settings
from dwm_lab.log import get_logger
from dwm_lab.run_config import RunConfig
from dwm_lab.tools.episodes import (EpisodeOutcome, PolicySpec, default_checkpoint, replication_jobs, run_jobs,
                                    summarize)

BENCHMARK_COLUMNS = ["arm", "U", "energy_mean", "energy_se", "degradation_mean", "degradation_se", "arl1", "arl1_se",
                     "arl1_uncensored", "arl1_censored", "arl1_defined", "detected_within_1", "detected_within_2",
                     "arl0", "arl0_uncensored", "arl0_censored", "arl0_defined", "inter_alarm_mean", "inter_alarm_count"]


def _se(values: List[float]) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.std(values, ddof=1) / np.sqrt(values.size)) if values.size > 1 else float("nan")


def _detected_within(delays: List[int], runs: int, steps: int) -> float:
    # undetected runs count as misses
    return float(np.sum(np.asarray(delays) <= steps) / runs) if runs else float("nan")


class LabBenchmark:
    """
    Compares watermark arms on common random numbers: no watermark, the low and high constants, every
    configured LQG-derived constant and the trained DDPG policy. Writes the comparison table, the raw inter-alarm
    gaps, the per-episode table and a markdown report.
    """

    def __init__(self, run_config: RunConfig, args: List[str] = None):
        self.run_config = run_config
        self.args = args or []
        self.output_dir = run_config.output_dir / "benchmark"

    def arms(self) -> List[Tuple[str, PolicySpec]]:
        section = self.run_config.benchmark
        arms: List[Tuple[str, PolicySpec]] = []
        for arm in section.arms:
            if arm == "none":
                arms.append(("none", PolicySpec(PolicyKind.NONE)))
            elif arm == "low":
                arms.append(("low", PolicySpec(PolicyKind.CONSTANT, section.low_variance)))
            elif arm == "high":
                arms.append(("high", PolicySpec(PolicyKind.CONSTANT, section.high_variance)))
            elif arm == "lqg":
                arms += [(f"lqg_{i + 1}", PolicySpec(PolicyKind.CONSTANT, float(U)))
                         for i, U in enumerate(section.lqg_variances)]
            elif arm == "ddpg":
                checkpoint = Path(self.run_config.watermark.checkpoint or default_checkpoint(self.run_config))
                if not checkpoint.is_file():
                    raise ConfigurationError(f"The ddpg arm needs a trained checkpoint, none found at {checkpoint}. "
                                             f"Run 'train' first or set watermark.checkpoint")
                arms.append(("ddpg", PolicySpec(PolicyKind.DDPG, checkpoint=str(checkpoint))))
        return arms

    def run(self) -> Path:
        config = self.run_config.config
        seed = config.seed + config.eval_seed_offset
        attack = self.run_config.attack.kind
        arms = self.arms()
        jobs = []
        for label, spec in arms:
            jobs += replication_jobs(self.run_config, label, spec, AttackKind.NONE, seed=seed)
            if attack != AttackKind.NONE:
                jobs += replication_jobs(self.run_config, label, spec, attack, seed=seed)
        outcomes = run_jobs(self.run_config, jobs)

        rows, gaps = [], []
        for label, spec in arms:
            mine = [outcome for outcome in outcomes if outcome.job.label == label]
            attacked = [outcome for outcome in mine if outcome.attacked]
            nominal = [outcome for outcome in mine if not outcome.attacked]
            summary = summarize(attacked, nominal)
            rows.append(self._row(label, spec, summary, attacked, nominal))
            gaps += [{"arm": label, "interval": gap} for gap in summary.inter_alarm]
            get_logger().info(f"Arm {label}: energy {rows[-1]['energy_mean']:.4g}, ARL1 {rows[-1]['arl1']:.3g}")
            get_logger().info(f"benchmark arm {label}", telemetry=True, arm=rows[-1])

        header = {"config_hash": self.run_config.hash}
        table = pd.DataFrame(rows, columns=BENCHMARK_COLUMNS)
        write_table(table, self.output_dir / "benchmark.csv", header)
        write_table(pd.DataFrame(gaps, columns=["arm", "interval"]), self.output_dir / "inter_alarm.csv", header)
        write_table(pd.DataFrame([outcome.row() for outcome in outcomes]), self.output_dir / "episodes.csv", header)
        report = self.output_dir / "report.md"
        report.write_text(self._render(rows))
        get_logger().info(f"Benchmark written to {self.output_dir}")
        return self.output_dir / "benchmark.csv"

    @staticmethod
    def _row(label: str, spec: PolicySpec, summary: RunSummary, attacked: List[EpisodeOutcome],
             nominal: List[EpisodeOutcome]) -> Dict:
        arl1, arl0 = summary.arl1, summary.arl0
        delays = [t - outcome.onset for outcome, t in zip(attacked, summary.detection_times) if t is not None]
        return {
            "arm": label,
            "U": spec.variance if spec.kind == PolicyKind.CONSTANT else (0.0 if spec.kind == PolicyKind.NONE else None),
            "energy_mean": summary.energy,
            "energy_se": _se([outcome.energy for outcome in nominal or attacked]),
            "degradation_mean": summary.degradation,
            "degradation_se": _se([outcome.degradation for outcome in nominal or attacked]),
            "arl1": arl1.mean if arl1 else float("nan"),
            "arl1_se": arl1.stderr if arl1 else float("nan"),
            "arl1_uncensored": arl1.uncensored if arl1 else 0,
            "arl1_censored": arl1.censored if arl1 else 0,
            "arl1_defined": bool(arl1 and arl1.defined),
            "detected_within_1": _detected_within(delays, len(attacked), 1),
            "detected_within_2": _detected_within(delays, len(attacked), 2),
            "arl0": arl0.mean if arl0 else float("nan"),
            "arl0_uncensored": arl0.uncensored if arl0 else 0,
            "arl0_censored": arl0.censored if arl0 else 0,
            "arl0_defined": bool(arl0 and arl0.defined),
            "inter_alarm_mean": float(np.mean(summary.inter_alarm)) if summary.inter_alarm else float("nan"),
            "inter_alarm_count": len(summary.inter_alarm),
        }

    def _render(self, rows: List[Dict]) -> str:
        baseline: Optional[Dict] = next((row for row in rows if row["arm"] == "high"), None)
        environment = Environment(undefined=StrictUndefined)
        twin = self.run_config.twin
        return environment.from_string(get_settings().benchmark_report.template).render({
            "environment": self.run_config.config.environment.value,
            "config_hash": self.run_config.hash,
            "replications": self.run_config.config.replications,
            "attack": self.run_config.attack.kind.value,
            "onset": self.run_config.attack.onset or twin.onset,
            "rows": rows,
            "baseline": baseline,
        })
