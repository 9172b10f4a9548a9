from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.metrics import RunSummary, arl0, inter_alarm_intervals, summarize_delays
from dwm_lab.algo.types import AttackKind, PolicyKind
from dwm_lab.env import get_environment
from dwm_lab.env.mdp import MdpState
from dwm_lab.env.watermark_env import Policy, WatermarkEnvironment, zero_policy
from dwm_lab.log import get_logger
from dwm_lab.rl.checkpoint import load_policy
from dwm_lab.run_config import RunConfig, apply_to_settings

TRACE_SCHEMA_VERSION = 1
CONFIDENCE_LEVEL = 0.99


def constant_policy(variance: float, state: MdpState) -> float:
    return variance


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    variance: float = 0.0
    checkpoint: str = ""

    @property
    def label(self) -> str:
        if self.kind == PolicyKind.CONSTANT:
            return f"constant({self.variance:g})"
        return self.kind.value


def default_checkpoint(run_config: RunConfig) -> Path:
    return run_config.output_dir / "train" / run_config.ddpg.checkpoint_name


def policy_from_config(run_config: RunConfig) -> PolicySpec:
    watermark = run_config.watermark
    checkpoint = watermark.checkpoint or str(default_checkpoint(run_config))
    return PolicySpec(kind=watermark.policy, variance=watermark.variance, checkpoint=checkpoint)


def build_policy(spec: PolicySpec, env: WatermarkEnvironment, run_config: RunConfig) -> Policy:
    if spec.kind == PolicyKind.NONE:
        return zero_policy
    if spec.kind == PolicyKind.CONSTANT:
        return partial(constant_policy, spec.variance)
    if not spec.checkpoint:
        raise ConfigurationError("The ddpg policy needs watermark.checkpoint")
    bundle = load_policy(spec.checkpoint, env.observation_dim, env.c, run_config.env_hash)
    return bundle.policy(run_config.twin.state_scale)


@dataclass(frozen=True)
class EpisodeJob:
    label: str
    policy: PolicySpec
    replication: int
    seed: int
    attack_kind: Optional[AttackKind] = None


@dataclass
class EpisodeOutcome:
    job: EpisodeJob
    attack_kind: AttackKind
    trace: pd.DataFrame
    onset: int
    total_return: float
    energy: float
    degradation: float
    fast_steps: int
    decision_epochs: int
    detection_time: Optional[int]
    confident_time: Optional[int]

    @property
    def attacked(self) -> bool:
        return self.attack_kind != AttackKind.NONE

    def row(self) -> dict:
        return {
            "label": self.job.label,
            "replication": self.job.replication,
            "seed": self.job.seed,
            "attacked": int(self.attacked),
            "onset": self.onset,
            "total_return": self.total_return,
            "energy": self.energy,
            "degradation": self.degradation,
            "fast_steps": self.fast_steps,
            "decision_epochs": self.decision_epochs,
            "alarms": int(self.trace["I"].sum()),
            "detection_time": self.detection_time if self.detection_time is not None else -1,
            "confident_time": self.confident_time if self.confident_time is not None else -1,
        }


def confident_time(trace: pd.DataFrame, onset: int, level: float = CONFIDENCE_LEVEL) -> Optional[int]:
    """First time index at or after the onset where the belief exceeds level."""
    hits = trace["t"][(trace["d"] > level) & (trace["t"] >= onset)]
    return int(hits.iloc[0]) if len(hits) else None


def run_job(run_config: RunConfig, job: EpisodeJob) -> EpisodeOutcome:
    apply_to_settings(run_config)
    env = get_environment(run_config, seed=job.seed, replication=job.replication, attack_kind=job.attack_kind)
    policy = build_policy(job.policy, env, run_config)
    result = env.run_episode(policy)
    kind = env.episode.scenario.kind
    return EpisodeOutcome(
        job=job,
        attack_kind=kind,
        trace=result.trace,
        onset=result.onset,
        total_return=result.total_return,
        energy=result.energy,
        degradation=result.degradation,
        fast_steps=result.fast_steps,
        decision_epochs=result.decision_epochs,
        detection_time=result.detection_time if kind != AttackKind.NONE else None,
        confident_time=confident_time(result.trace, result.onset) if kind != AttackKind.NONE else None,
    )


def run_jobs(run_config: RunConfig, jobs: Sequence[EpisodeJob]) -> List[EpisodeOutcome]:
    """Run every job, fanning out over config.workers processes; results come back in job order."""
    workers = min(run_config.config.workers, max(len(jobs), 1))
    get_logger().info(f"Running {len(jobs)} episodes on {workers} worker(s)")
    if workers == 1:
        return [run_job(run_config, job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(partial(run_job, run_config), jobs))


def replication_jobs(run_config: RunConfig, label: str, policy: PolicySpec, attack_kind: Optional[AttackKind] = None,
                     replications: Optional[int] = None, seed: Optional[int] = None) -> List[EpisodeJob]:
    seed = run_config.config.seed if seed is None else seed
    count = run_config.config.replications if replications is None else replications
    return [EpisodeJob(label=label, policy=policy, replication=r, seed=seed, attack_kind=attack_kind)
            for r in range(count)]


def summarize(attacked: Sequence[EpisodeOutcome], nominal: Sequence[EpisodeOutcome]) -> RunSummary:
    """ARL1 and inter-alarm gaps from the attacked runs, ARL0, energy and degradation from the nominal runs."""
    summary = RunSummary()
    if nominal:
        summary.arl0 = arl0([outcome.trace["I"].to_numpy() for outcome in nominal])
        summary.energy = float(np.mean([outcome.energy for outcome in nominal]))
        summary.degradation = float(np.mean([outcome.degradation for outcome in nominal]))
    if attacked:
        onset = attacked[0].onset
        summary.detection_times = [outcome.detection_time for outcome in attacked]
        summary.arl1 = summarize_delays(summary.detection_times, onset)
        for outcome in attacked:
            summary.inter_alarm += inter_alarm_intervals(outcome.trace["I"].to_numpy(), onset,
                                                         times=outcome.trace["t"].to_numpy())
        if not nominal:
            summary.energy = float(np.mean([outcome.energy for outcome in attacked]))
            summary.degradation = float(np.mean([outcome.degradation for outcome in attacked]))
    return summary


def trace_header(run_config: RunConfig, command: str, outcome: EpisodeOutcome) -> dict:
    return {
        "config_hash": run_config.hash,
        "schema_version": TRACE_SCHEMA_VERSION,
        "command": command,
        "label": outcome.job.label,
        "seed": outcome.job.seed,
        "replication": outcome.job.replication,
        "attack": outcome.attack_kind.value,
    }
