from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from dwm_lab.algo.attack import AttackScenario
from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.types import EstimatorMode

TRACE_COLUMNS = ["t", "y", "y_wom", "u", "phi", "U", "g", "I", "d", "reward", "attack_active"]


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 0.35
    w2: float = 0.35
    w3: float = 0.30

    def __post_init__(self):
        for name in ("w1", "w2", "w3"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"reward.{name} must be nonnegative, got {getattr(self, name)}")


@dataclass(frozen=True)
class DetectorSetup:
    alpha: float
    threshold: float  # 0: analytic quantile at alpha
    estimator_mode: EstimatorMode = EstimatorMode.COMPENSATING


@dataclass(frozen=True)
class BeliefSetup:
    prior: float
    onset_rate: float
    w_beta: int
    clamp: float = 1e-12


@dataclass(frozen=True)
class EpisodeConfig:
    """
    Time scales and scenario of one episode.

    horizon counts fast plant steps. Every decision holds the action for decision_block fast steps and feeds
    the first processed_block of them to the detector, the belief and the reward.
    """
    horizon: int
    decision_block: int
    processed_block: int
    scenario: AttackScenario
    weights: RewardWeights
    detector: DetectorSetup
    belief: BeliefSetup
    seed: int = 0
    replication: int = 0
    u_max: float = 1.0
    state_scale: float = 1.0

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        if not 1 <= self.processed_block <= self.decision_block:
            raise ConfigurationError(
                f"processed_block must lie in [1, decision_block={self.decision_block}], got {self.processed_block}")
        if self.u_max <= 0:
            raise ConfigurationError(f"u_max must be positive, got {self.u_max}")


@dataclass
class MdpState:
    y: np.ndarray
    d: float

    def observation(self, state_scale: float = 1.0) -> np.ndarray:
        return np.concatenate([np.asarray(self.y, dtype=float).reshape(-1) / state_scale, [self.d]])


@dataclass(frozen=True)
class MdpAction:
    """Watermark covariance held over one decision block."""
    U: np.ndarray

    @classmethod
    def of(cls, value, c: int) -> "MdpAction":
        U = np.asarray(value, dtype=float)
        if U.ndim == 0 or U.size == 1:
            U = np.eye(c) * max(float(U.reshape(-1)[0]), 0.0)
        else:
            U = np.atleast_2d(U)
            if U.shape != (c, c):
                raise ConfigurationError(f"Action has shape {U.shape}, expected {(c, c)}")
            # project onto the PSD cone
            eigvals, eigvecs = np.linalg.eigh(0.5 * (U + U.T))
            U = (eigvecs * np.clip(eigvals, 0.0, None)) @ eigvecs.T
        return cls(U=U)

    @property
    def scalar(self) -> float:
        return float(np.trace(self.U) / self.U.shape[0])


@dataclass
class EpisodeResult:
    trace: pd.DataFrame
    total_return: float
    decision_epochs: int
    fast_steps: int
    onset: int
    rewards: List[float] = field(default_factory=list)
    energy: float = 0.0
    degradation: float = 0.0

    @property
    def alarms(self) -> np.ndarray:
        return self.trace["I"].to_numpy()

    @property
    def detection_time(self) -> Optional[int]:
        hits = self.trace["t"][(self.trace["I"] == 1) & (self.trace["t"] >= self.onset)]
        return int(hits.iloc[0]) if len(hits) else None

    @property
    def first_alarm_steps(self) -> Optional[int]:
        hits = self.trace["t"][self.trace["I"] == 1]
        return int(hits.iloc[0]) if len(hits) else None


def reward_step(phi, y_wom, y, d_next: float, w: RewardWeights) -> float:
    """-w1 |phi|_1 - w2 |y_wom - y|_2 + w3 |0.5 - d|"""
    phi = np.asarray(phi, dtype=float).reshape(-1)
    gap = np.asarray(y_wom, dtype=float).reshape(-1) - np.asarray(y, dtype=float).reshape(-1)
    return float(-w.w1 * np.sum(np.abs(phi)) - w.w2 * np.linalg.norm(gap) + w.w3 * abs(0.5 - d_next))
