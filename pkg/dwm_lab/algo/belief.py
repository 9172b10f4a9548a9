from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Tuple

import numpy as np

from dwm_lab.algo.detect import DetectorConfig, replay_post_onset_law
from dwm_lab.algo.dist import chi2_cdf
from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.watermark import WatermarkSchedule
from dwm_lab.log import get_logger


@dataclass(frozen=True)
class BeliefState:
    """
    Detection confidence d_t = P(attack | I_1..I_t) under the prior sigma ~ Ber(q), onset ~ Geom(onset_rate).
    """
    d: float
    q: float
    onset_rate: float
    alpha: float
    beta: float
    w_beta: int
    t: int = 0
    clamp: float = 1e-12
    degenerate_updates: int = 0

    def __post_init__(self):
        for name in ("d", "q", "alpha", "beta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"belief.{name} must lie in [0, 1], got {value}")
        if not 0.0 < self.onset_rate <= 1.0:
            raise ConfigurationError(f"belief.onset_rate must lie in (0, 1], got {self.onset_rate}")
        if self.w_beta < 1:
            raise ConfigurationError(f"belief.w_beta must be >= 1, got {self.w_beta}")

    @classmethod
    def initial(cls, q: float, onset_rate: float, alpha: float, w_beta: int, clamp: float = 1e-12) -> "BeliefState":
        # before any evidence the miss probability is the nominal non-alarm probability
        return cls(d=q, q=q, onset_rate=onset_rate, alpha=alpha, beta=1.0 - alpha, w_beta=w_beta, clamp=clamp)


def onset_cdf(onset_rate: float, t: int) -> float:
    """P(tau <= t | attack) for tau ~ Geom(onset_rate) on {1, 2, ...}."""
    return 1.0 - (1.0 - onset_rate) ** max(t, 0)


def type2_error(schedule: WatermarkSchedule, Q, B, threshold: float, onset_rate: float, t: int, w_beta: int) -> float:
    """
    Windowed miss probability
        beta_t = sum_{k=t-w_beta}^{t} F_{t|k}(threshold) rho (1-rho)^(k-1) + H(threshold) (1-rho)^t.

    F_{t|k} is the replay residual law assuming the recording used the live covariance schedule (delta_t = 0),
    which makes it the same for every onset in the window. The truncated onset prior is not renormalized.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    nominal = chi2_cdf(threshold, Q.shape[0])
    rho = onset_rate
    if t < 1:
        return nominal
    first = max(1, t - w_beta)
    window_mass = (1.0 - rho) ** (first - 1) - (1.0 - rho) ** t
    U_prev = schedule.cov_at(t - 1)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if Q.size == 1 and B.size == 1:
        attacked = _scalar_replay_cdf(float(U_prev[0, 0]), float(B[0, 0]), float(Q[0, 0]), float(threshold))
    else:
        attacked = replay_post_onset_law(U_prev, U_prev, B, Q).cdf(threshold)
    beta = attacked * window_mass + nominal * (1.0 - rho) ** t
    return min(max(beta, 0.0), 1.0)


@lru_cache(maxsize=4096)
def _scalar_replay_cdf(U: float, B: float, Q: float, threshold: float) -> float:
    # post-onset g is (Q + 2 B^2 U) / Q times a chi2_1 variable
    return chi2_cdf(threshold * Q / (Q + 2.0 * B * B * U), 1)


def likelihoods(I: int, alpha: float, beta_t: float, onset_rate: float, t: int) -> Tuple[float, float]:
    """Return (p(I | attack), p(I | no attack))."""
    p0 = alpha if I else 1.0 - alpha
    started = onset_cdf(onset_rate, t)
    p1 = ((1.0 - beta_t) if I else beta_t) * started + p0 * (1.0 - started)
    return p1, p0


def update(bs: BeliefState, I: int) -> BeliefState:
    p1, p0 = likelihoods(I, bs.alpha, bs.beta, bs.onset_rate, bs.t)
    evidence = bs.d * p1 + (1.0 - bs.d) * p0
    if evidence <= 0.0:
        get_logger().warning(f"Both alarm likelihoods vanished at t={bs.t}, belief left unchanged")
        return replace(bs, degenerate_updates=bs.degenerate_updates + 1)
    d = bs.d * p1 / evidence
    return replace(bs, d=float(np.clip(d, bs.clamp, 1.0 - bs.clamp)))


class BeliefTracker:
    """Runs the Type-II error and the Bayes update for one episode, one processed sample at a time."""

    def __init__(self, state: BeliefState):
        self.state = state

    @property
    def d(self) -> float:
        return self.state.d

    def observe(self, I: int, schedule: WatermarkSchedule, t: int, detector: DetectorConfig, B) -> BeliefState:
        beta = type2_error(schedule, detector.Q, B, detector.threshold, self.state.onset_rate, t, self.state.w_beta)
        self.state = update(replace(self.state, t=t, beta=beta), I)
        return self.state
