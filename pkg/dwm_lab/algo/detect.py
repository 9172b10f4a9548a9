from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from dwm_lab.algo.attack import AttackScenario
from dwm_lab.algo.dist import Gx2Params, chi2_cdf, chi2_quantile, gx2_cdf, gx2_from_residual_law, noncentral_chi2_cdf
from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.plant import PlantModel
from dwm_lab.algo.types import EstimatorMode, FlipLaw, LawFamily
from dwm_lab.algo.utils import as_matrix, check_psd
from dwm_lab.algo.watermark import History, MomentState, WatermarkSchedule
from dwm_lab.config_loader import get_settings
from dwm_lab.log import get_logger


@dataclass(frozen=True)
class DetectorConfig:
    """
    Chi-square detector on the residual: g_t = r_t^T Q^{-1} r_t, alarm when g_t > threshold.
    """
    Q: np.ndarray
    threshold: float
    alpha: float
    estimator_mode: EstimatorMode = EstimatorMode.COMPENSATING
    Q_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Q = check_psd(as_matrix(self.Q, "Q"), "Q")
        n = Q.shape[0]
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"detector.alpha must lie in (0, 1), got {self.alpha}")
        if not self.threshold > 0:
            raise ConfigurationError(f"detector.threshold must be positive, got {self.threshold}")
        scale = float(np.trace(Q)) / n
        ridge = get_settings().get("dist.ridge", 1e-15) * scale
        if scale <= 0:
            raise ConfigurationError("Q must not be zero for the chi-square detector")
        if np.min(np.linalg.eigvalsh(Q)) <= ridge:
            get_logger().debug(f"Q is near-singular, adding ridge {ridge:.3e}")
            Q = Q + ridge * np.eye(n)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "estimator_mode", EstimatorMode(self.estimator_mode))
        object.__setattr__(self, "Q_inv", np.linalg.inv(Q))

    @classmethod
    def calibrated(cls, Q, alpha: float, estimator_mode: EstimatorMode = EstimatorMode.COMPENSATING,
                   threshold: Optional[float] = None) -> "DetectorConfig":
        """Build a detector whose threshold is the analytic (1 - alpha) chi-square quantile unless one is given."""
        Q = as_matrix(Q, "Q")
        if not threshold:
            threshold = calibrate_threshold(alpha, Q.shape[0])
        return cls(Q=Q, threshold=float(threshold), alpha=alpha, estimator_mode=estimator_mode)

    @property
    def n(self) -> int:
        return self.Q.shape[0]


def statistic(r: np.ndarray, cfg: DetectorConfig) -> float:
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.size != cfg.n:
        raise ConfigurationError(f"Residual has {r.size} entries, detector expects {cfg.n}")
    return max(float(r @ cfg.Q_inv @ r), 0.0)


def alarm(g: float, cfg: DetectorConfig) -> int:
    return int(g > cfg.threshold)


def calibrate_threshold(alpha: float, n: int, mode: str = "analytic", trace: Optional[Sequence[float]] = None) -> float:
    """
    Args:
        alpha: Type-I level.
        n: residual dimension.
        mode: 'analytic' for the chi-square quantile, 'empirical' for the sample quantile of a nominal trace of g.
        trace: nominal test statistics, required in empirical mode.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    if mode == "analytic":
        return chi2_quantile(1.0 - alpha, n)
    if mode == "empirical":
        if trace is None or len(trace) == 0:
            raise ConfigurationError("Empirical threshold calibration needs a non-empty nominal trace")
        return float(np.quantile(np.asarray(trace, dtype=float), 1.0 - alpha))
    raise ConfigurationError(f"Unknown calibration mode: {mode}")


def estimate_with_mode(mode: EstimatorMode, model: PlantModel, y_prev: np.ndarray, u_prev: np.ndarray,
                       u_sent_prev: np.ndarray, phi_prev: np.ndarray) -> np.ndarray:
    """
    One-step prediction of y_t under each estimator variant.

    u_prev is the controller output, u_sent_prev the input the estimator sees leaving the controller
    (watermark and any flip included), phi_prev the watermark.
    """
    y_prev = np.asarray(y_prev, dtype=float).reshape(-1)
    mode = EstimatorMode(mode)
    if mode == EstimatorMode.COMPENSATING:
        return model.A @ y_prev + model.B @ np.asarray(u_sent_prev, dtype=float).reshape(-1)
    if mode in (EstimatorMode.NONCOMPENSATING, EstimatorMode.MODEL_ONLY):
        return model.A @ y_prev + model.B @ np.asarray(u_prev, dtype=float).reshape(-1)
    # frozen flip: the estimator knows u is negated and assumes phi passes unflipped
    return model.A @ y_prev - model.B @ np.asarray(u_prev, dtype=float).reshape(-1) + model.B @ np.asarray(phi_prev, dtype=float).reshape(-1)


@dataclass(frozen=True)
class ResidualLaw:
    """
    Gaussian residual law r ~ N(mean, cov) and the induced law of g = r^T Q^{-1} r.

    lam is the noncentrality m^T Q^{-1} m that governs g; lam_unweighted is m^T m.
    """
    mean: np.ndarray
    cov: np.ndarray
    Q: np.ndarray
    family: LawFamily
    params: Gx2Params
    lam: float = 0.0
    lam_unweighted: float = 0.0

    @property
    def n(self) -> int:
        return self.mean.size

    def cdf(self, x: float) -> float:
        if x < 0:
            return 0.0
        if self.family == LawFamily.CENTRAL:
            return chi2_cdf(x, self.n)
        if self.family == LawFamily.NONCENTRAL:
            return noncentral_chi2_cdf(x, self.n, self.lam)
        return gx2_cdf(self.params, x).value


def residual_law(m, S, Q) -> ResidualLaw:
    m = np.atleast_1d(np.asarray(m, dtype=float)).reshape(-1)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Q_inv = np.linalg.inv(Q)
    lam = float(m @ Q_inv @ m)
    if np.allclose(S, Q, rtol=1e-9, atol=0.0):
        family = LawFamily.CENTRAL if not np.any(m) else LawFamily.NONCENTRAL
    else:
        family = LawFamily.GENERALIZED
    return ResidualLaw(mean=m, cov=S, Q=Q, family=family, params=gx2_from_residual_law(m, S, Q),
                       lam=lam, lam_unweighted=float(m @ m))


def law_nominal_known_wm(phi_prev, B, Q, estimator_mode: EstimatorMode = EstimatorMode.NONCOMPENSATING) -> ResidualLaw:
    """Residual law when the watermark is known but left out of the prediction: r ~ N(B phi, Q)."""
    if EstimatorMode(estimator_mode) != EstimatorMode.NONCOMPENSATING:
        raise ConfigurationError(f"Known-watermark law needs the noncompensating estimator, got {estimator_mode}")
    B = as_matrix(B, "B")
    return residual_law(B @ np.asarray(phi_prev, dtype=float).reshape(-1), Q, Q)


_FLIP_MODES = {
    FlipLaw.FROZEN: EstimatorMode.FROZEN_FLIP,
    FlipLaw.MODEL_ONLY_PRE: EstimatorMode.MODEL_ONLY,
    FlipLaw.MODEL_ONLY_POST: EstimatorMode.MODEL_ONLY,
}


def law_flip(variant: FlipLaw, u_prev, phi_prev, B, Q, estimator_mode: EstimatorMode) -> ResidualLaw:
    """
    Residual law under a flip attack.

    frozen: post-flip input -u - phi seen by the frozen-flip estimator, r ~ N(-2 B phi, Q).
    model_only_pre / model_only_post: model-only estimator, r ~ N(-2 B u + B phi, Q) or N(-2 B u - B phi, Q).
    """
    variant = FlipLaw(variant)
    if EstimatorMode(estimator_mode) != _FLIP_MODES[variant]:
        raise ConfigurationError(f"Flip law '{variant.value}' needs the {_FLIP_MODES[variant].value} estimator, got {estimator_mode}")
    B = as_matrix(B, "B")
    Bu = B @ np.asarray(u_prev, dtype=float).reshape(-1)
    Bphi = B @ np.asarray(phi_prev, dtype=float).reshape(-1)
    if variant == FlipLaw.FROZEN:
        mean = -2.0 * Bphi
    elif variant == FlipLaw.MODEL_ONLY_PRE:
        mean = -2.0 * Bu + Bphi
    else:
        mean = -2.0 * Bu - Bphi
    return residual_law(mean, Q, Q)


def replay_onset_law(ms_t1: MomentState, ms_tau: MomentState, Q) -> ResidualLaw:
    """At the onset: m = mu_{t1} - mu_tau, S = W_{t1} + Z_{t1} + Y_tau + Z_tau."""
    return residual_law(ms_t1.mu - ms_tau.mu, ms_t1.W + ms_t1.Z + ms_tau.Y + ms_tau.Z, Q)


def replay_post_onset_law(U_recorded, U_live, B, Q) -> ResidualLaw:
    """After the onset: m = 0, S = Q + B (U_{t-dt-1} + U_{t-1}) B^T."""
    B = as_matrix(B, "B")
    Q = as_matrix(Q, "Q")
    S = Q + B @ (as_matrix(U_recorded, "U") + as_matrix(U_live, "U")) @ B.T
    return residual_law(np.zeros(Q.shape[0]), S, Q)


def law_replay(t: int, scenario: AttackScenario, moments: History[MomentState], schedule: WatermarkSchedule,
               Q, B) -> ResidualLaw:
    if t < scenario.onset:
        raise ConfigurationError(f"Replay law requested at t={t} before the onset {scenario.onset}")
    if t == scenario.onset:
        return replay_onset_law(moments.at(scenario.t1), moments.at(scenario.onset), Q)
    return replay_post_onset_law(schedule.cov_at(t - scenario.delta_t - 1), schedule.cov_at(t - 1), B, Q)
