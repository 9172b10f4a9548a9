import os
from functools import partial

import numpy as np
import pytest
from scipy import stats

from dwm_lab.algo.attack import flip_control
from dwm_lab.algo.belief import type2_error
from dwm_lab.algo.detect import DetectorConfig, estimate_with_mode, law_flip, replay_post_onset_law, statistic
from dwm_lab.algo.dist import Gx2Params, gx2_cdf
from dwm_lab.algo.metrics import arl0
from dwm_lab.algo.plant import PlantModel, step
from dwm_lab.algo.types import AttackKind, EstimatorMode, FlipLaw, FlipVariant
from dwm_lab.algo.watermark import WatermarkSchedule
from dwm_lab.env import get_environment
from dwm_lab.env.watermark_env import zero_policy
from dwm_lab.log import get_logger, setup_logger
from dwm_lab.run_config import load_run_config
from dwm_lab.tools.episodes import constant_policy
from tests.e2e_tests.e2e_utils import MTC_B, MTC_Q, ONSET, mtc_overrides, requires_e2e

log_level = os.environ.get("LOG_LEVEL", "INFO")
setup_logger(log_level)
logger = get_logger()

pytestmark = requires_e2e


def test_e2e_nominal_run_length_matches_alpha(tmp_path):
    rc = load_run_config(overrides=mtc_overrides(tmp_path, attack={"kind": "none"}))
    traces = [get_environment(rc, seed=11, replication=r).run_episode(zero_policy).alarms for r in range(100)]
    result = arl0(traces)
    logger.info(f"ARL0 {result.mean:.1f} from {result.uncensored} alarms")
    assert result.mean == pytest.approx(200.0, rel=0.15)


def test_e2e_replay_residual_law(tmp_path):
    # watermark sized so the replayed residual variance doubles
    U = MTC_Q / (2 * MTC_B ** 2)
    attacked_steps = 40000
    rc = load_run_config(overrides=mtc_overrides(tmp_path, attack={"kind": "replay"},
                                                 mtc_twin={"horizon": ONSET + attacked_steps}))
    trace = get_environment(rc, seed=3).run_episode(partial(constant_policy, U)).trace
    g = trace["g"][trace["t"] > ONSET].to_numpy()
    assert g.size == attacked_steps
    scale = (MTC_Q + 2 * MTC_B ** 2 * U) / MTC_Q
    assert np.mean(g) == pytest.approx(scale, rel=0.05)

    law = replay_post_onset_law([[U]], [[U]], [[MTC_B]], [[MTC_Q]])
    for x in np.quantile(g, [0.1, 0.3, 0.5, 0.7, 0.9]):
        assert law.cdf(x) == pytest.approx(np.mean(g <= x), abs=0.01)


@pytest.mark.parametrize("U_over_q, alpha", [(1.0, 0.005), (4.0, 0.01), (16.0, 0.05)])
def test_e2e_type2_error_matches_simulated_misses(tmp_path, U_over_q, alpha):
    # onsets are drawn from the prior per replication; the window spans every onset up to t
    t, rho, replications = 40, 0.005, 20000
    U = U_over_q * MTC_Q / MTC_B ** 2
    policy = partial(constant_policy, U)
    onsets = np.random.default_rng(7).geometric(rho, size=replications)

    misses = 0
    for tau in np.unique(onsets):
        attacked = tau <= t
        rc = load_run_config(overrides=mtc_overrides(tmp_path, attack={"kind": "replay", "onset": int(min(tau, t))},
                                                     detector={"alpha": alpha}, mtc_twin={"horizon": t}))
        for r in np.flatnonzero(onsets == tau):
            env = get_environment(rc, seed=5, replication=int(r), attack_kind=None if attacked else AttackKind.NONE)
            trace = env.run_episode(policy).trace
            misses += 1 - int(trace["I"][trace["t"] == t].iloc[0])

    schedule = WatermarkSchedule(c=1)
    for _ in range(t):
        schedule.record(np.array([[U]]), np.zeros(1))
    threshold = DetectorConfig.calibrated([[MTC_Q]], alpha=alpha).threshold
    predicted = type2_error(schedule, [[MTC_Q]], [[MTC_B]], threshold, rho, t, w_beta=t)
    simulated = misses / replications
    logger.info(f"beta_t at U={U:.3g}, alpha={alpha}: predicted {predicted:.4f}, simulated {simulated:.4f}")
    assert simulated == pytest.approx(predicted, abs=0.01)


@pytest.mark.parametrize("variant, flip, mode", [
    (FlipLaw.FROZEN, FlipVariant.POST, EstimatorMode.FROZEN_FLIP),
    (FlipLaw.MODEL_ONLY_PRE, FlipVariant.PRE, EstimatorMode.MODEL_ONLY),
    (FlipLaw.MODEL_ONLY_POST, FlipVariant.POST, EstimatorMode.MODEL_ONLY),
])
def test_e2e_flip_laws(variant, flip, mode):
    model = PlantModel(A=[[1.0]], B=[[0.5]], Q=[[1.0]])
    detector = DetectorConfig.calibrated(model.Q, alpha=0.05, estimator_mode=mode)
    u, phi = np.array([0.8]), np.array([1.1])
    rng = np.random.default_rng(21)
    y_prev = np.array([0.3])
    g = np.empty(20000)
    for i in range(g.size):
        y, _ = step(model, y_prev, flip_control(u, phi, flip), rng=rng)
        g[i] = statistic(y - estimate_with_mode(mode, model, y_prev, u, flip_control(u, phi, flip), phi), detector)
    law = law_flip(variant, u, phi, model.B, model.Q, mode)
    for x in (0.5, 2.0, 5.0, 10.0):
        assert law.cdf(x) == pytest.approx(np.mean(g <= x), abs=0.01)


def test_e2e_generalized_chi_square_against_sampling():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        k = int(rng.integers(1, 5))
        params = Gx2Params(weights=rng.uniform(0.2, 3.0, k), dofs=rng.integers(1, 3, k),
                           noncentralities=rng.uniform(0.0, 2.0, k))
        samples = np.zeros(1_000_000)
        for w, dof, lam in zip(params.weights, params.dofs, params.noncentralities):
            samples += w * rng.noncentral_chisquare(dof, lam, samples.size)
        for x in np.quantile(samples, [0.2, 0.5, 0.8]):
            assert gx2_cdf(params, x).value == pytest.approx(np.mean(samples <= x), abs=2e-3)


def test_e2e_nominal_statistic_is_chi_square(tmp_path):
    rc = load_run_config(overrides=mtc_overrides(tmp_path, attack={"kind": "none"}, mtc_twin={"horizon": 10000}))
    g = get_environment(rc, seed=5).run_episode(partial(constant_policy, 1e-4)).trace["g"].to_numpy()
    assert stats.kstest(g, stats.chi2(1).cdf).pvalue > 0.01
