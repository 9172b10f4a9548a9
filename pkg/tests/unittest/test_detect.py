import numpy as np
import pytest
from scipy import stats

from dwm_lab.algo.attack import AttackScenario
from dwm_lab.algo.detect import (DetectorConfig, alarm, calibrate_threshold, estimate_with_mode, law_flip,
                                 law_nominal_known_wm, law_replay, replay_post_onset_law, residual_law, statistic)
from dwm_lab.algo.dist import chi2_cdf
from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.plant import PlantModel, step
from dwm_lab.algo.types import AttackKind, EstimatorMode, FlipLaw, LawFamily
from dwm_lab.algo.watermark import History, MomentState, WatermarkSchedule, propagate_moments

MTC_Q = 1.3741e-13
MTC_B = 0.010


class TestDetector:
    def test_statistic_and_strict_alarm(self):
        cfg = DetectorConfig(Q=[[4.0]], threshold=1.0, alpha=0.1)
        g = statistic(np.array([2.0]), cfg)
        assert g == pytest.approx(1.0)
        assert alarm(g, cfg) == 0
        assert alarm(1.0001, cfg) == 1

    def test_statistic_size_check(self):
        cfg = DetectorConfig(Q=np.eye(2), threshold=1.0, alpha=0.1)
        with pytest.raises(ConfigurationError):
            statistic(np.zeros(1), cfg)

    @pytest.mark.parametrize("kwargs", [
        {"Q": [[1.0]], "threshold": 0.0, "alpha": 0.1},
        {"Q": [[1.0]], "threshold": 1.0, "alpha": 1.0},
        {"Q": [[0.0]], "threshold": 1.0, "alpha": 0.1},
    ])
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ConfigurationError):
            DetectorConfig(**kwargs)

    def test_calibrated_threshold(self):
        cfg = DetectorConfig.calibrated([[MTC_Q]], alpha=0.005)
        assert cfg.threshold == pytest.approx(stats.chi2.ppf(0.995, 1), rel=1e-9)
        fixed = DetectorConfig.calibrated([[MTC_Q]], alpha=0.005, threshold=16.0)
        assert fixed.threshold == 16.0

    def test_empirical_calibration(self):
        trace = np.random.default_rng(0).chisquare(1, 5000)
        assert calibrate_threshold(0.05, 1, mode="empirical", trace=trace) == pytest.approx(np.quantile(trace, 0.95))
        with pytest.raises(ConfigurationError):
            calibrate_threshold(0.05, 1, mode="empirical")
        with pytest.raises(ConfigurationError):
            calibrate_threshold(0.05, 1, mode="bootstrap")

    def test_nominal_statistic_follows_chi_square(self):
        cfg = DetectorConfig.calibrated([[MTC_Q]], alpha=0.005)
        rng = np.random.default_rng(2024)
        g = np.array([statistic(np.sqrt(MTC_Q) * rng.standard_normal(1), cfg) for _ in range(10000)])
        assert stats.kstest(g, stats.chi2(1).cdf).pvalue > 0.001
        assert np.mean(g > cfg.threshold) == pytest.approx(0.005, abs=0.003)


class TestEstimatorModes:
    def setup_method(self):
        self.model = PlantModel(A=[[1.0]], B=[[0.5]], Q=[[1.0]])
        self.y_prev = np.array([2.0])
        self.u = np.array([1.0])
        self.phi = np.array([0.2])

    def test_compensating_uses_sent_input(self):
        y_hat = estimate_with_mode(EstimatorMode.COMPENSATING, self.model, self.y_prev, self.u, self.u + self.phi, self.phi)
        assert np.allclose(y_hat, [2.6])

    def test_noncompensating_and_model_only_ignore_watermark(self):
        for mode in (EstimatorMode.NONCOMPENSATING, EstimatorMode.MODEL_ONLY):
            y_hat = estimate_with_mode(mode, self.model, self.y_prev, self.u, -self.u, self.phi)
            assert np.allclose(y_hat, [2.5])

    def test_frozen_flip_residual_is_twice_the_watermark(self):
        u_sent = -self.u - self.phi
        y, _ = step(self.model, self.y_prev, u_sent, w=np.zeros(1))
        y_hat = estimate_with_mode(EstimatorMode.FROZEN_FLIP, self.model, self.y_prev, self.u, u_sent, self.phi)
        law = law_flip(FlipLaw.FROZEN, self.u, self.phi, self.model.B, self.model.Q, EstimatorMode.FROZEN_FLIP)
        assert np.allclose(y - y_hat, law.mean)
        assert np.allclose(law.mean, [-0.2])


class TestResidualLaws:
    def test_family_selection(self):
        assert residual_law(np.zeros(1), [[1.0]], [[1.0]]).family == LawFamily.CENTRAL
        assert residual_law(np.ones(1), [[1.0]], [[1.0]]).family == LawFamily.NONCENTRAL
        assert residual_law(np.zeros(1), [[2.0]], [[1.0]]).family == LawFamily.GENERALIZED

    def test_known_watermark_law(self):
        law = law_nominal_known_wm([0.2], [[0.5]], [[0.04]])
        assert law.family == LawFamily.NONCENTRAL
        assert np.allclose(law.mean, [0.1])
        assert law.lam == pytest.approx(0.25)
        with pytest.raises(ConfigurationError):
            law_nominal_known_wm([0.2], [[0.5]], [[0.04]], EstimatorMode.COMPENSATING)

    def test_model_only_flip_laws(self):
        pre = law_flip(FlipLaw.MODEL_ONLY_PRE, [1.0], [0.2], [[0.5]], [[1.0]], EstimatorMode.MODEL_ONLY)
        post = law_flip(FlipLaw.MODEL_ONLY_POST, [1.0], [0.2], [[0.5]], [[1.0]], EstimatorMode.MODEL_ONLY)
        assert np.allclose(pre.mean, [-0.9])
        assert np.allclose(post.mean, [-1.1])
        with pytest.raises(ConfigurationError):
            law_flip(FlipLaw.FROZEN, [1.0], [0.2], [[0.5]], [[1.0]], EstimatorMode.MODEL_ONLY)

    def test_replay_post_onset_law_scales_chi_square(self):
        U = 1e-4
        law = replay_post_onset_law([[U]], [[U]], [[MTC_B]], [[MTC_Q]])
        scale = (MTC_Q + 2 * MTC_B ** 2 * U) / MTC_Q
        assert law.family == LawFamily.GENERALIZED
        assert np.allclose(law.cov, [[MTC_Q * scale]])
        threshold = stats.chi2.ppf(0.995, 1)
        assert law.cdf(threshold) == pytest.approx(chi2_cdf(threshold / scale, 1), abs=1e-9)

    def test_replay_without_watermark_is_nominal(self):
        law = replay_post_onset_law([[0.0]], [[0.0]], [[MTC_B]], [[MTC_Q]])
        assert law.family == LawFamily.CENTRAL

    def test_law_replay_dispatch(self):
        model = PlantModel(A=[[1.0]], B=[[MTC_B]], Q=[[MTC_Q]])
        schedule = WatermarkSchedule(c=1)
        moments = History()
        moments.append(MomentState.initial(model))
        for t in range(6):
            schedule.record(np.array([[1e-4]]), np.zeros(1))
            moments.append(propagate_moments(moments.at(t), model, [0.0], [[1e-4]]))
        scenario = AttackScenario(kind=AttackKind.REPLAY, onset=4, duration=2, delta_t=2)
        onset = law_replay(4, scenario, moments, schedule, model.Q, model.B)
        expected = moments.at(2).W + moments.at(2).Z + moments.at(4).Y + moments.at(4).Z
        assert np.allclose(onset.cov, expected)
        after = law_replay(5, scenario, moments, schedule, model.Q, model.B)
        assert np.allclose(after.cov, model.Q + 2e-4 * model.B ** 2)
        with pytest.raises(ConfigurationError):
            law_replay(3, scenario, moments, schedule, model.Q, model.B)
