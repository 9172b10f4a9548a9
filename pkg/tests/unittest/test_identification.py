import numpy as np
import pytest

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.env.arx import fit_arx
from dwm_lab.env.gmm import GmmSegment, fit_gmm


def _simulate(A: float, B: float, q: float, length: int, seed: int):
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, length)
    y = np.zeros(length)
    for t in range(length - 1):
        y[t + 1] = A * y[t] + B * u[t] + np.sqrt(q) * rng.standard_normal()
    return y, u


class TestArx:
    def test_noiseless_recovery(self):
        y, u = _simulate(0.9, 0.5, 0.0, 200, seed=1)
        fit = fit_arx(y, u)
        assert fit.A == pytest.approx(0.9, abs=1e-10)
        assert fit.B == pytest.approx(0.5, abs=1e-10)
        assert fit.Q == pytest.approx(0.0, abs=1e-20)
        assert fit.samples == 199

    def test_noisy_motor_like_segment(self):
        y, u = _simulate(1.0, 0.0108, 9.81e-6, 5000, seed=4)
        fit = fit_arx(y, u)
        assert fit.B == pytest.approx(0.0108, rel=0.05)
        assert fit.A == pytest.approx(1.0, abs=1e-3)
        assert fit.Q == pytest.approx(9.81e-6, rel=0.1)
        assert fit.fit_residual_variance < fit.Q
        assert 0 < fit.stderr_B < 0.001

    def test_misaligned_series(self):
        with pytest.raises(ConfigurationError):
            fit_arx(np.ones(20), np.ones(19))

    def test_too_short(self):
        with pytest.raises(ConfigurationError):
            fit_arx(np.arange(5.0), np.arange(5.0))

    def test_zero_input_column(self):
        with pytest.raises(ConfigurationError, match="u_t"):
            fit_arx(np.arange(20.0), np.zeros(20))

    def test_collinear_columns(self):
        y = np.arange(1.0, 21.0)
        with pytest.raises(ConfigurationError, match="collinear"):
            fit_arx(y, 2 * y)


class TestGmmSegment:
    def test_moments(self):
        segment = GmmSegment([0.5, 0.5], [0.0, 2.0], [1.0, 1.0])
        assert segment.mean == pytest.approx(1.0)
        assert segment.variance == pytest.approx(2.0)
        assert segment.n_components == 2

    def test_sample_from_picks_component_by_uniform(self):
        segment = GmmSegment([0.5, 0.5], [0.0, 2.0], [1.0, 1.0])
        assert segment.sample_from(0.1, 0.0) == 0.0
        assert segment.sample_from(0.9, 1.0) == pytest.approx(3.0)

    def test_sampling_matches_moments(self):
        segment = GmmSegment([0.3, 0.7], [-1.0, 1.0], [0.2, 0.5])
        samples = segment.sample(np.random.default_rng(0), 50000)
        assert np.mean(samples) == pytest.approx(segment.mean, abs=0.02)
        assert np.var(samples) == pytest.approx(segment.variance, rel=0.03)

    @pytest.mark.parametrize("weights, means, variances", [
        ([0.5, 0.6], [0.0, 1.0], [1.0, 1.0]),
        ([1.0], [0.0], [0.0]),
        ([0.5, 0.5], [0.0], [1.0, 1.0]),
        ([], [], []),
    ])
    def test_invalid(self, weights, means, variances):
        with pytest.raises(ConfigurationError):
            GmmSegment(weights, means, variances)

    def test_to_dict(self):
        assert GmmSegment([1.0], [0.5], [0.1]).to_dict() == {"gmm_weights": [1.0], "gmm_means": [0.5],
                                                             "gmm_variances": [0.1]}


class TestFitGmm:
    def test_two_spikes_need_two_components(self):
        rng = np.random.default_rng(3)
        samples = np.concatenate([rng.normal(0.0, 0.01, 500), rng.normal(1.25, 0.01, 500)])
        segment = fit_gmm(samples, max_components=3, seed=0)
        assert segment.n_components >= 2
        assert segment.mean == pytest.approx(0.625, abs=0.02)
        assert np.any(np.abs(segment.means - 1.25) < 0.01)

    def test_single_gaussian(self):
        samples = np.random.default_rng(5).normal(2.0, 0.5, 2000)
        segment = fit_gmm(samples, max_components=3, seed=0)
        assert segment.n_components == 1
        assert segment.means[0] == pytest.approx(2.0, abs=0.05)

    def test_constant_samples_get_the_variance_floor(self):
        segment = fit_gmm(np.full(50, 0.7), max_components=3)
        assert segment.n_components == 1
        assert segment.variances[0] >= 1e-10

    def test_errors(self):
        with pytest.raises(ConfigurationError):
            fit_gmm(np.arange(5.0), max_components=2)
        with pytest.raises(ConfigurationError):
            fit_gmm(np.arange(50.0), max_components=0)
