from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.log import get_logger

VARIANCE_FLOOR = 1e-10
MIN_SAMPLES = 10


@dataclass(frozen=True)
class GmmSegment:
    """One-dimensional Gaussian mixture p(u) = sum_k weights_k N(means_k, variances_k)."""
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        means = np.asarray(self.means, dtype=float).reshape(-1)
        variances = np.asarray(self.variances, dtype=float).reshape(-1)
        if not weights.size == means.size == variances.size or weights.size == 0:
            raise ConfigurationError("GMM weights, means and variances must be non-empty and equally long")
        if np.any(weights <= 0) or not np.isclose(np.sum(weights), 1.0, atol=1e-6):
            raise ConfigurationError(f"GMM weights must be positive and sum to 1, got {weights.tolist()}")
        if np.any(variances <= 0):
            raise ConfigurationError("GMM variances must be positive")
        object.__setattr__(self, "weights", weights / np.sum(weights))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "_cumulative", np.cumsum(self.weights))

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def mean(self) -> float:
        return float(np.sum(self.weights * self.means))

    @property
    def variance(self) -> float:
        return float(np.sum(self.weights * (self.variances + self.means ** 2)) - self.mean ** 2)

    def sample_from(self, uniform: float, z: float) -> float:
        """Map one uniform (component choice) and one standard normal draw onto a sample."""
        k = min(int(np.searchsorted(self._cumulative, uniform, side="right")), self.n_components - 1)
        return float(self.means[k] + np.sqrt(self.variances[k]) * z)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        uniforms = rng.random(size)
        normals = rng.standard_normal(size)
        return np.array([self.sample_from(u, z) for u, z in zip(uniforms, normals)])

    def to_dict(self) -> dict:
        return {
            "gmm_weights": self.weights.tolist(),
            "gmm_means": self.means.tolist(),
            "gmm_variances": self.variances.tolist(),
        }


@dataclass(frozen=True)
class GmmSurrogate:
    """Per-segment control surrogate of the motor controller."""
    segments: Tuple[GmmSegment, ...]

    def __getitem__(self, index: int) -> GmmSegment:
        return self.segments[index]

    def __len__(self) -> int:
        return len(self.segments)


def fit_gmm(samples: Sequence[float], max_components: int, seed: int = 0) -> GmmSegment:
    """
    Fit 1-D mixtures with K = 1..max_components components by EM and keep the one with the lowest BIC.

    Args:
        samples: control samples of one segment.
        max_components: largest K tried.
        seed: EM initialization seed.

    Returns:
        GmmSegment with variances floored at 1e-10.
    """
    X = np.asarray(samples, dtype=float).reshape(-1, 1)
    if X.shape[0] < MIN_SAMPLES:
        raise ConfigurationError(f"fit_gmm needs at least {MIN_SAMPLES} samples, got {X.shape[0]}")
    if max_components < 1:
        raise ConfigurationError(f"max_components must be >= 1, got {max_components}")
    distinct = np.unique(X).size
    best, lowest_bic = None, np.inf
    bics: List[float] = []
    for n_components in range(1, min(max_components, distinct) + 1):
        gmm = GaussianMixture(n_components=n_components, covariance_type="full", tol=1e-8,
                              reg_covar=VARIANCE_FLOOR, max_iter=1000, n_init=1, random_state=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            gmm.fit(X)
        bics.append(gmm.bic(X))
        if bics[-1] < lowest_bic:
            lowest_bic, best = bics[-1], gmm
    get_logger().debug(f"GMM BIC by component count: {bics}")
    return GmmSegment(
        weights=best.weights_,
        means=best.means_.reshape(-1),
        variances=np.maximum(best.covariances_.reshape(-1), VARIANCE_FLOOR),
    )
