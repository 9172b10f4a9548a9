from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import integrate, optimize, special, stats

from dwm_lab.algo.errors import ConfigurationError, DomainError
from dwm_lab.algo.utils import check_psd, psd_sqrt, symmetrize
from dwm_lab.config_loader import get_settings
from dwm_lab.log import get_logger

# above this Poisson mean the mixture series gets too long and scipy's ncx2 takes over
MAX_SERIES_MEAN = 1e5


@dataclass(frozen=True)
class Gx2Params:
    """
    Weighted sum of independent noncentral chi-squares, sum_i w_i chi2(k_i, lam_i) + offset.
    linear_coef is carried for completeness and must stay 0.
    """
    weights: np.ndarray
    dofs: np.ndarray
    noncentralities: np.ndarray
    linear_coef: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        dofs = np.atleast_1d(np.asarray(self.dofs, dtype=int))
        lam = np.atleast_1d(np.asarray(self.noncentralities, dtype=float))
        if not weights.shape == dofs.shape == lam.shape:
            raise ConfigurationError(f"Generalized chi-square parameters differ in length: {weights.size}, {dofs.size}, {lam.size}")
        if np.any(weights <= 0):
            raise ConfigurationError("Generalized chi-square weights must be positive")
        if np.any(dofs < 1):
            raise ConfigurationError("Generalized chi-square degrees of freedom must be >= 1")
        if np.any(lam < 0):
            raise ConfigurationError("Noncentralities must be nonnegative")
        if self.linear_coef != 0.0:
            raise ConfigurationError("Only quadratic forms without a linear term are supported")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "dofs", dofs)
        object.__setattr__(self, "noncentralities", lam)

    @property
    def k(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class Gx2CdfResult:
    value: float
    used_fallback: bool = False
    abs_error: float = 0.0

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class EigenPair:
    """M = P^T diag(Lambda) P; rows of P are eigenvectors, Lambda sorted descending."""
    P: np.ndarray
    Lambda: np.ndarray


def _check_x(x: float) -> float:
    x = float(x)
    if np.isnan(x) or x < 0:
        raise DomainError(f"CDF argument must be >= 0, got {x}")
    return x


def _check_dof(n) -> int:
    if int(n) != n or n < 1:
        raise DomainError(f"Degrees of freedom must be a positive integer, got {n}")
    return int(n)


def chi2_cdf(x: float, n: int) -> float:
    x = _check_x(x)
    n = _check_dof(n)
    if np.isinf(x):
        return 1.0
    return float(special.gammainc(n / 2.0, x / 2.0))


def chi2_quantile(p: float, n: int) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"Quantile level must lie in (0, 1), got {p}")
    n = _check_dof(n)
    hi = float(max(1.0, n))
    while chi2_cdf(hi, n) < p:
        hi *= 2.0
    return float(optimize.brentq(lambda x: chi2_cdf(x, n) - p, 0.0, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500))


def noncentral_chi2_cdf(x: float, n: int, lam: float) -> float:
    """
    Poisson mixture of central chi-squares, sum_j Pois(j; lam/2) P(n/2 + j, x/2), truncated where the
    Poisson tail mass drops below dist.series_tail.
    """
    x = _check_x(x)
    n = _check_dof(n)
    if lam < 0 or np.isnan(lam):
        raise DomainError(f"Noncentrality must be >= 0, got {lam}")
    if lam == 0.0:
        return chi2_cdf(x, n)
    if np.isinf(x):
        return 1.0
    mean = lam / 2.0
    if mean > MAX_SERIES_MEAN:
        return float(stats.ncx2.cdf(x, n, lam))
    tail = get_settings().get("dist.series_tail", 1e-12)
    lo = int(max(0, stats.poisson.ppf(tail, mean)))
    hi = int(stats.poisson.isf(tail, mean)) + 1
    j = np.arange(lo, hi + 1)
    weights = stats.poisson.pmf(j, mean)
    value = float(np.sum(weights * special.gammainc(n / 2.0 + j, x / 2.0)))
    return min(max(value, 0.0), 1.0)


def _imhof_integrand(u: float, weights: np.ndarray, dofs: np.ndarray, lam: np.ndarray, x: float) -> float:
    if u == 0.0:
        # limit of sin(theta(u)) / (u rho(u)) as u -> 0
        return 0.5 * float(np.sum(weights * (dofs + lam))) - 0.5 * x
    wu = weights * u
    wu2 = wu * wu
    theta = 0.5 * np.sum(dofs * np.arctan(wu) + lam * wu / (1.0 + wu2)) - 0.5 * x * u
    log_rho = np.sum(0.25 * dofs * np.log1p(wu2) + 0.5 * lam * wu2 / (1.0 + wu2))
    return float(np.sin(theta) * np.exp(-log_rho) / u)


def _monte_carlo_cdf(p: Gx2Params, x: float, samples: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    total = np.zeros(samples)
    for w, k, lam in zip(p.weights, p.dofs, p.noncentralities):
        draws = rng.noncentral_chisquare(k, lam, samples) if lam > 0 else rng.chisquare(k, samples)
        total += w * draws
    return float(np.mean(total <= x - p.offset))


def gx2_cdf(p: Gx2Params, x: float) -> Gx2CdfResult:
    """
    CDF of a generalized chi-square variable.

    Equal weights reduce exactly to a scaled noncentral chi-square. Otherwise the characteristic function
    is inverted by Imhof quadrature; when quadrature reports trouble a Monte-Carlo estimate is returned
    with used_fallback set.
    """
    x = float(x)
    shifted = x - p.offset
    if p.k == 0:
        return Gx2CdfResult(1.0 if shifted >= 0 else 0.0)
    if shifted <= 0:
        return Gx2CdfResult(0.0)
    w_max = float(np.max(p.weights))
    if np.allclose(p.weights, w_max, rtol=1e-12, atol=0.0):
        value = noncentral_chi2_cdf(shifted / w_max, int(np.sum(p.dofs)), float(np.sum(p.noncentralities)))
        return Gx2CdfResult(value)

    settings = get_settings()
    weights = p.weights / w_max
    scaled_x = shifted / w_max
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        integral, abs_error = integrate.quad(
            _imhof_integrand, 0.0, np.inf,
            args=(weights, p.dofs.astype(float), p.noncentralities, scaled_x),
            limit=settings.get("dist.quad_limit", 500),
            epsabs=settings.get("dist.quad_abs_tol", 1e-6),
        )
    quad_trouble = any(issubclass(w.category, integrate.IntegrationWarning) for w in caught)
    if quad_trouble or not np.isfinite(integral) or abs_error > settings.get("dist.quad_max_error", 1e-5):
        samples = settings.get("dist.mc_samples", 1_000_000)
        get_logger().warning(f"Imhof quadrature did not converge (abs_error={abs_error:.2e}), "
                             f"falling back to {samples} Monte-Carlo draws")
        value = _monte_carlo_cdf(p, x, samples, settings.get("dist.mc_seed", 0))
        return Gx2CdfResult(value, used_fallback=True, abs_error=abs_error)
    value = 0.5 - integral / np.pi
    return Gx2CdfResult(min(max(value, 0.0), 1.0), abs_error=abs_error)


def symmetric_eig(M: np.ndarray) -> EigenPair:
    M = symmetrize(np.atleast_2d(np.asarray(M, dtype=float)))
    eigvals, eigvecs = np.linalg.eigh(M)
    order = np.argsort(eigvals)[::-1]
    return EigenPair(P=eigvecs[:, order].T, Lambda=eigvals[order])


def _pseudo_inverse_sqrt(S: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    eigvals, eigvecs = np.linalg.eigh(symmetrize(S))
    keep = eigvals > _rank_floor(eigvals)
    inv_sqrt = np.zeros_like(eigvals)
    inv_sqrt[keep] = 1.0 / np.sqrt(eigvals[keep])
    projector = (eigvecs[:, keep]) @ eigvecs[:, keep].T
    return (eigvecs * inv_sqrt) @ eigvecs.T, projector


def _rank_floor(eigvals: np.ndarray) -> float:
    # relative cut-off for treating an eigenvalue as zero
    top = float(np.max(np.abs(eigvals), initial=0.0))
    return top * eigvals.size * np.finfo(float).eps * 10 if top > 0 else np.inf


def gx2_from_residual_law(m: np.ndarray, S: np.ndarray, Q: np.ndarray) -> Gx2Params:
    """
    Law of g = r^T Q^{-1} r for r ~ N(m, S).

    With S^{1/2} Q^{-1} S^{1/2} = P^T diag(Lambda) P and b = P S^{-1/2} m, g is sum_i Lambda_i chi2(1, b_i^2).
    Zero eigen-directions of S are dropped; when S vanishes entirely g is the constant m^T Q^{-1} m.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float)).reshape(-1)
    n = m.size
    S = check_psd(np.atleast_2d(np.asarray(S, dtype=float)), "S")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if S.shape != (n, n) or Q.shape != (n, n):
        raise ConfigurationError(f"Residual law dimensions disagree: m {m.shape}, S {S.shape}, Q {Q.shape}")
    try:
        Q_inv = np.linalg.inv(Q)
    except np.linalg.LinAlgError as e:
        raise ConfigurationError(f"Q must be invertible: {e}")

    S_half = psd_sqrt(S)
    S_inv_half, projector = _pseudo_inverse_sqrt(S)
    if not np.any(projector):
        return Gx2Params(weights=np.array([]), dofs=np.array([], dtype=int), noncentralities=np.array([]),
                         offset=float(m @ Q_inv @ m))
    outside = m - projector @ m
    if np.linalg.norm(outside) > 1e-9 * max(1.0, np.linalg.norm(m)):
        get_logger().warning(f"Residual mean has a component outside range(S) of norm {np.linalg.norm(outside):.3e}; it is dropped")

    eig = symmetric_eig(S_half @ Q_inv @ S_half)
    b = eig.P @ S_inv_half @ m
    keep = eig.Lambda > _rank_floor(eig.Lambda)
    return Gx2Params(weights=eig.Lambda[keep], dofs=np.ones(int(np.sum(keep)), dtype=int), noncentralities=b[keep] ** 2)
