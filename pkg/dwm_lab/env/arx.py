from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from dwm_lab.algo.errors import ConfigurationError

MIN_SAMPLES = 10
_COLUMNS = ("y_t", "u_t")


@dataclass(frozen=True)
class ArxFit:
    """
    ARX(1,1) fit y_{t+1} = A y_t + B u_t + w_t.

    Q is the unbiased residual variance (N - 2 degrees of freedom), fit_residual_variance the
    maximum-likelihood one; stderr_A and stderr_B are the OLS standard errors.
    """
    A: float
    B: float
    Q: float
    fit_residual_variance: float
    stderr_A: float
    stderr_B: float
    samples: int


def fit_arx(y: Sequence[float], u: Sequence[float]) -> ArxFit:
    y = np.asarray(y, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if y.size != u.size:
        raise ConfigurationError(f"fit_arx needs aligned series, got {y.size} outputs and {u.size} inputs")
    if y.size < MIN_SAMPLES:
        raise ConfigurationError(f"fit_arx needs at least {MIN_SAMPLES} samples, got {y.size}")
    X = np.column_stack([y[:-1], u[:-1]])
    target = y[1:]
    for index, name in enumerate(_COLUMNS):
        if not np.any(X[:, index]):
            raise ConfigurationError(f"Regressor column '{name}' is identically zero")
    coef, _, rank, _ = np.linalg.lstsq(X, target, rcond=None)
    if rank < X.shape[1]:
        # the second column is the one that adds no information beyond the first
        raise ConfigurationError(f"Regressor column '{_COLUMNS[1]}' is collinear with '{_COLUMNS[0]}'")
    residuals = target - X @ coef
    dof = max(target.size - X.shape[1], 1)
    rss = float(residuals @ residuals)
    q_unbiased = rss / dof
    covariance = q_unbiased * np.linalg.inv(X.T @ X)
    return ArxFit(
        A=float(coef[0]),
        B=float(coef[1]),
        Q=q_unbiased,
        fit_residual_variance=rss / target.size,
        stderr_A=float(np.sqrt(max(covariance[0, 0], 0.0))),
        stderr_B=float(np.sqrt(max(covariance[1, 1], 0.0))),
        samples=int(target.size),
    )
