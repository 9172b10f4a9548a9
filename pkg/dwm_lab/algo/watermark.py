from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Deque, Generic, Optional, TypeVar

import numpy as np

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.plant import PlantModel
from dwm_lab.algo.utils import as_matrix, as_vector, check_psd, psd_factor

T = TypeVar("T")


class History(Generic[T]):
    """
    Append-only time-indexed store keeping at most `horizon` recent entries.
    Index i of the store is absolute time `offset + i`.
    """

    def __init__(self, horizon: Optional[int] = None, start: int = 0):
        self._items: Deque[T] = deque(maxlen=horizon)
        self._start = start
        self._count = 0

    def append(self, item: T):
        self._items.append(item)
        self._count += 1

    @property
    def end(self) -> int:
        """One past the last recorded time index."""
        return self._start + self._count

    @property
    def offset(self) -> int:
        return self.end - len(self._items)

    def covers(self, t: int) -> bool:
        return self.offset <= t < self.end

    def at(self, t: int) -> T:
        if not self.covers(t):
            raise ConfigurationError(f"Time index {t} outside recorded history [{self.offset}, {self.end})")
        return self._items[t - self.offset]

    def __len__(self) -> int:
        return len(self._items)


class WatermarkSchedule:
    """History of the watermark covariances U_t and the signals phi_t drawn with them."""

    def __init__(self, c: int, horizon: Optional[int] = None):
        self.c = c
        self.cov_history: History[np.ndarray] = History(horizon)
        self.signal_history: History[np.ndarray] = History(horizon)

    def cov_at(self, t: int) -> np.ndarray:
        # no watermark before the episode starts
        if t < 0:
            return np.zeros((self.c, self.c))
        return self.cov_history.at(t)

    def signal_at(self, t: int) -> np.ndarray:
        if t < 0:
            return np.zeros(self.c)
        return self.signal_history.at(t)

    def record(self, U: np.ndarray, phi: np.ndarray):
        self.cov_history.append(U)
        self.signal_history.append(phi)

    @property
    def t(self) -> int:
        return self.cov_history.end


def validate_covariance(U, c: Optional[int] = None) -> np.ndarray:
    U = as_matrix(U, "U")
    if c is not None and U.shape != (c, c):
        raise ConfigurationError(f"U has shape {U.shape}, expected {(c, c)}")
    return check_psd(U, "U")


def draw(U, rng: np.random.Generator, schedule: Optional[WatermarkSchedule] = None) -> np.ndarray:
    """
    Draw phi ~ N(0, U). Always consumes c standard normals so the watermark stream stays aligned across policies.
    """
    U = validate_covariance(U, schedule.c if schedule is not None else None)
    z = rng.standard_normal(U.shape[0])
    if U.shape == (1, 1):
        phi = np.sqrt(max(U[0, 0], 0.0)) * z
    else:
        phi = psd_factor(U) @ z
    if schedule is not None:
        schedule.record(U, phi)
    return phi


def inject(u: np.ndarray, phi: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if u.shape != phi.shape:
        raise ConfigurationError(f"Watermark has {phi.size} entries, control has {u.size}")
    return u + phi


@dataclass(frozen=True)
class MomentState:
    """
    Analytic moments of the watermarked output, y_t ~ N(mu_t, Z_t + W_t).

    Z: output covariance induced by the watermark.
    W: covariance from process noise and the initial condition.
    Y: covariance of the one-step prediction, A W_{t-1} A^T.
    """
    Z: np.ndarray
    W: np.ndarray
    Y: np.ndarray
    mu: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, model: PlantModel) -> "MomentState":
        n = model.n
        return cls(Z=np.zeros((n, n)), W=model.Sigma0.copy(), Y=np.zeros((n, n)), mu=model.mu0.copy(), t=0)


def propagate_moments(ms: MomentState, model: PlantModel, ctrl_input, U_t) -> MomentState:
    A, B = model.A, model.B
    U_t = as_matrix(U_t, "U", (model.c, model.c))
    ctrl_input = as_vector(ctrl_input, "u", model.c)
    Y = A @ ms.W @ A.T
    return replace(
        ms,
        Z=A @ ms.Z @ A.T + B @ U_t @ B.T,
        W=Y + model.Q,
        Y=Y,
        mu=A @ ms.mu + B @ ctrl_input,
        t=ms.t + 1,
    )
