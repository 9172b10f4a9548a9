from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from dwm_lab.algo.errors import ConfigurationError, DomainError
from dwm_lab.algo.utils import as_matrix, as_vector, check_psd, psd_factor


@dataclass
class PlantModel:
    """
    Discrete-time stochastic linear plant y_{t+1} = A y_t + B u'_t + w_t, w_t ~ N(0, Q), y_0 ~ N(mu0, Sigma0).
    """
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    mu0: np.ndarray = None
    Sigma0: np.ndarray = None

    def __post_init__(self):
        self.A = as_matrix(self.A, "A")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ConfigurationError(f"A must be square, got {self.A.shape}")
        self.B = as_matrix(self.B, "B")
        if self.B.shape[0] != n:
            raise ConfigurationError(f"B has {self.B.shape[0]} rows, expected {n}")
        self.Q = check_psd(as_matrix(self.Q, "Q", (n, n)), "Q")
        self.mu0 = np.zeros(n) if self.mu0 is None else as_vector(self.mu0, "mu0", n)
        self.Sigma0 = np.zeros((n, n)) if self.Sigma0 is None else check_psd(as_matrix(self.Sigma0, "Sigma0", (n, n)), "Sigma0")
        self._noise_factor = psd_factor(self.Q)
        self._initial_factor = psd_factor(self.Sigma0)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def c(self) -> int:
        return self.B.shape[1]

    def noise_from(self, z: np.ndarray) -> np.ndarray:
        # maps a standard normal draw onto N(0, Q)
        return self._noise_factor @ z

    def draw_noise(self, rng: np.random.Generator) -> np.ndarray:
        return self.noise_from(rng.standard_normal(self.n))

    def draw_initial(self, rng: np.random.Generator) -> np.ndarray:
        return self.mu0 + self._initial_factor @ rng.standard_normal(self.n)


@dataclass
class Controller:
    """Proportional set-point controller u = Kp (setpoint - y)."""
    kp: np.ndarray
    setpoint: np.ndarray

    def __post_init__(self):
        self.kp = as_matrix(self.kp, "kp")
        self.setpoint = as_vector(self.setpoint, "setpoint", self.kp.shape[1])

    def check_against(self, model: PlantModel):
        if self.kp.shape != (model.c, model.n):
            raise ConfigurationError(f"kp has shape {self.kp.shape}, expected {(model.c, model.n)}")


@dataclass
class PlantState:
    y: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.y = as_vector(self.y, "y")
        if not np.all(np.isfinite(self.y)):
            raise DomainError(f"Plant state has non-finite entries at t={self.t}")
        if self.t < 0:
            raise DomainError(f"Time index must be nonnegative, got {self.t}")


@dataclass
class Segment:
    """
    One operating point of a piecewise plant. The segment ends when the scalar output first crosses
    switch_level in the direction of motion observed at segment entry.
    """
    model: PlantModel
    switch_level: float
    controller: Optional[Controller] = None


@dataclass
class PiecewiseModel:
    segments: List[Segment]
    active_index: int = 0
    direction: int = 0
    done: bool = False
    switches: int = 0

    def __post_init__(self):
        if not self.segments:
            raise ConfigurationError("A piecewise model needs at least one segment")
        dims = {(s.model.n, s.model.c) for s in self.segments}
        if len(dims) != 1:
            raise ConfigurationError(f"Segments disagree on dimensions: {sorted(dims)}")

    @property
    def active(self) -> Segment:
        return self.segments[min(self.active_index, len(self.segments) - 1)]

    def reset(self):
        self.active_index = 0
        self.direction = 0
        self.done = False
        self.switches = 0


def _check_vector(x: np.ndarray, size: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != size:
        raise ConfigurationError(f"{name} has {x.size} entries, expected {size}")
    return x


def control(ctrl: Controller, y: np.ndarray) -> np.ndarray:
    y = _check_vector(y, ctrl.kp.shape[1], "y")
    return ctrl.kp @ (ctrl.setpoint - y)


def step(model: PlantModel, y: np.ndarray, u_applied: np.ndarray, rng: np.random.Generator = None,
         w: np.ndarray = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Advance the plant by one sample.

    Args:
        model: the plant.
        y: current output.
        u_applied: the input that reaches the actuator (watermark included).
        rng: source of the process noise; ignored when w is given.
        w: a noise realization to reuse, e.g. for the un-watermarked shadow trajectory.

    Returns:
        (y_next, w) so callers can replay the same noise elsewhere.
    """
    y = _check_vector(y, model.n, "y")
    u_applied = _check_vector(u_applied, model.c, "u")
    if w is None:
        if rng is None:
            raise ConfigurationError("step needs either an rng or a noise realization")
        w = model.draw_noise(rng)
    return model.A @ y + model.B @ u_applied + w, w


def estimate(model: PlantModel, y_prev: np.ndarray, u_applied_prev: np.ndarray) -> np.ndarray:
    y_prev = _check_vector(y_prev, model.n, "y_prev")
    u_applied_prev = _check_vector(u_applied_prev, model.c, "u_prev")
    return model.A @ y_prev + model.B @ u_applied_prev


def residual(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
    if y.shape != y_hat.shape:
        raise ConfigurationError(f"Residual operands differ in size: {y.size} vs {y_hat.size}")
    return y - y_hat


def piecewise_step(pw: PiecewiseModel, y: np.ndarray, u: np.ndarray, rng: np.random.Generator = None,
                   z: np.ndarray = None) -> Tuple[np.ndarray, np.ndarray, bool]:
    """
    Step the active segment and advance to the next one on the first crossing of its switch level.

    z is an optional standard normal draw; each segment maps it through its own Q so trajectories on different
    segments can still share one noise realization. Crossing the last segment's level marks the model done
    instead of switching.
    """
    if pw.done:
        raise DomainError("Piecewise profile is exhausted")
    segment = pw.active
    y = _check_vector(y, segment.model.n, "y")
    if pw.direction == 0:
        pw.direction = 1 if y[0] <= segment.switch_level else -1
    if z is None:
        if rng is None:
            raise ConfigurationError("piecewise_step needs either an rng or a standard normal draw")
        z = rng.standard_normal(segment.model.n)
    y_next, w = step(segment.model, y, u, w=segment.model.noise_from(z))

    crossed = y_next[0] >= segment.switch_level if pw.direction > 0 else y_next[0] <= segment.switch_level
    if not crossed:
        return y_next, w, False
    if pw.active_index + 1 >= len(pw.segments):
        pw.done = True
        return y_next, w, False
    pw.active_index += 1
    pw.switches += 1
    next_level = pw.active.switch_level
    pw.direction = 1 if y_next[0] <= next_level else -1
    return y_next, w, True
