from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.types import AttackKind, ControlOverride, FlipVariant


@dataclass(frozen=True)
class AttackScenario:
    """
    What the adversary does and when.

    Measurement attacks (injection, replay) alter y_t for onset <= t <= onset + duration. Control attacks
    (flip, replay override) alter the input sent at the same fast-time indices.
    """
    kind: AttackKind = AttackKind.NONE
    onset: int = 1
    duration: int = 1
    delta_t: int = 0
    injection_level: float = 0.0
    injection_seq: Optional[np.ndarray] = None
    control_override: ControlOverride = ControlOverride.NONE
    custom_control: Sequence[float] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        object.__setattr__(self, "control_override", ControlOverride(self.control_override))
        if self.onset < 1:
            raise ConfigurationError(f"attack.onset must be >= 1, got {self.onset}")
        if self.duration < 1:
            raise ConfigurationError(f"attack.duration must be >= 1, got {self.duration}")
        if self.delta_t < 0 or self.delta_t > self.onset:
            raise ConfigurationError(f"attack.delta_t must lie in [0, onset], got {self.delta_t}")
        if self.control_override == ControlOverride.CUSTOM and len(self.custom_control) == 0:
            raise ConfigurationError("attack.custom_control is empty but attack.control_override is 'custom'")

    @property
    def t1(self) -> int:
        """Start of the replayed segment, onset - delta_t."""
        return self.onset - self.delta_t

    @property
    def end(self) -> int:
        return self.onset + self.duration

    def is_active(self, t: int) -> bool:
        return self.kind != AttackKind.NONE and self.onset <= t <= self.end

    @property
    def is_flip(self) -> bool:
        return self.kind in (AttackKind.FLIP_PRE, AttackKind.FLIP_POST)

    @property
    def flip_variant(self) -> Optional[FlipVariant]:
        return {AttackKind.FLIP_PRE: FlipVariant.PRE, AttackKind.FLIP_POST: FlipVariant.POST}.get(self.kind)

    def injection_at(self, t: int, n: int) -> np.ndarray:
        if self.injection_seq is None:
            return np.full(n, float(self.injection_level))
        seq = np.atleast_2d(np.asarray(self.injection_seq, dtype=float))
        k = t - self.onset
        if not 0 <= k < seq.shape[0]:
            raise ConfigurationError(f"Injection sequence has no entry for t={t} (onset {self.onset}, length {seq.shape[0]})")
        return seq[k].reshape(-1)


@dataclass
class RecordingBuffer:
    """Measurements captured by the adversary during normal operation, starting at time index `start`."""
    start: int = 0
    measurements: List[np.ndarray] = field(default_factory=list)

    def append(self, y: np.ndarray):
        self.measurements.append(np.array(y, dtype=float).reshape(-1))

    @property
    def end(self) -> int:
        return self.start + len(self.measurements)

    def covers(self, first: int, last: int) -> bool:
        return self.start <= first and last < self.end

    def at(self, t: int) -> np.ndarray:
        if not self.start <= t < self.end:
            raise ConfigurationError(f"Replay needs the recording at t={t}, buffer covers [{self.start}, {self.end})")
        return self.measurements[t - self.start]


def flip_control(u: np.ndarray, phi: np.ndarray, variant: FlipVariant) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if FlipVariant(variant) == FlipVariant.PRE:
        return -u + phi
    return -u - phi


def inject_measurement(y: np.ndarray, a: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    a = np.asarray(a, dtype=float).reshape(-1)
    if y.shape != a.shape:
        raise ConfigurationError(f"Injection has {a.size} entries, measurement has {y.size}")
    return y + a


def replay_measurement(buf: RecordingBuffer, scenario: AttackScenario, t: int,
                       y_true: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Return what the sensor channel carries at time t under a replay attack: the recording at t - delta_t
    while the attack is active, the true measurement otherwise.
    """
    if scenario.kind != AttackKind.REPLAY or not scenario.is_active(t):
        if y_true is None:
            raise ConfigurationError(f"Replay adversary inactive at t={t} and no true measurement given")
        return y_true
    return buf.at(t - scenario.delta_t)


def override_control(scenario: AttackScenario, t: int, u_sent: np.ndarray) -> np.ndarray:
    """
    Input reaching the actuator when the adversary manipulates the control channel at time t.
    """
    if not scenario.is_active(t) or scenario.control_override == ControlOverride.NONE:
        return u_sent
    if scenario.control_override == ControlOverride.NEGATE:
        return -np.asarray(u_sent, dtype=float)
    k = t - scenario.onset
    if k >= len(scenario.custom_control):
        raise ConfigurationError(f"attack.custom_control has {len(scenario.custom_control)} entries, needs index {k}")
    return np.full(np.shape(u_sent), float(scenario.custom_control[k]))
