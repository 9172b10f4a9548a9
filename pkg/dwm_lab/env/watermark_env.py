from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from dwm_lab.algo.attack import (AttackScenario, RecordingBuffer, flip_control, inject_measurement, override_control,
                                 replay_measurement)
from dwm_lab.algo.belief import BeliefState, BeliefTracker
from dwm_lab.algo.detect import DetectorConfig, alarm, estimate_with_mode, statistic
from dwm_lab.algo.dist import chi2_cdf
from dwm_lab.algo.errors import DomainError
from dwm_lab.algo.plant import PiecewiseModel, PlantModel, residual
from dwm_lab.algo.types import AttackKind, EnvironmentKind
from dwm_lab.algo.utils import make_rng
from dwm_lab.algo.watermark import History, MomentState, WatermarkSchedule, draw, inject, propagate_moments
from dwm_lab.env.mdp import TRACE_COLUMNS, EpisodeConfig, EpisodeResult, MdpAction, MdpState, reward_step
from dwm_lab.log import get_logger

Policy = Callable[[MdpState], Any]


def zero_policy(state: MdpState) -> float:
    return 0.0


@dataclass
class Trajectory:
    """One closed loop: the true plant output, what the sensor channel delivers, and the piecewise position."""
    y_true: np.ndarray
    y_meas: np.ndarray
    piecewise: Optional[PiecewiseModel] = None
    done: bool = False


class _Rollout:
    """
    Fast-time simulation of one episode: the watermarked loop, its un-watermarked shadow (same noise, same
    adversary) and the detector and belief fed with the processed samples.
    """

    def __init__(self, env: "WatermarkEnvironment", scenario: AttackScenario, streams: Dict[str, np.random.Generator],
                 recording: Optional[RecordingBuffer] = None, with_shadow: bool = True):
        self.env = env
        self.scenario = scenario
        self.recording = recording
        self.plant_rng = streams["plant"]
        self.watermark_rng = streams["watermark"]
        self.control_rng = streams["control"]
        model = env.initial_model()
        self.n, self.c = model.n, model.c
        y0 = model.draw_initial(streams["initial"])
        self.real = env.new_trajectory(y0)
        self.shadow = env.new_trajectory(y0.copy()) if with_shadow else None
        self.schedule = WatermarkSchedule(self.c, horizon=env.episode.horizon + 1)
        self.moments: History[MomentState] = History(env.episode.horizon + 1)
        self.moments.append(MomentState.initial(model))
        belief = env.episode.belief
        self.belief = BeliefTracker(BeliefState.initial(belief.prior, belief.onset_rate,
                                                        env.effective_alpha(model), belief.w_beta, belief.clamp))
        self.t = 0
        self.energy = 0.0
        self.deviation = 0.0
        self.alarms = 0
        self.last_processed_y = self.real.y_meas.copy()

    @property
    def done(self) -> bool:
        return self.real.done or self.t >= self.env.episode.horizon

    def state(self) -> MdpState:
        return MdpState(y=self.last_processed_y.copy(), d=self.belief.d)

    def _command(self, u: np.ndarray, phi: np.ndarray, t: int) -> np.ndarray:
        if self.scenario.is_flip and self.scenario.is_active(t):
            return flip_control(u, phi, self.scenario.flip_variant)
        return inject(u, phi)

    def _measure(self, y_next: np.ndarray, t: int) -> Tuple[np.ndarray, np.ndarray]:
        # returns (true output, sensor reading) at time t
        if self.scenario.kind == AttackKind.INJECTION and self.scenario.is_active(t):
            y_next = inject_measurement(y_next, self.scenario.injection_at(t, self.n))
            return y_next, y_next
        if self.scenario.kind == AttackKind.REPLAY and self.scenario.is_active(t):
            return y_next, replay_measurement(self.recording, self.scenario, t, y_next)
        return y_next, y_next

    def _advance_loop(self, traj: Trajectory, u: np.ndarray, phi: np.ndarray, z: np.ndarray, t: int):
        u_sent = self._command(u, phi, t)
        u_act = override_control(self.scenario, t, u_sent)
        y_next, finished = self.env.advance(traj, u_act, z)
        traj.y_true, y_meas = self._measure(y_next, t + 1)
        traj.done = traj.done or finished
        return u_sent, y_meas

    def fast_step(self, U: np.ndarray, processed: bool) -> Optional[Dict[str, Any]]:
        env, t = self.env, self.t
        model = env.active_model(self.real)
        shared = env.draw_control(self.control_rng)
        u = env.control(self.real, shared)
        phi = draw(U, self.watermark_rng, self.schedule)
        z = self.plant_rng.standard_normal(self.n)
        self.moments.append(propagate_moments(self.moments.at(t), model, u, U))

        y_prev_meas = self.real.y_meas
        u_sent, y_meas = self._advance_loop(self.real, u, phi, z, t)
        self.real.y_meas = y_meas

        if self.shadow is not None:
            if not self.shadow.done:
                u_shadow = env.control(self.shadow, shared)
                _, self.shadow.y_meas = self._advance_loop(self.shadow, u_shadow, np.zeros(self.c), z, t)
            y_wom = self.shadow.y_true
        else:
            y_wom = self.real.y_true

        self.energy += float(np.sum(np.abs(phi)))
        self.deviation += float(np.linalg.norm(y_wom - self.real.y_true))
        self.t += 1
        if not processed:
            return None

        detector = env.detector_for(model)
        y_hat = estimate_with_mode(detector.estimator_mode, model, y_prev_meas, u, u_sent, phi)
        g = statistic(residual(y_meas, y_hat), detector)
        I = alarm(g, detector)
        self.alarms += I
        belief = self.belief.observe(I, self.schedule, t + 1, detector, model.B)
        reward = reward_step(phi, y_wom, self.real.y_true, belief.d, env.episode.weights)
        self.last_processed_y = y_meas.copy()
        return {
            "t": t + 1,
            "y": float(self.real.y_true[0]),
            "y_wom": float(y_wom[0]),
            "u": float(u[0]),
            "phi": float(phi[0]),
            "U": float(np.trace(U) / self.c),
            "g": g,
            "I": I,
            "d": belief.d,
            "reward": reward,
            "attack_active": int(self.scenario.is_active(t + 1)),
        }

    def play_block(self, U: np.ndarray) -> List[Dict[str, Any]]:
        rows = []
        for k in range(self.env.episode.decision_block):
            if self.done:
                break
            row = self.fast_step(U, processed=k < self.env.episode.processed_block)
            if row is not None:
                rows.append(row)
        return rows


class WatermarkEnvironment(ABC):
    """
    Decision process over watermark covariances. State (y, d), action U held for one decision block,
    reward summed over the processed samples of the block.
    """
    kind: EnvironmentKind

    def __init__(self, episode: EpisodeConfig):
        self.episode = episode
        self._detectors: Dict[int, DetectorConfig] = {}
        self._rollout: Optional[_Rollout] = None
        self._rows: List[Dict[str, Any]] = []
        self._rewards: List[float] = []
        self._decisions = 0
        self.recording: Optional[RecordingBuffer] = None

    @abstractmethod
    def initial_model(self) -> PlantModel:
        pass

    @abstractmethod
    def new_trajectory(self, y0: np.ndarray) -> Trajectory:
        pass

    @abstractmethod
    def active_model(self, traj: Trajectory) -> PlantModel:
        pass

    @abstractmethod
    def control(self, traj: Trajectory, shared: Any) -> np.ndarray:
        pass

    @abstractmethod
    def advance(self, traj: Trajectory, u_applied: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, bool]:
        """Step the true plant of traj with a shared standard normal draw z; returns (y_next, profile finished)."""
        pass

    def draw_control(self, rng: np.random.Generator) -> Any:
        """Randomness shared by every loop's controller at one fast step."""
        return None

    @property
    def c(self) -> int:
        return self.initial_model().c

    @property
    def observation_dim(self) -> int:
        return self.initial_model().n + 1

    def detector_for(self, model: PlantModel) -> DetectorConfig:
        key = id(model)
        if key not in self._detectors:
            setup = self.episode.detector
            self._detectors[key] = DetectorConfig.calibrated(model.Q, setup.alpha, setup.estimator_mode,
                                                             threshold=setup.threshold or None)
        return self._detectors[key]

    def effective_alpha(self, model: PlantModel) -> float:
        """Type-I level implied by the detector threshold; equals detector.alpha when the threshold is calibrated."""
        detector = self.detector_for(model)
        return float(min(max(1.0 - chi2_cdf(detector.threshold, detector.n), 1e-300), 1.0 - 1e-12))

    def _streams(self, seed: int, replication: int, recording: bool = False) -> Dict[str, np.random.Generator]:
        if recording:
            return {
                "plant": make_rng(seed, "recording", replication, 0),
                "watermark": make_rng(seed, "recording", replication, 1),
                "initial": make_rng(seed, "recording", replication, 2),
                "control": make_rng(seed, "recording", replication, 3),
            }
        return {name: make_rng(seed, name, replication) for name in ("plant", "watermark", "initial", "control")}

    def _record(self, seed: int, replication: int, policy: Policy) -> RecordingBuffer:
        """
        Run one attack-free episode on an independent noise stream and keep every sensor reading, so a replay
        adversary can feed it back. The recording draws from its own control stream, so a stochastic controller
        issues different commands than in the live episode.
        """
        rollout = _Rollout(self, AttackScenario(), self._streams(seed, replication, recording=True), with_shadow=False)
        buffer = RecordingBuffer(start=0)
        buffer.append(rollout.real.y_meas)
        while rollout.t < self.episode.horizon:
            U = MdpAction.of(policy(rollout.state()), rollout.c).U
            for k in range(self.episode.decision_block):
                if rollout.t >= self.episode.horizon:
                    break
                rollout.fast_step(U, processed=k < self.episode.processed_block)
                buffer.append(rollout.real.y_meas)
        return buffer

    def reset(self, seed: Optional[int] = None, replication: Optional[int] = None,
              recording_policy: Optional[Policy] = None) -> MdpState:
        seed = self.episode.seed if seed is None else seed
        replication = self.episode.replication if replication is None else replication
        scenario = self.episode.scenario
        self.recording = None
        if scenario.kind == AttackKind.REPLAY:
            self.recording = self._record(seed, replication, recording_policy or zero_policy)
        self._rollout = _Rollout(self, scenario, self._streams(seed, replication), recording=self.recording)
        self._rows = []
        self._rewards = []
        self._decisions = 0
        return self._rollout.state()

    def step_decision(self, action) -> Tuple[MdpState, float, bool, Dict[str, Any]]:
        if self._rollout is None:
            raise DomainError("step_decision called before reset")
        if self._rollout.done:
            raise DomainError("Episode is over, call reset")
        U = (action if isinstance(action, MdpAction) else MdpAction.of(action, self._rollout.c)).U
        rows = self._rollout.play_block(U)
        self._rows.extend(rows)
        self._decisions += 1
        reward = float(sum(row["reward"] for row in rows))
        self._rewards.append(reward)
        info = {
            "t": self._rollout.t,
            "processed": len(rows),
            "alarms": int(sum(row["I"] for row in rows)),
            "decision": self._decisions,
        }
        return self._rollout.state(), reward, self._rollout.done, info

    def result(self) -> EpisodeResult:
        rollout = self._rollout
        trace = pd.DataFrame(self._rows, columns=TRACE_COLUMNS)
        return EpisodeResult(trace=trace, total_return=float(sum(self._rewards)), decision_epochs=self._decisions,
                             fast_steps=rollout.t, onset=self.episode.scenario.onset, rewards=list(self._rewards),
                             energy=rollout.energy, degradation=rollout.deviation / max(rollout.t, 1))

    def run_episode(self, policy: Policy, seed: Optional[int] = None, replication: Optional[int] = None,
                    recording_policy: Optional[Policy] = None) -> EpisodeResult:
        """Roll out a policy for one episode; the replay recording uses recording_policy, by default the same policy."""
        state = self.reset(seed, replication, recording_policy or policy)
        done = False
        while not done:
            state, _, done, _ = self.step_decision(policy(state))
        result = self.result()
        get_logger().debug(f"{self.kind.value} episode: {result.decision_epochs} decisions, {result.fast_steps} fast steps, "
                           f"return {result.total_return:.4f}")
        return result
