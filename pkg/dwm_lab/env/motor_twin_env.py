from __future__ import annotations

from typing import Any, List, Tuple

import numpy as np

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.plant import PiecewiseModel, PlantModel, Segment, piecewise_step, step
from dwm_lab.algo.types import EnvironmentKind
from dwm_lab.env.gmm import GmmSurrogate
from dwm_lab.env.mdp import EpisodeConfig
from dwm_lab.env.watermark_env import Trajectory, WatermarkEnvironment


class MotorTwinEnv(WatermarkEnvironment):
    """
    Block-aware stepper-motor twin.

    The plant is a chain of ARX(1,1) operating points, each ending when the output first crosses its
    set-point. The controller is replaced by a per-segment Gaussian mixture over control values. Decisions
    come every decision_block fast steps and only the first processed_block samples of a block reach the
    detector. The episode ends when the last segment completes or the horizon is reached.
    """
    kind = EnvironmentKind.MOTOR_TWIN

    def __init__(self, episode: EpisodeConfig, segments: List[Segment], surrogate: GmmSurrogate):
        super().__init__(episode)
        if len(segments) != len(surrogate):
            raise ConfigurationError(f"{len(segments)} segments but {len(surrogate)} control surrogates")
        self.segments = segments
        self.surrogate = surrogate

    def initial_model(self) -> PlantModel:
        return self.segments[0].model

    def new_trajectory(self, y0: np.ndarray) -> Trajectory:
        return Trajectory(y_true=y0, y_meas=y0.copy(), piecewise=PiecewiseModel(self.segments))

    def active_model(self, traj: Trajectory) -> PlantModel:
        return traj.piecewise.active.model

    def draw_control(self, rng: np.random.Generator) -> Any:
        return rng.random(), rng.standard_normal()

    def control(self, traj: Trajectory, shared: Any) -> np.ndarray:
        index = min(traj.piecewise.active_index, len(self.surrogate) - 1)
        return np.array([self.surrogate[index].sample_from(*shared)])

    def advance(self, traj: Trajectory, u_applied: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, bool]:
        if traj.piecewise.done:
            # profile finished: hold the last operating point
            model = traj.piecewise.active.model
            y_next, _ = step(model, traj.y_true, u_applied, w=model.noise_from(z))
            return y_next, True
        y_next, _, _ = piecewise_step(traj.piecewise, traj.y_true, u_applied, z=z)
        return y_next, traj.piecewise.done
