from __future__ import annotations

from typing import Any, Tuple

import numpy as np

from dwm_lab.algo.plant import Controller, PlantModel, control, step
from dwm_lab.algo.types import EnvironmentKind
from dwm_lab.env.mdp import EpisodeConfig
from dwm_lab.env.watermark_env import Trajectory, WatermarkEnvironment


class MtcTwinEnv(WatermarkEnvironment):
    """
    Digital twin of the machine-tool controller loop: a linear plant under proportional set-point control,
    one decision per fast step.
    """
    kind = EnvironmentKind.MTC_TWIN

    def __init__(self, episode: EpisodeConfig, model: PlantModel, controller: Controller):
        super().__init__(episode)
        controller.check_against(model)
        self.model = model
        self.controller = controller

    def initial_model(self) -> PlantModel:
        return self.model

    def new_trajectory(self, y0: np.ndarray) -> Trajectory:
        return Trajectory(y_true=y0, y_meas=y0.copy())

    def active_model(self, traj: Trajectory) -> PlantModel:
        return self.model

    def control(self, traj: Trajectory, shared: Any) -> np.ndarray:
        return control(self.controller, traj.y_meas)

    def advance(self, traj: Trajectory, u_applied: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, bool]:
        y_next, _ = step(self.model, traj.y_true, u_applied, w=self.model.noise_from(z))
        return y_next, False


class CustomEnv(MtcTwinEnv):
    """User-defined linear plant with the same loop structure as the machine-tool twin."""
    kind = EnvironmentKind.CUSTOM
