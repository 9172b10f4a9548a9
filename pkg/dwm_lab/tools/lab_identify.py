from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.utils import read_table, write_json
from dwm_lab.env.arx import fit_arx
from dwm_lab.env.gmm import fit_gmm
from dwm_lab.log import get_logger
from dwm_lab.run_config import MotorSegmentSection, RunConfig


def _series(path: str, preferred: str) -> np.ndarray:
    if not path:
        raise ConfigurationError(f"identify.{preferred}_csv is not set")
    if not Path(path).is_file():
        raise ConfigurationError(f"Series file not found: {path}")
    frame: pd.DataFrame = read_table(path)
    column = preferred if preferred in frame.columns else frame.columns[-1]
    return frame[column].to_numpy(dtype=float)


def split_segments(length: int, boundaries: Sequence[int]) -> List[slice]:
    """Cut [0, length) at every boundary; each boundary is the first index of a new segment."""
    edges = [0] + [int(b) for b in boundaries] + [length]
    if any(lo >= hi for lo, hi in zip(edges, edges[1:])):
        raise ConfigurationError(f"identify.boundaries must be strictly increasing inside (0, {length}), "
                                 f"got {list(boundaries)}")
    return [slice(lo, hi) for lo, hi in zip(edges, edges[1:])]


def identify_segments(y: np.ndarray, u: np.ndarray, boundaries: Sequence[int], max_components: int,
                      seed: int = 0) -> List[Dict]:
    """ARX(1,1) parameters, control surrogate and end-of-segment set-point for every operating point."""
    if y.size != u.size:
        raise ConfigurationError(f"Output and input series are misaligned: {y.size} vs {u.size} samples")
    segments = []
    for index, window in enumerate(split_segments(y.size, boundaries)):
        fit = fit_arx(y[window], u[window])
        gmm = fit_gmm(u[window], max_components, seed=seed)
        segment = {"a": fit.A, "b": fit.B, "q": fit.Q, "setpoint": float(y[window][-1]), **gmm.to_dict()}
        MotorSegmentSection.model_validate(segment)
        get_logger().info(f"Segment {index}: A={fit.A:.5g} B={fit.B:.5g} Q={fit.Q:.4g} "
                          f"({fit.samples} samples, {gmm.n_components} GMM components)")
        segments.append(segment)
    return segments


class LabIdentify:
    """
    Fits the motor twin from logged data: an ARX(1,1) model and a GMM control surrogate per operating point.
    The result is a configuration fragment that can be passed back with --config.
    """

    def __init__(self, run_config: RunConfig, args: List[str] = None):
        self.run_config = run_config
        self.args = args or []
        self.output_dir = run_config.output_dir / "identify"

    def run(self) -> Path:
        section = self.run_config.identify
        y = _series(section.y_csv, "y")
        u = _series(section.u_csv, "u")
        segments = identify_segments(y, u, section.boundaries, section.max_components, seed=self.run_config.config.seed)
        path = write_json({"motor_twin": {"segments": segments}}, self.output_dir / section.output)
        get_logger().info(f"Identified {len(segments)} segments, fragment written to {path}")
        return path
