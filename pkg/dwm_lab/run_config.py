from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from dynaconf import Dynaconf
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.algo.types import AttackKind, ControlOverride, EnvironmentKind, EstimatorMode, PolicyKind
from dwm_lab.algo.utils import config_hash, deep_merge
from dwm_lab.config_loader import get_settings
from dwm_lab.log import get_logger

OUTPUT_DIR_ENV = "DWM_LAB_OUTPUT_DIR"
# keys that change where or how fast a run happens, never what it computes
_UNHASHED_KEYS = ("output_dir", "workers", "log_folder", "verbosity_level")
_SECTIONS = ("config", "watermark", "attack", "detector", "belief", "reward", "mtc_twin", "custom", "motor_twin",
             "ddpg", "benchmark", "sweep", "identify", "dist")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)


class ConfigSection(_Section):
    environment: EnvironmentKind = EnvironmentKind.MTC_TWIN
    seed: int = 2024
    replications: int = Field(40, ge=1)
    eval_seed_offset: int = Field(100000, ge=0)
    workers: int = Field(1, ge=1)
    output_dir: str = "runs"
    write_traces: bool = True
    log_folder: str = ""
    verbosity_level: int = Field(0, ge=0, le=2)


class WatermarkSection(_Section):
    policy: PolicyKind = PolicyKind.CONSTANT
    variance: float = Field(2.5e-3, ge=0.0)
    checkpoint: str = ""


class AttackSection(_Section):
    kind: AttackKind = AttackKind.REPLAY
    onset: int = Field(0, ge=0)
    duration: int = Field(0, ge=0)
    delta_t: int = Field(0, ge=0)
    control_override: ControlOverride = ControlOverride.NEGATE
    custom_control: List[float] = Field(default_factory=list)
    injection_level: float = 0.0


class DetectorSection(_Section):
    alpha: float = Field(0.005, gt=0.0, lt=1.0)
    threshold: float = Field(0.0, ge=0.0)
    estimator_mode: EstimatorMode = EstimatorMode.COMPENSATING


class BeliefSection(_Section):
    prior: float = Field(0.05, ge=0.0, le=1.0)
    onset_rate: float = Field(0.0, ge=0.0, le=1.0)
    w_beta: int = Field(0, ge=0)
    clamp: float = Field(1e-12, ge=0.0, lt=0.5)


class RewardSection(_Section):
    w1: float = Field(0.35, ge=0.0)
    w2: float = Field(0.35, ge=0.0)
    w3: float = Field(0.30, ge=0.0)


class _TwinTiming(_Section):
    horizon: int = Field(ge=1)
    decision_block: int = Field(1, ge=1)
    processed_block: int = Field(1, ge=1)
    w_beta: int = Field(ge=1)
    onset: int = Field(ge=1)
    threshold: float = Field(0.0, ge=0.0)
    u_max: float = Field(gt=0.0)
    state_scale: float = Field(1.0, gt=0.0)
    hidden: int = Field(32, ge=1)
    train_episodes: int = Field(ge=1)


class LinearTwinSection(_TwinTiming):
    a: List[List[float]]
    b: List[List[float]]
    q: List[List[float]]
    mu0: List[float]
    sigma0: List[List[float]]
    kp: List[List[float]]
    setpoint: List[float]


class MotorSegmentSection(_Section):
    a: float
    b: float
    q: float = Field(ge=0.0)
    setpoint: float
    gmm_weights: List[float]
    gmm_means: List[float]
    gmm_variances: List[float]


class MotorTwinSection(_TwinTiming):
    mu0: float = 0.0
    sigma0: float = Field(0.0, ge=0.0)
    gmm_max_components: int = Field(3, ge=1)
    segments: List[MotorSegmentSection] = Field(min_length=1)


class DdpgSection(_Section):
    lr: float = Field(1e-3, gt=0.0)
    tau: float = Field(5e-3, ge=0.0, le=1.0)
    gamma: float = Field(0.99, ge=0.0, le=1.0)
    batch_size: int = Field(128, ge=1)
    buffer_size: int = Field(1_000_000, ge=1)
    grad_clip: float = Field(1.0, gt=0.0)
    leaky_slope: float = Field(0.01, ge=0.0)
    rmsprop_rho: float = Field(0.99, gt=0.0, lt=1.0)
    rmsprop_eps: float = Field(1e-8, gt=0.0)
    ou_mu: float = 0.0
    ou_sigma: float = Field(0.99, ge=0.0)
    ou_theta: float = Field(0.15, ge=0.0)
    ou_decay: float = Field(0.995, ge=0.0, le=1.0)
    alpha: float = Field(0.10, gt=0.0, lt=1.0)
    episodes: int = Field(0, ge=0)
    checkpoint_every: int = Field(10, ge=1)
    checkpoint_name: str = "policy.npz"
    normalize_observations: bool = False
    resume: str = ""


class BenchmarkSection(_Section):
    arms: List[str] = Field(default_factory=lambda: ["none", "low", "high", "lqg", "ddpg"])
    low_variance: float = Field(1e-9, ge=0.0)
    high_variance: float = Field(2.5e-3, ge=0.0)
    lqg_variances: List[float] = Field(default_factory=list)

    @field_validator("arms")
    @classmethod
    def _known_arms(cls, arms: List[str]) -> List[str]:
        unknown = sorted(set(arms) - {"none", "low", "high", "lqg", "ddpg"})
        if unknown:
            raise ValueError(f"unknown benchmark arms {unknown}")
        return arms


class SweepSection(_Section):
    variances: List[float] = Field(min_length=1)
    episodes: int = Field(20, ge=1)


class IdentifySection(_Section):
    y_csv: str = ""
    u_csv: str = ""
    boundaries: List[int] = Field(default_factory=list)
    max_components: int = Field(3, ge=1)
    output: str = "identified_segments.json"


class DistSection(_Section):
    quad_limit: int = Field(500, ge=1)
    quad_abs_tol: float = Field(1e-6, gt=0.0)
    quad_max_error: float = Field(1e-5, gt=0.0)
    mc_samples: int = Field(1_000_000, ge=1)
    mc_seed: int = 0
    series_tail: float = Field(1e-12, gt=0.0)
    ridge: float = Field(1e-15, ge=0.0)


class RunConfig(_Section):
    """Validated configuration tree of one lab run."""
    config: ConfigSection
    watermark: WatermarkSection
    attack: AttackSection
    detector: DetectorSection
    belief: BeliefSection
    reward: RewardSection
    mtc_twin: LinearTwinSection
    custom: LinearTwinSection
    motor_twin: MotorTwinSection
    ddpg: DdpgSection
    benchmark: BenchmarkSection
    sweep: SweepSection
    identify: IdentifySection
    dist: DistSection

    @property
    def twin(self) -> LinearTwinSection | MotorTwinSection:
        return getattr(self, self.config.environment.value)

    @property
    def hash(self) -> str:
        tree = self.model_dump(mode="json")
        for key in _UNHASHED_KEYS:
            tree["config"].pop(key, None)
        return config_hash(tree)

    @property
    def env_hash(self) -> str:
        """Hash of what a trained policy depends on: the twin, the detector, the belief and the reward."""
        tree = self.model_dump(mode="json")
        return config_hash({"environment": tree["config"]["environment"], "twin": tree[self.config.environment.value],
                            "detector": tree["detector"], "belief": tree["belief"], "reward": tree["reward"]})

    @property
    def output_dir(self) -> Path:
        return Path(self.config.output_dir)


def _lower_keys(tree: Any) -> Any:
    if isinstance(tree, Mapping):
        return {str(key).lower(): _lower_keys(value) for key, value in tree.items()}
    if isinstance(tree, list):
        return [_lower_keys(item) for item in tree]
    return tree


def default_tree() -> Dict[str, Any]:
    defaults = _lower_keys(get_settings().as_dict())
    return {section: defaults.get(section, {}) for section in _SECTIONS}


def read_config_file(config_file: str | Path) -> Dict[str, Any]:
    """Read a user configuration file (toml, yaml or json) into a plain lower-cased tree."""
    path = Path(config_file)
    if not path.is_file():
        raise ConfigurationError(f"Configuration file not found: {path}")
    user = Dynaconf(envvar_prefix="DWM_LAB_USER", settings_files=[str(path)], environments=False,
                    load_dotenv=False, merge_enabled=True)
    return _lower_keys(user.as_dict())


def _error_path(error: ValidationError) -> str:
    first = error.errors()[0]
    return ".".join(str(part) for part in first["loc"]) + f": {first['msg']}"


def load_run_config(config_file: Optional[str | Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Resolve defaults, an optional configuration file and command-line overrides into a validated RunConfig.

    Raises:
        ConfigurationError: naming the dotted path of the first invalid or unknown key.
    """
    tree = default_tree()
    if config_file:
        tree = deep_merge(tree, read_config_file(config_file))
    if overrides:
        tree = deep_merge(tree, _lower_keys(overrides))
    output_dir = os.environ.get(OUTPUT_DIR_ENV)
    if output_dir:
        tree = deep_merge(tree, {"config": {"output_dir": output_dir}})
    try:
        run_config = RunConfig.model_validate(tree)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration at {_error_path(e)}") from e
    apply_to_settings(run_config)
    get_logger().debug(f"Run configuration resolved, hash {run_config.hash}")
    return run_config


def apply_to_settings(run_config: RunConfig):
    """Publish the numerical and logging knobs to the global settings read by the library code."""
    settings = get_settings()
    for key, value in run_config.dist.model_dump().items():
        settings.set(f"dist.{key}", value)
    settings.set("CONFIG.LOG_FOLDER", run_config.config.log_folder)
