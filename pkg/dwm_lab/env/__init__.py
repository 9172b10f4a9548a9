from typing import Optional

from dwm_lab.algo.attack import AttackScenario
from dwm_lab.algo.plant import Controller, PlantModel, Segment
from dwm_lab.algo.types import AttackKind, ControlOverride, EnvironmentKind
from dwm_lab.env.gmm import GmmSegment, GmmSurrogate
from dwm_lab.env.mdp import BeliefSetup, DetectorSetup, EpisodeConfig, RewardWeights
from dwm_lab.env.motor_twin_env import MotorTwinEnv
from dwm_lab.env.mtc_twin_env import CustomEnv, MtcTwinEnv
from dwm_lab.env.watermark_env import WatermarkEnvironment
from dwm_lab.run_config import LinearTwinSection, MotorTwinSection, RunConfig


def resolve_episode(run_config: RunConfig, seed: Optional[int] = None, replication: int = 0,
                    alpha: Optional[float] = None, attack_kind: Optional[AttackKind] = None) -> EpisodeConfig:
    """
    Build the episode of the configured twin, filling every zero-valued field with the twin default.

    Args:
        run_config: validated run configuration.
        seed: root seed, config.seed when omitted.
        replication: replication index of the episode.
        alpha: Type-I level overriding detector.alpha (training uses ddpg.alpha).
        attack_kind: scenario kind overriding attack.kind (nominal runs pass AttackKind.NONE).
    """
    twin = run_config.twin
    attack = run_config.attack
    kind = AttackKind(attack_kind or attack.kind)
    scenario = AttackScenario(
        kind=kind,
        onset=attack.onset or twin.onset,
        duration=attack.duration or twin.horizon,
        delta_t=attack.delta_t,
        injection_level=attack.injection_level,
        control_override=attack.control_override if kind == AttackKind.REPLAY else ControlOverride.NONE,
        custom_control=tuple(attack.custom_control),
    )
    detector = DetectorSetup(
        alpha=alpha if alpha is not None else run_config.detector.alpha,
        threshold=run_config.detector.threshold or twin.threshold,
        estimator_mode=run_config.detector.estimator_mode,
    )
    belief = BeliefSetup(
        prior=run_config.belief.prior,
        onset_rate=run_config.belief.onset_rate or 1.0 / twin.horizon,
        w_beta=run_config.belief.w_beta or twin.w_beta,
        clamp=run_config.belief.clamp,
    )
    return EpisodeConfig(
        horizon=twin.horizon,
        decision_block=twin.decision_block,
        processed_block=twin.processed_block,
        scenario=scenario,
        weights=RewardWeights(**run_config.reward.model_dump()),
        detector=detector,
        belief=belief,
        seed=run_config.config.seed if seed is None else seed,
        replication=replication,
        u_max=twin.u_max,
        state_scale=twin.state_scale,
    )


def _linear_twin(env_class):
    def build(episode: EpisodeConfig, twin: LinearTwinSection) -> WatermarkEnvironment:
        model = PlantModel(A=twin.a, B=twin.b, Q=twin.q, mu0=twin.mu0, Sigma0=twin.sigma0)
        return env_class(episode, model, Controller(kp=twin.kp, setpoint=twin.setpoint))
    return build


def _motor_twin(episode: EpisodeConfig, twin: MotorTwinSection) -> WatermarkEnvironment:
    segments = [
        Segment(model=PlantModel(A=s.a, B=s.b, Q=s.q, mu0=[twin.mu0], Sigma0=[[twin.sigma0]]), switch_level=s.setpoint)
        for s in twin.segments
    ]
    surrogate = GmmSurrogate(tuple(
        GmmSegment(weights=s.gmm_weights, means=s.gmm_means, variances=s.gmm_variances) for s in twin.segments
    ))
    return MotorTwinEnv(episode, segments, surrogate)


_ENVIRONMENTS = {
    EnvironmentKind.MTC_TWIN: _linear_twin(MtcTwinEnv),
    EnvironmentKind.CUSTOM: _linear_twin(CustomEnv),
    EnvironmentKind.MOTOR_TWIN: _motor_twin,
}


def get_environment(run_config: RunConfig, seed: Optional[int] = None, replication: int = 0,
                    alpha: Optional[float] = None, attack_kind: Optional[AttackKind] = None) -> WatermarkEnvironment:
    kind = run_config.config.environment
    if kind not in _ENVIRONMENTS:
        raise ValueError(f"Unknown environment: {kind}")
    episode = resolve_episode(run_config, seed, replication, alpha, attack_kind)
    return _ENVIRONMENTS[kind](episode, run_config.twin)
