from enum import Enum


class AttackKind(str, Enum):
    NONE = "none"
    FLIP_PRE = "flip_pre"
    FLIP_POST = "flip_post"
    INJECTION = "injection"
    REPLAY = "replay"


class ControlOverride(str, Enum):
    NONE = "none"
    NEGATE = "negate"
    CUSTOM = "custom"


class FlipVariant(str, Enum):
    PRE = "pre"    # flip before the watermark is added: -u + phi
    POST = "post"  # flip after the watermark is added: -u - phi


class EstimatorMode(str, Enum):
    COMPENSATING = "compensating"        # A y + B u', u' already carries phi
    NONCOMPENSATING = "noncompensating"  # A y + B u, phi known but unused
    FROZEN_FLIP = "frozen_flip"          # A y - B u + B phi, flip of u known, phi assumed unflipped
    MODEL_ONLY = "model_only"            # A y + B u, no knowledge of the flip or of phi


class FlipLaw(str, Enum):
    FROZEN = "frozen"                    # post-flip attack seen by the frozen-flip estimator
    MODEL_ONLY_PRE = "model_only_pre"
    MODEL_ONLY_POST = "model_only_post"


class LawFamily(str, Enum):
    CENTRAL = "central_chi2"
    NONCENTRAL = "noncentral_chi2"
    GENERALIZED = "generalized_chi2"


class EnvironmentKind(str, Enum):
    MTC_TWIN = "mtc_twin"
    MOTOR_TWIN = "motor_twin"
    CUSTOM = "custom"


class PolicyKind(str, Enum):
    NONE = "none"
    CONSTANT = "constant"
    DDPG = "ddpg"
