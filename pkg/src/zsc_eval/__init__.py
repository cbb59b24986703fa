"""Partner generation, diversity-based selection, and robust coordination
metrics for evaluating zero-shot cooperators in small common-payoff games."""

__version__ = "0.1.0"

from .envs import (
    CooperativeEnv,
    EnvSpec,
    EventMatrixGame,
    EventSchema,
    MiniKitchen,
    Transition,
)
from .policies import Policy, ScriptedPolicy, TabularPolicy, UniformPolicy
from .rewards import (
    RewardSpaceSpec,
    RewardWeights,
    ShapedEnv,
    enumerate_or_sample_weights,
    kitchen_default_space,
    shaped_rewards,
    zero_weights,
)
from .training import (
    CandidatePair,
    Checkpoint,
    LinearSchedule,
    ReturnEstimate,
    TrainConfig,
    approximate_ne,
    evaluate_pair,
    self_play_return,
    train_best_response,
)

__all__ = [
    "__version__",
    "CooperativeEnv",
    "EnvSpec",
    "EventMatrixGame",
    "EventSchema",
    "MiniKitchen",
    "Transition",
    "Policy",
    "ScriptedPolicy",
    "TabularPolicy",
    "UniformPolicy",
    "RewardSpaceSpec",
    "RewardWeights",
    "ShapedEnv",
    "enumerate_or_sample_weights",
    "kitchen_default_space",
    "shaped_rewards",
    "zero_weights",
    "CandidatePair",
    "Checkpoint",
    "LinearSchedule",
    "ReturnEstimate",
    "TrainConfig",
    "approximate_ne",
    "evaluate_pair",
    "self_play_return",
    "train_best_response",
]
