from .base import TERMINAL_STATE, CooperativeEnv, EnvSpec, EventSchema, Transition
from .kitchen import DEFAULT_LAYOUT, EVENT_NAMES, MiniKitchen, Recipe, layout_from_text
from .matrix import (
    EnumerationCapError,
    EventMatrixGame,
    Node,
    enumerate_joint_policies,
    exact_best_response,
    exact_joint_optimum,
    exact_return,
    joint_value_margin,
    reachable_nodes,
    uniform_policy,
)

__all__ = [
    "TERMINAL_STATE",
    "CooperativeEnv",
    "EnvSpec",
    "EventSchema",
    "Transition",
    "DEFAULT_LAYOUT",
    "EVENT_NAMES",
    "MiniKitchen",
    "Recipe",
    "layout_from_text",
    "EnumerationCapError",
    "EventMatrixGame",
    "Node",
    "enumerate_joint_policies",
    "exact_best_response",
    "exact_joint_optimum",
    "exact_return",
    "joint_value_margin",
    "reachable_nodes",
    "uniform_policy",
]
