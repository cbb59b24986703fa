"""Shared environment contracts: specs, event schemas, transitions.

Environments here are two-player common-payoff MDPs with full state
observability, integer-encoded states, and per-agent event annotations on
every transition. Events are the hooks the reward space shapes; the base
reward is the task reward shared by both players.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TERMINAL_STATE = -1


@dataclass(frozen=True)
class EnvSpec:
    """Static description of a cooperative environment.

    initial_state_dist is a sparse probability map {state: prob}; it must sum
    to 1. state_space_size is an upper bound on the number of reachable
    integer states (used for sanity checks, not allocation).
    """

    name: str
    n_agents: int
    action_space_sizes: tuple[int, ...]
    state_space_size: int
    horizon: int
    discount: float
    initial_state_dist: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if len(self.action_space_sizes) != self.n_agents:
            raise ValueError("one action space size per agent required")
        if any(a < 1 for a in self.action_space_sizes):
            raise ValueError("action space sizes must be >= 1")
        if self.state_space_size < 1:
            raise ValueError("state_space_size must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not (0.0 <= self.discount < 1.0):
            raise ValueError("discount must lie in [0, 1)")
        total = sum(self.initial_state_dist.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"initial state distribution sums to {total!r}, not 1")
        if any(p < 0 for p in self.initial_state_dist.values()):
            raise ValueError("initial state probabilities must be nonnegative")


@dataclass(frozen=True)
class EventSchema:
    """Ordered event names plus which entries are counts rather than 0/1 flags."""

    events: tuple[str, ...]
    count_valued: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if len(set(self.events)) != len(self.events):
            raise ValueError("event names must be unique")
        unknown = self.count_valued - set(self.events)
        if unknown:
            raise ValueError(f"count_valued refers to unknown events: {sorted(unknown)}")

    def __len__(self) -> int:
        return len(self.events)

    def index(self, name: str) -> int:
        return self.events.index(name)

    def validate_vector(self, vec: Sequence[float]) -> None:
        """Check one agent's event vector against the schema domain."""
        if len(vec) != len(self.events):
            raise ValueError(f"event vector length {len(vec)} != {len(self.events)}")
        for name, value in zip(self.events, vec):
            if value < 0:
                raise ValueError(f"event {name} has negative value {value}")
            if name not in self.count_valued and value not in (0, 1):
                raise ValueError(f"event {name} is binary but got {value}")


@dataclass(frozen=True)
class Transition:
    """One joint step: (s, a) -> s' with shared base reward and per-agent events."""

    state: int
    actions: tuple[int, ...]
    next_state: int
    base_reward: float
    events: tuple[tuple[int, ...], ...]  # (n_agents, n_events)
    terminal: bool


class CooperativeEnv:
    """Base class for the concrete environments.

    Subclasses expose:
      spec: EnvSpec
      schema: EventSchema
      reset(seed) -> int
      step(state, actions) -> Transition
      step_fast(state, actions) -> (next_state, base_reward, events) for hot loops
    """

    spec: EnvSpec
    schema: EventSchema

    def reset(self, seed: int = 0) -> int:
        dist = self.spec.initial_state_dist
        states = sorted(dist)
        if len(states) == 1:
            return states[0]
        probs = np.array([dist[s] for s in states], dtype=float)
        rng = np.random.default_rng(seed)
        return int(states[rng.choice(len(states), p=probs / probs.sum())])

    def step_fast(
        self, state: int, actions: tuple[int, ...]
    ) -> tuple[int, float, tuple[tuple[int, ...], ...]]:
        raise NotImplementedError

    def step(self, state: int, actions: tuple[int, ...]) -> Transition:
        self._check_actions(actions)
        next_state, base_reward, events = self.step_fast(state, actions)
        return Transition(
            state=state,
            actions=tuple(actions),
            next_state=next_state,
            base_reward=base_reward,
            events=events,
            terminal=next_state == TERMINAL_STATE,
        )

    def _check_actions(self, actions: Sequence[int]) -> None:
        sizes = self.spec.action_space_sizes
        if len(actions) != len(sizes):
            raise ValueError(f"expected {len(sizes)} actions, got {len(actions)}")
        for i, (a, n) in enumerate(zip(actions, sizes)):
            if not 0 <= a < n:
                raise ValueError(f"agent {i} action {a} outside [0, {n})")
