"""Event-weight reward spaces and shaped rewards for one designated player.

A behavior preference assigns each event an additive weight drawn from that
event's menu, with at most (or exactly) ``max_active`` events taking a
nonzero weight, every weight bounded by ``max_abs_weight`` in absolute value.
One event name may be designated the multiplier event: its menu entry scales
the designated player's base reward instead of adding to it (neutral at 1),
and it does not count toward the active-event budget.

The shaped reward for the designated player on a transition is
``multiplier * base_reward + sum_j w_j * events[designated][j]``; all other
players keep the unshaped base reward.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .envs.base import CooperativeEnv, EventSchema, Transition
from .seeding import short_id

logger = logging.getLogger(__name__)

_ENUMERATION_CAP = 2_000_000


@dataclass(frozen=True)
class RewardSpaceSpec:
    """Menus of additive weights per event, plus the structural constraints."""

    menus: dict[str, tuple[float, ...]]
    max_abs_weight: float
    max_active: int
    mode: str = "at_most"  # or "exact": number of nonzero additive weights
    multiplier_event: str | None = None
    include_base: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ("at_most", "exact"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_active < 0:
            raise ValueError("max_active must be >= 0")
        if self.max_abs_weight <= 0:
            raise ValueError("max_abs_weight must be positive")
        any_nonzero = False
        for name, options in self.menus.items():
            if not options:
                raise ValueError(f"menu for {name} is empty")
            if len(set(options)) != len(options):
                raise ValueError(f"menu for {name} has duplicate options")
            for v in options:
                if abs(v) > self.max_abs_weight:
                    raise ValueError(
                        f"menu option {v} for {name} exceeds bound {self.max_abs_weight}"
                    )
            if name == self.multiplier_event:
                if any(v <= 0 for v in options):
                    raise ValueError("multiplier options must be positive")
            else:
                if 0.0 not in options:
                    raise ValueError(f"menu for {name} must offer 0")
                if any(v != 0.0 for v in options):
                    any_nonzero = True
        if self.multiplier_event is not None and self.multiplier_event not in self.menus:
            raise ValueError("multiplier_event missing from menus")
        if not any_nonzero:
            raise ValueError("at least one event needs a nonzero menu option")

    def aligned_menus(self, schema: EventSchema) -> list[tuple[float, ...]]:
        """Per-schema-event option tuples; events absent from menus are pinned."""
        unknown = set(self.menus) - set(schema.events)
        if unknown:
            raise ValueError(f"menus refer to unknown events: {sorted(unknown)}")
        out = []
        for name in schema.events:
            default = (1.0,) if name == self.multiplier_event else (0.0,)
            out.append(tuple(self.menus.get(name, default)))
        return out


@dataclass(frozen=True)
class RewardWeights:
    """One point of the reward space, aligned to a schema's event order.

    ``values[j]`` is the additive weight of event j, except at the multiplier
    event's index where it holds the multiplier itself.
    """

    values: tuple[float, ...]
    multiplier_index: int | None = None
    id: str = field(default="")

    def __post_init__(self) -> None:
        if not self.id:
            object.__setattr__(self, "id", weights_id(self.values))

    @property
    def multiplier(self) -> float:
        if self.multiplier_index is None:
            return 1.0
        return self.values[self.multiplier_index]

    def additive(self) -> tuple[float, ...]:
        return tuple(
            0.0 if j == self.multiplier_index else v for j, v in enumerate(self.values)
        )

    def active_count(self) -> int:
        return sum(1 for v in self.additive() if v != 0.0)

    def is_neutral(self) -> bool:
        return self.multiplier == 1.0 and all(v == 0.0 for v in self.additive())

    def validate(self, space: RewardSpaceSpec, schema: EventSchema) -> None:
        menus = space.aligned_menus(schema)
        if len(self.values) != len(menus):
            raise ValueError("weight vector length does not match schema")
        for j, (v, options) in enumerate(zip(self.values, menus)):
            if v not in options:
                raise ValueError(f"value {v} for event {schema.events[j]} not in menu")
        count = self.active_count()
        if space.mode == "exact":
            if count != space.max_active:
                raise ValueError(f"{count} active events, expected {space.max_active}")
        elif count > space.max_active:
            raise ValueError(f"{count} active events exceeds {space.max_active}")


def weights_id(values: tuple[float, ...]) -> str:
    return short_id([float(v) for v in values], prefix="w:")


def zero_weights(schema: EventSchema, space: RewardSpaceSpec | None = None) -> RewardWeights:
    """The neutral preference: base game untouched."""
    mult_idx = None
    values = [0.0] * len(schema)
    if space is not None and space.multiplier_event is not None:
        mult_idx = schema.index(space.multiplier_event)
        values[mult_idx] = 1.0
    return RewardWeights(values=tuple(values), multiplier_index=mult_idx)


def enumerate_or_sample_weights(
    space: RewardSpaceSpec,
    schema: EventSchema,
    n: int,
    rng: np.random.Generator,
) -> list[RewardWeights]:
    """All constrained weight vectors if there are at most n, else n distinct
    samples. Enumeration order (and therefore sampling) is deterministic."""
    if n < 1:
        raise ValueError("n must be >= 1")
    menus = space.aligned_menus(schema)
    mult_idx = (
        schema.index(space.multiplier_event) if space.multiplier_event is not None else None
    )

    additive_idx = [j for j in range(len(menus)) if j != mult_idx]
    nonzero_options = {
        j: tuple(v for v in menus[j] if v != 0.0) for j in additive_idx
    }
    support_candidates = [j for j in additive_idx if nonzero_options[j]]
    sizes = (
        (space.max_active,)
        if space.mode == "exact"
        else tuple(range(space.max_active + 1))
    )

    total = 0
    for k in sizes:
        for combo in itertools.combinations(support_candidates, k):
            prod = 1
            for j in combo:
                prod *= len(nonzero_options[j])
            total += prod
    mult_options = menus[mult_idx] if mult_idx is not None else (None,)
    total *= len(mult_options)

    if total > _ENUMERATION_CAP:
        raise ValueError(
            f"reward space holds {total} vectors, beyond the enumeration cap"
        )

    vectors: list[RewardWeights] = []
    for k in sizes:
        for combo in itertools.combinations(support_candidates, k):
            option_lists = [nonzero_options[j] for j in combo]
            for choice in itertools.product(*option_lists):
                for mult in mult_options:
                    values = [0.0] * len(menus)
                    for j, v in zip(combo, choice):
                        values[j] = v
                    if mult_idx is not None:
                        values[mult_idx] = mult
                    vectors.append(
                        RewardWeights(values=tuple(values), multiplier_index=mult_idx)
                    )

    if len(vectors) != total:
        raise AssertionError("enumeration count mismatch")
    seen: set[str] = set()
    for w in vectors:
        if w.id in seen:
            raise AssertionError(f"duplicate weight id {w.id}")
        seen.add(w.id)

    if total <= n:
        if total < n:
            logger.warning(
                "reward space has only %d vectors, fewer than the %d requested", total, n
            )
        return vectors
    picks = rng.choice(total, size=n, replace=False)
    return [vectors[i] for i in sorted(int(i) for i in picks)]


@dataclass(frozen=True)
class ShapedRewards:
    """Compiled shaping for one weight vector: fast per-step evaluation."""

    weights: RewardWeights
    active: tuple[tuple[int, float], ...]
    multiplier: float
    include_base: bool = True

    @classmethod
    def compile(cls, space: RewardSpaceSpec, weights: RewardWeights) -> ShapedRewards:
        return cls.from_weights(weights, include_base=space.include_base)

    @classmethod
    def from_weights(cls, weights: RewardWeights, include_base: bool = True) -> ShapedRewards:
        additive = weights.additive()
        active = tuple((j, w) for j, w in enumerate(additive) if w != 0.0)
        return cls(
            weights=weights,
            active=active,
            multiplier=weights.multiplier,
            include_base=include_base,
        )

    def reward(self, base_reward: float, agent_events) -> float:
        r = self.multiplier * base_reward if self.include_base else 0.0
        for j, w in self.active:
            e = agent_events[j]
            if e:
                r += w * e
        return r


def shaped_rewards(
    space: RewardSpaceSpec,
    weights: RewardWeights,
    transition: Transition,
    designated: int = 0,
) -> tuple[float, ...]:
    """Per-agent rewards on one transition under a behavior preference."""
    shaping = ShapedRewards.compile(space, weights)
    out = []
    for i in range(len(transition.events)):
        if i == designated:
            out.append(shaping.reward(transition.base_reward, transition.events[i]))
        else:
            out.append(transition.base_reward)
    return tuple(out)


class ShapedEnv:
    """Environment wrapper that reports per-agent shaped rewards.

    Only the designated player's stream is shaped; everyone else sees the
    base reward. The underlying base reward and events stay visible so
    evaluation always measures the true task return.
    """

    def __init__(
        self,
        env: CooperativeEnv,
        space: RewardSpaceSpec,
        weights: RewardWeights,
        designated: int = 0,
    ) -> None:
        weights.validate(space, env.schema)
        if not 0 <= designated < env.spec.n_agents:
            raise ValueError("designated agent out of range")
        self.env = env
        self.spec = env.spec
        self.schema = env.schema
        self.designated = designated
        self.shaping = ShapedRewards.compile(space, weights)

    def reset(self, seed: int = 0) -> int:
        return self.env.reset(seed)

    def step_with_rewards(self, state: int, actions):
        next_state, base, events = self.env.step_fast(state, actions)
        rewards = []
        for i in range(self.spec.n_agents):
            if i == self.designated:
                rewards.append(self.shaping.reward(base, events[i]))
            else:
                rewards.append(base)
        if not all(math.isfinite(r) for r in rewards):
            raise FloatingPointError(f"non-finite shaped reward at state {state}")
        return next_state, tuple(rewards), base, events


def kitchen_default_space() -> RewardSpaceSpec:
    """The stock kitchen menu: five task events with graded weight options,
    counter and movement events pinned to zero, and the order multiplier.

    Under exact-count mode this space enumerates to 194 vectors (97 support
    patterns times 2 multiplier options)."""
    return RewardSpaceSpec(
        menus={
            "put_on_counter": (0.0,),
            "pickup_from_counter": (0.0,),
            "pickup_onion": (-20.0, 0.0, 10.0),
            "pickup_dish": (-20.0, 0.0, 10.0),
            "pickup_soup": (-20.0, 0.0, 5.0, 10.0),
            "place_in_pot": (-20.0, 0.0, 3.0, 10.0),
            "deliver_soup": (-20.0, 0.0),
            "stay": (0.0,),
            "movement": (0.0,),
            "order_reward": (0.1, 1.0),
        },
        max_abs_weight=20.0,
        max_active=3,
        mode="exact",
        multiplier_event="order_reward",
    )
