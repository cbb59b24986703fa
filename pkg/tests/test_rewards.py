"""Reward-space enumeration, shaping arithmetic, and constraint validation."""

from __future__ import annotations

import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zsc_eval.envs.base import EventSchema, Transition
from zsc_eval.envs.kitchen import MiniKitchen
from zsc_eval.rewards import (
    RewardSpaceSpec,
    RewardWeights,
    ShapedEnv,
    ShapedRewards,
    enumerate_or_sample_weights,
    kitchen_default_space,
    shaped_rewards,
    weights_id,
    zero_weights,
)

KITCHEN_SCHEMA = MiniKitchen().schema


def _count_by_hand(space: RewardSpaceSpec, schema: EventSchema) -> int:
    """Brute-force count of admissible vectors, written independently of the
    library's combinatorics: try every menu combination and filter."""
    menus = space.aligned_menus(schema)
    mult_idx = (
        schema.index(space.multiplier_event)
        if space.multiplier_event is not None
        else None
    )
    count = 0
    for values in itertools.product(*menus):
        active = sum(
            1 for j, v in enumerate(values) if j != mult_idx and v != 0.0
        )
        if space.mode == "exact" and active != space.max_active:
            continue
        if space.mode == "at_most" and active > space.max_active:
            continue
        count += 1
    return count


def test_kitchen_space_enumerates_to_194():
    space = kitchen_default_space()
    rng = np.random.default_rng(0)
    vectors = enumerate_or_sample_weights(space, KITCHEN_SCHEMA, 10_000, rng)
    assert len(vectors) == 194
    assert len(vectors) == _count_by_hand(space, KITCHEN_SCHEMA)


def test_kitchen_vectors_all_satisfy_the_constraints():
    space = kitchen_default_space()
    rng = np.random.default_rng(0)
    vectors = enumerate_or_sample_weights(space, KITCHEN_SCHEMA, 10_000, rng)
    for w in vectors:
        w.validate(space, KITCHEN_SCHEMA)
        assert w.active_count() == 3
        assert all(abs(v) <= 20.0 for v in w.additive())
        assert w.multiplier > 0
    assert len({w.id for w in vectors}) == len(vectors)


def test_at_most_mode_adds_the_smaller_supports():
    space = replace(kitchen_default_space(), mode="at_most")
    rng = np.random.default_rng(0)
    vectors = enumerate_or_sample_weights(space, KITCHEN_SCHEMA, 10_000, rng)
    assert len(vectors) == _count_by_hand(space, KITCHEN_SCHEMA) == 312
    sizes = {w.active_count() for w in vectors}
    assert sizes == {0, 1, 2, 3}


def test_small_space_enumerates_in_menu_order():
    schema = EventSchema(("a", "b"))
    space = RewardSpaceSpec(
        menus={"a": (0.0, 1.0), "b": (0.0, -2.0, 2.0)},
        max_abs_weight=5.0,
        max_active=1,
    )
    vectors = enumerate_or_sample_weights(space, schema, 100, np.random.default_rng(0))
    assert [w.values for w in vectors] == [
        (0.0, 0.0),
        (1.0, 0.0),
        (0.0, -2.0),
        (0.0, 2.0),
    ]


def test_sampling_is_deterministic_and_duplicate_free():
    space = kitchen_default_space()
    a = enumerate_or_sample_weights(space, KITCHEN_SCHEMA, 60, np.random.default_rng(7))
    b = enumerate_or_sample_weights(space, KITCHEN_SCHEMA, 60, np.random.default_rng(7))
    c = enumerate_or_sample_weights(space, KITCHEN_SCHEMA, 60, np.random.default_rng(8))
    assert [w.id for w in a] == [w.id for w in b]
    assert len({w.id for w in a}) == 60
    assert [w.id for w in a] != [w.id for w in c]


def test_sampling_preserves_enumeration_order():
    space = kitchen_default_space()
    full = enumerate_or_sample_weights(space, KITCHEN_SCHEMA, 500, np.random.default_rng(0))
    order = {w.id: i for i, w in enumerate(full)}
    sample = enumerate_or_sample_weights(space, KITCHEN_SCHEMA, 25, np.random.default_rng(3))
    positions = [order[w.id] for w in sample]
    assert positions == sorted(positions)


def test_oversized_space_is_refused():
    schema = EventSchema(tuple(f"e{i}" for i in range(8)))
    menus = {name: tuple(float(v) for v in range(10)) for name in schema.events}
    space = RewardSpaceSpec(menus=menus, max_abs_weight=10.0, max_active=8)
    with pytest.raises(ValueError, match="enumeration cap"):
        enumerate_or_sample_weights(space, schema, 5, np.random.default_rng(0))


def test_space_validation_errors():
    with pytest.raises(ValueError, match="must offer 0"):
        RewardSpaceSpec(menus={"a": (1.0,)}, max_abs_weight=5.0, max_active=1)
    with pytest.raises(ValueError, match="duplicate"):
        RewardSpaceSpec(menus={"a": (0.0, 1.0, 1.0)}, max_abs_weight=5.0, max_active=1)
    with pytest.raises(ValueError, match="exceeds bound"):
        RewardSpaceSpec(menus={"a": (0.0, 9.0)}, max_abs_weight=5.0, max_active=1)
    with pytest.raises(ValueError, match="unknown mode"):
        RewardSpaceSpec(menus={"a": (0.0, 1.0)}, max_abs_weight=5.0, max_active=1, mode="any")
    with pytest.raises(ValueError, match="multiplier options must be positive"):
        RewardSpaceSpec(
            menus={"a": (0.0, 1.0), "m": (0.0, 1.0)},
            max_abs_weight=5.0,
            max_active=1,
            multiplier_event="m",
        )
    with pytest.raises(ValueError, match="multiplier_event missing"):
        RewardSpaceSpec(
            menus={"a": (0.0, 1.0)},
            max_abs_weight=5.0,
            max_active=1,
            multiplier_event="m",
        )
    with pytest.raises(ValueError, match="nonzero menu option"):
        RewardSpaceSpec(menus={"a": (0.0,)}, max_abs_weight=5.0, max_active=1)


def test_weight_validation_errors():
    schema = EventSchema(("a", "b"))
    space = RewardSpaceSpec(
        menus={"a": (0.0, 1.0), "b": (0.0, 2.0)},
        max_abs_weight=5.0,
        max_active=1,
        mode="exact",
    )
    with pytest.raises(ValueError, match="not in menu"):
        RewardWeights(values=(3.0, 0.0)).validate(space, schema)
    with pytest.raises(ValueError, match="active events, expected"):
        RewardWeights(values=(1.0, 2.0)).validate(space, schema)
    with pytest.raises(ValueError, match="length does not match"):
        RewardWeights(values=(1.0,)).validate(space, schema)
    loose = replace(space, mode="at_most")
    with pytest.raises(ValueError, match="exceeds"):
        RewardWeights(values=(1.0, 2.0)).validate(loose, schema)
    RewardWeights(values=(1.0, 0.0)).validate(space, schema)  # on-menu passes


def test_menus_must_name_schema_events():
    schema = EventSchema(("a",))
    space = RewardSpaceSpec(menus={"zz": (0.0, 1.0)}, max_abs_weight=5.0, max_active=1)
    with pytest.raises(ValueError, match="unknown events"):
        space.aligned_menus(schema)


def test_zero_weights_is_neutral():
    space = kitchen_default_space()
    w = zero_weights(KITCHEN_SCHEMA, space)
    assert w.is_neutral()
    assert w.multiplier == 1.0
    assert w.active_count() == 0
    shaping = ShapedRewards.compile(space, w)
    events = tuple(0 for _ in KITCHEN_SCHEMA.events)
    assert shaping.reward(7.5, events) == 7.5


def test_weights_id_depends_only_on_values():
    assert weights_id((0.0, 1.0)) == weights_id((0.0, 1.0))
    assert weights_id((0.0, 1.0)) != weights_id((1.0, 0.0))
    a = RewardWeights(values=(0.0, 1.0))
    b = RewardWeights(values=(0.0, 1.0), multiplier_index=1)
    assert a.id == b.id  # identity tracks the raw vector


@settings(max_examples=80, deadline=None)
@given(
    values=st.lists(
        st.floats(min_value=-20.0, max_value=20.0, allow_nan=False, width=32),
        min_size=3,
        max_size=6,
    ),
    base=st.floats(min_value=-50.0, max_value=50.0, allow_nan=False, width=32),
    data=st.data(),
)
def test_shaping_is_linear_in_events(values, base, data):
    events = data.draw(
        st.lists(
            st.integers(min_value=0, max_value=5),
            min_size=len(values),
            max_size=len(values),
        )
    )
    weights = RewardWeights(values=tuple(values))
    shaping = ShapedRewards.from_weights(weights)
    expected = base + sum(w * e for w, e in zip(values, events))
    assert shaping.reward(base, tuple(events)) == pytest.approx(expected, abs=1e-9)


def test_multiplier_scales_only_the_base_reward():
    weights = RewardWeights(values=(2.0, 0.5), multiplier_index=1)
    shaping = ShapedRewards.from_weights(weights)
    assert shaping.reward(10.0, (3, 9)) == 0.5 * 10.0 + 2.0 * 3
    bare = ShapedRewards.from_weights(weights, include_base=False)
    assert bare.reward(10.0, (3, 9)) == 2.0 * 3


def test_shaped_rewards_touch_only_the_designated_agent():
    schema = EventSchema(("a", "b"))
    space = RewardSpaceSpec(
        menus={"a": (0.0, 1.0), "b": (0.0, 2.0)},
        max_abs_weight=5.0,
        max_active=2,
    )
    transition = Transition(
        state=0,
        actions=(0, 0),
        next_state=1,
        base_reward=4.0,
        events=((1, 0), (0, 1)),
        terminal=False,
    )
    weights = RewardWeights(values=(1.0, 2.0))
    assert shaped_rewards(space, weights, transition, designated=0) == (5.0, 4.0)
    assert shaped_rewards(space, weights, transition, designated=1) == (4.0, 6.0)


def test_shaped_env_streams_shaped_and_base_rewards():
    env = MiniKitchen()
    space = kitchen_default_space()
    values = [0.0] * len(KITCHEN_SCHEMA)
    values[KITCHEN_SCHEMA.index("pickup_onion")] = 10.0
    values[KITCHEN_SCHEMA.index("pickup_dish")] = -20.0
    values[KITCHEN_SCHEMA.index("pickup_soup")] = 5.0
    values[KITCHEN_SCHEMA.index("order_reward")] = 1.0
    weights = RewardWeights(
        values=tuple(values),
        multiplier_index=KITCHEN_SCHEMA.index("order_reward"),
    )
    weights.validate(space, KITCHEN_SCHEMA)
    shaped = ShapedEnv(env, space, weights, designated=0)
    state = shaped.reset(0)
    from zsc_eval.envs.kitchen import INTERACT, STAY

    next_state, rewards, base, events = shaped.step_with_rewards(state, (INTERACT, STAY))
    assert base == 0.0
    assert rewards == (10.0, 0.0)  # onion pickup shaped for cook 0 only
    with pytest.raises(ValueError, match="designated agent out of range"):
        ShapedEnv(env, space, weights, designated=5)


def test_shaped_env_rejects_off_menu_weights():
    env = MiniKitchen()
    space = kitchen_default_space()
    values = [0.0] * len(KITCHEN_SCHEMA)
    values[KITCHEN_SCHEMA.index("pickup_onion")] = 99.0
    values[KITCHEN_SCHEMA.index("order_reward")] = 1.0
    weights = RewardWeights(
        values=tuple(values),
        multiplier_index=KITCHEN_SCHEMA.index("order_reward"),
    )
    with pytest.raises(ValueError, match="not in menu"):
        ShapedEnv(env, space, weights)
