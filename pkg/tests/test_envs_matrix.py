"""Matrix-game mechanics and the exact enumeration oracles."""

from __future__ import annotations

import numpy as np
import pytest

from zsc_eval.envs.base import TERMINAL_STATE
from zsc_eval.envs.matrix import (
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

EVENTS = ("event_a", "event_b", "event_c")


def _leaf_node(base, events0=(0, 0, 0), events1=(0, 0, 0)):
    """2x2 terminal node with one shared reward table."""
    ev = tuple(
        tuple((tuple(events0), tuple(events1)) for _ in range(2)) for _ in range(2)
    )
    nxt = tuple((TERMINAL_STATE, TERMINAL_STATE) for _ in range(2))
    return Node(base_reward=base, events=ev, next_node=nxt)


def _two_step_game():
    """Root feeds into a leaf; payoffs chosen so the optimum needs both steps."""
    root = Node(
        base_reward=((1.0, 0.0), (0.0, 2.0)),
        events=tuple(tuple(((1, 0, 0), (0, 1, 0)) for _ in range(2)) for _ in range(2)),
        next_node=((1, 1), (1, 1)),
    )
    leaf = _leaf_node(((3.0, 0.0), (0.0, 1.0)))
    return EventMatrixGame([root, leaf], (2, 2), EVENTS, horizon=2)


def test_step_fast_reads_the_node_tables():
    game = _two_step_game()
    next_state, reward, events = game.step_fast(0, (1, 1))
    assert next_state == 1
    assert reward == 2.0
    assert events == ((1, 0, 0), (0, 1, 0))
    next_state, reward, _ = game.step_fast(1, (0, 0))
    assert next_state == TERMINAL_STATE
    assert reward == 3.0


def test_reset_always_returns_the_root():
    game = _two_step_game()
    assert all(game.reset(seed) == 0 for seed in (0, 1, 17, 123456))


def test_reachable_nodes_bfs_order():
    assert reachable_nodes(_two_step_game()) == [0, 1]


def test_table_shape_validation():
    bad = Node(
        base_reward=((1.0,), (0.0, 2.0)),
        events=tuple(tuple(((0, 0, 0), (0, 0, 0)) for _ in range(2)) for _ in range(2)),
        next_node=tuple((TERMINAL_STATE, TERMINAL_STATE) for _ in range(2)),
    )
    with pytest.raises(ValueError, match="base_reward"):
        EventMatrixGame([bad], (2, 2), EVENTS, horizon=1)


def test_successor_out_of_range_rejected():
    node = Node(
        base_reward=((0.0, 0.0), (0.0, 0.0)),
        events=tuple(tuple(((0, 0, 0), (0, 0, 0)) for _ in range(2)) for _ in range(2)),
        next_node=((5, TERMINAL_STATE), (TERMINAL_STATE, TERMINAL_STATE)),
    )
    with pytest.raises(ValueError, match="successor"):
        EventMatrixGame([node], (2, 2), EVENTS, horizon=1)


def test_joint_policy_counts():
    one_stage = EventMatrixGame(
        [_leaf_node(((1.0, 0.0), (0.0, 1.0)))], (2, 2), EVENTS, horizon=1
    )
    assert len(enumerate_joint_policies(one_stage)) == 4

    wide = EventMatrixGame(
        [
            Node(
                base_reward=tuple((0.0, 0.0) for _ in range(3)),
                events=tuple(
                    tuple(((0, 0, 0), (0, 0, 0)) for _ in range(2)) for _ in range(3)
                ),
                next_node=tuple((TERMINAL_STATE, TERMINAL_STATE) for _ in range(3)),
            )
        ],
        (3, 2),
        EVENTS,
        horizon=1,
    )
    assert len(enumerate_joint_policies(wide)) == 6


def test_two_stage_policy_count_is_eight_per_player():
    # 2 actions over the root plus 2 reachable stage nodes: 2^3 per player
    root_next = tuple(tuple(1 + (a1 % 2) for a1 in range(2)) for _ in range(2))
    root = Node(
        base_reward=((0.0, 0.0), (0.0, 0.0)),
        events=tuple(tuple(((0, 0, 0), (0, 0, 0)) for _ in range(2)) for _ in range(2)),
        next_node=root_next,
    )
    game = EventMatrixGame(
        [root, _leaf_node(((1.0, 0.0), (0.0, 1.0))), _leaf_node(((2.0, 0.0), (0.0, 2.0)))],
        (2, 2),
        EVENTS,
        horizon=2,
    )
    joint = enumerate_joint_policies(game)
    assert len(joint) == 8 * 8
    assert len({tuple(sorted(p0.items())) for p0, _ in joint}) == 8


def test_enumeration_cap_is_enforced():
    with pytest.raises(EnumerationCapError, match="exceeds cap"):
        enumerate_joint_policies(_two_step_game(), cap=10)


def test_exact_return_recurses_through_both_steps():
    game = _two_step_game()
    # root (1,1) pays 2, leaf (0,0) pays 3
    policy0 = {0: 1, 1: 0}
    policy1 = {0: 1, 1: 0}
    assert exact_return(game, policy0, policy1) == pytest.approx(5.0)
    assert exact_return(game, policy0, policy1, discount=0.5) == pytest.approx(2.0 + 0.5 * 3.0)


def test_exact_return_averages_stochastic_policies():
    game = EventMatrixGame(
        [_leaf_node(((4.0, 0.0), (0.0, 8.0)))], (2, 2), EVENTS, horizon=1
    )
    value = exact_return(game, uniform_policy(game, 0), uniform_policy(game, 1))
    assert value == pytest.approx((4.0 + 0.0 + 0.0 + 8.0) / 4.0)


def test_uniform_policy_distributions_sum_to_one():
    game = _two_step_game()
    for probs in uniform_policy(game, 0).values():
        assert probs.shape == (2,)
        assert probs.sum() == pytest.approx(1.0)


def test_joint_optimum_matches_exhaustive_enumeration(corpus):
    picked = [fx for fx in corpus if fx.name in ("joint-h1-0", "joint-h1-5", "joint-h2-1")]
    assert len(picked) == 3
    for fx in picked:
        pol0, pol1, best = exact_joint_optimum(fx.game, discount=1.0)
        brute = max(
            exact_return(fx.game, p0, p1)
            for p0, p1 in enumerate_joint_policies(fx.game)
        )
        assert best == pytest.approx(brute, abs=1e-12)
        assert exact_return(fx.game, pol0, pol1) == pytest.approx(brute, abs=1e-12)


def test_best_response_matches_enumeration_against_uniform_partner(corpus):
    fx = next(f for f in corpus if f.name == "joint-h1-2")
    partner = uniform_policy(fx.game, 0)
    _, value = exact_best_response(fx.game, partner, slot=1)
    n1 = fx.game.spec.action_space_sizes[1]
    nodes = reachable_nodes(fx.game)
    brute = max(
        exact_return(fx.game, partner, dict(zip(nodes, choice)))
        for choice in np.ndindex(*([n1] * len(nodes)))
    )
    assert value == pytest.approx(brute, abs=1e-12)


def test_corpus_margins_and_discount_consistency(corpus):
    assert len(corpus) == 20
    for fx in corpus:
        assert joint_value_margin(fx.game, discount=1.0) >= 0.5 - 1e-12
        pol0, pol1, _ = exact_joint_optimum(fx.game, discount=0.99)
        _, _, best = exact_joint_optimum(fx.game, discount=1.0)
        assert exact_return(fx.game, pol0, pol1) == pytest.approx(best, abs=1e-9)
