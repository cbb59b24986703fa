"""Small two-player event matrix games with exact enumeration oracles.

States are nodes of a shallow game tree (a DAG: several joint actions may
lead to the same successor). Every joint action at a node carries a shared
base reward, per-agent event vectors, and a successor node. These games are
small enough to solve exactly, which is what makes them useful as oracles
for the approximate trainers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .base import TERMINAL_STATE, CooperativeEnv, EnvSpec, EventSchema

RewardFn = Callable[[int, int, int], float]


class EnumerationCapError(RuntimeError):
    """Raised when a policy enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class Node:
    """Per-node tables indexed [a0][a1].

    base_reward: shared task reward.
    events: pair (agent0 events, agent1 events), each a tuple of ints.
    next_node: successor node id, or TERMINAL_STATE.
    """

    base_reward: tuple[tuple[float, ...], ...]
    events: tuple[tuple[tuple[tuple[int, ...], tuple[int, ...]], ...], ...]
    next_node: tuple[tuple[int, ...], ...]


class EventMatrixGame(CooperativeEnv):
    def __init__(
        self,
        nodes: Sequence[Node],
        action_sizes: tuple[int, int],
        event_names: Sequence[str],
        horizon: int,
        discount: float = 0.99,
        name: str = "matrix",
        count_valued: Sequence[str] = (),
    ) -> None:
        self.nodes = tuple(nodes)
        self.schema = EventSchema(tuple(event_names), frozenset(count_valued))
        self._validate_tables(action_sizes)
        self.spec = EnvSpec(
            name=name,
            n_agents=2,
            action_space_sizes=action_sizes,
            state_space_size=len(self.nodes),
            horizon=horizon,
            discount=discount,
            initial_state_dist={0: 1.0},
        )

    def _validate_tables(self, action_sizes: tuple[int, int]) -> None:
        n0, n1 = action_sizes
        m = len(self.schema)
        for idx, node in enumerate(self.nodes):
            for table, label in (
                (node.base_reward, "base_reward"),
                (node.events, "events"),
                (node.next_node, "next_node"),
            ):
                if len(table) != n0 or any(len(row) != n1 for row in table):
                    raise ValueError(f"node {idx} {label} table is not {n0}x{n1}")
            for row in node.events:
                for ev0, ev1 in row:
                    self.schema.validate_vector(ev0)
                    self.schema.validate_vector(ev1)
                    if len(ev0) != m or len(ev1) != m:
                        raise ValueError(f"node {idx} event vectors must have length {m}")
            for row in node.next_node:
                for nxt in row:
                    if nxt != TERMINAL_STATE and not 0 <= nxt < len(self.nodes):
                        raise ValueError(f"node {idx} successor {nxt} out of range")

    def step_fast(self, state, actions):
        node = self.nodes[state]
        a0, a1 = actions
        return (
            node.next_node[a0][a1],
            node.base_reward[a0][a1],
            node.events[a0][a1],
        )


def reachable_nodes(game: EventMatrixGame) -> list[int]:
    """Node ids reachable from the root, in BFS order."""
    seen = {0}
    order = [0]
    frontier = [0]
    while frontier:
        nxt_frontier = []
        for nid in frontier:
            node = game.nodes[nid]
            for row in node.next_node:
                for nxt in row:
                    if nxt != TERMINAL_STATE and nxt not in seen:
                        seen.add(nxt)
                        order.append(nxt)
                        nxt_frontier.append(nxt)
        frontier = nxt_frontier
    return order


def enumerate_joint_policies(
    game: EventMatrixGame, cap: int = 250_000
) -> list[tuple[dict[int, int], dict[int, int]]]:
    """All deterministic joint policies over reachable decision nodes.

    Refuses with an explicit size report when the joint count exceeds cap.
    """
    nodes = reachable_nodes(game)
    n0, n1 = game.spec.action_space_sizes
    count0 = n0 ** len(nodes)
    count1 = n1 ** len(nodes)
    total = count0 * count1
    if total > cap:
        raise EnumerationCapError(
            f"{count0} x {count1} = {total} joint policies exceeds cap {cap}"
        )
    policies0 = _player_policies(nodes, n0)
    policies1 = _player_policies(nodes, n1)
    return [(p0, p1) for p0 in policies0 for p1 in policies1]


def _player_policies(nodes: Sequence[int], n_actions: int) -> list[dict[int, int]]:
    out: list[dict[int, int]] = [{}]
    for nid in nodes:
        out = [{**p, nid: a} for p in out for a in range(n_actions)]
    return out


def _action_probs(policy, node: int, n_actions: int) -> np.ndarray:
    """Accept deterministic dicts {node: action} or stochastic {node: probs}."""
    choice = policy[node]
    if np.isscalar(choice):
        probs = np.zeros(n_actions)
        probs[int(choice)] = 1.0
        return probs
    probs = np.asarray(choice, dtype=float)
    if probs.shape != (n_actions,) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError(f"bad action distribution at node {node}")
    return probs


def exact_return(
    game: EventMatrixGame,
    policy0: Mapping[int, object],
    policy1: Mapping[int, object],
    reward_fn: RewardFn | None = None,
    discount: float = 1.0,
) -> float:
    """Expected return of a (possibly stochastic) policy pair, by recursion."""
    n0, n1 = game.spec.action_space_sizes
    memo: dict[int, float] = {}

    def value(nid: int) -> float:
        if nid == TERMINAL_STATE:
            return 0.0
        if nid in memo:
            return memo[nid]
        node = game.nodes[nid]
        p0 = _action_probs(policy0, nid, n0)
        p1 = _action_probs(policy1, nid, n1)
        total = 0.0
        for a0 in range(n0):
            if p0[a0] == 0.0:
                continue
            for a1 in range(n1):
                if p1[a1] == 0.0:
                    continue
                r = reward_fn(nid, a0, a1) if reward_fn else node.base_reward[a0][a1]
                total += p0[a0] * p1[a1] * (r + discount * value(node.next_node[a0][a1]))
        memo[nid] = total
        return total

    return value(0)


def exact_best_response(
    game: EventMatrixGame,
    partner_policy: Mapping[int, object],
    slot: int,
    reward_fn: RewardFn | None = None,
    discount: float = 1.0,
) -> tuple[dict[int, int], float]:
    """Optimal deterministic response for one seat against a fixed partner.

    reward_fn gives the optimizing seat's reward as f(node, a0, a1); defaults
    to the shared base reward.
    """
    n0, n1 = game.spec.action_space_sizes
    n_own = n0 if slot == 0 else n1
    n_other = n1 if slot == 0 else n0
    memo: dict[int, tuple[int, float]] = {}

    def solve(nid: int) -> tuple[int, float]:
        if nid in memo:
            return memo[nid]
        node = game.nodes[nid]
        p_other = _action_probs(partner_policy, nid, n_other)
        best_a, best_v = 0, -np.inf
        for a_own in range(n_own):
            q = 0.0
            for a_other in range(n_other):
                if p_other[a_other] == 0.0:
                    continue
                a0, a1 = (a_own, a_other) if slot == 0 else (a_other, a_own)
                r = reward_fn(nid, a0, a1) if reward_fn else node.base_reward[a0][a1]
                nxt = node.next_node[a0][a1]
                cont = 0.0 if nxt == TERMINAL_STATE else solve(nxt)[1]
                q += p_other[a_other] * (r + discount * cont)
            if q > best_v + 1e-12:
                best_a, best_v = a_own, q
        memo[nid] = (best_a, best_v)
        return memo[nid]

    policy = {nid: solve(nid)[0] for nid in reachable_nodes(game)}
    return policy, solve(0)[1]


def _joint_action_values(
    game: EventMatrixGame,
    reward_fn: RewardFn | None,
    discount: float,
) -> dict[int, list[tuple[float, int, int]]]:
    """Per reachable node, the values of every joint action under the optimal
    continuation, sorted descending (value, a0, a1)."""
    n0, n1 = game.spec.action_space_sizes
    table: dict[int, list[tuple[float, int, int]]] = {}

    def node_value(nid: int) -> float:
        if nid == TERMINAL_STATE:
            return 0.0
        return solve(nid)[0][0]

    def solve(nid: int) -> list[tuple[float, int, int]]:
        if nid in table:
            return table[nid]
        node = game.nodes[nid]
        vals = []
        for a0 in range(n0):
            for a1 in range(n1):
                r = reward_fn(nid, a0, a1) if reward_fn else node.base_reward[a0][a1]
                v = r + discount * node_value(node.next_node[a0][a1])
                vals.append((v, a0, a1))
        vals.sort(key=lambda t: (-t[0], t[1], t[2]))
        table[nid] = vals
        return vals

    for nid in reachable_nodes(game):
        solve(nid)
    return table


def exact_joint_optimum(
    game: EventMatrixGame,
    reward_fn: RewardFn | None = None,
    discount: float = 1.0,
) -> tuple[dict[int, int], dict[int, int], float]:
    """Best common-payoff joint policy by dynamic programming."""
    table = _joint_action_values(game, reward_fn, discount)
    pol0 = {nid: vals[0][1] for nid, vals in table.items()}
    pol1 = {nid: vals[0][2] for nid, vals in table.items()}
    return pol0, pol1, table[0][0][0]


def joint_value_margin(
    game: EventMatrixGame, reward_fn: RewardFn | None = None, discount: float = 1.0
) -> float:
    """Smallest gap, over reachable nodes, between the best and second-best
    joint action values under the optimal continuation. Zero means a tie."""
    table = _joint_action_values(game, reward_fn, discount)
    margin = np.inf
    for vals in table.values():
        if len(vals) > 1:
            margin = min(margin, vals[0][0] - vals[1][0])
    return float(margin)


def uniform_policy(game: EventMatrixGame, slot: int) -> dict[int, np.ndarray]:
    n = game.spec.action_space_sizes[slot]
    probs = np.full(n, 1.0 / n)
    return {nid: probs for nid in reachable_nodes(game)}
