"""Independent tabular learners for partner generation and best responses.

Both seats learn simultaneously with their own reward streams (the designated
seat sees the shaped reward, the other the base reward), which approximates a
preference-respecting equilibrium pair. Updates run in two phases with
per-episode backward replay. During the optimistic phase a value only ever
rises to the best target seen (max-based updates, which are exact for
deterministic common-payoff games and immune to the partner's exploration
noise), so learners lock onto high-value coordination instead of retreating
to safe-on-average actions. The remaining steps ramp in ordinary symmetric
temporal-difference updates, re-fitting values to the partner as it actually
behaves once exploration has decayed. Backward replay propagates sparse
rewards through a whole episode at once.

A tabular softmax policy-gradient learner ("independent-pg") is provided as
an alternative algorithm; the exploration schedule then acts as the entropy
bonus weight.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .envs.base import TERMINAL_STATE, CooperativeEnv
from .policies import Policy, TabularPolicy
from .rewards import RewardWeights, ShapedRewards
from .seeding import derive_seed, short_id

ALGORITHMS = ("independent-q", "independent-pg")


@dataclass(frozen=True)
class LinearSchedule:
    """Linear interpolation from start to end over the first end_fraction of
    training, constant afterwards."""

    start: float
    end: float
    end_fraction: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.end_fraction <= 1.0:
            raise ValueError("end_fraction must lie in (0, 1]")

    def value(self, progress: float) -> float:
        progress = min(max(progress, 0.0), 1.0)
        if progress >= self.end_fraction:
            return self.end
        frac = progress / self.end_fraction
        return self.start + (self.end - self.start) * frac

    def non_increasing(self) -> bool:
        return self.end <= self.start


@dataclass(frozen=True)
class TrainConfig:
    """Budgets and schedules for independent learning.

    Value updates are optimistic (only move up) before the
    ``optimism_fraction`` point and keep discovered action chains immune to
    partner exploration noise — exact for deterministic common-payoff games,
    where the default of 1.0 (optimistic throughout) is the right choice.
    A fraction below 1 appends a settling phase where symmetric updates ramp
    in and erode over-estimates, at the cost of re-learning any value that
    depended on exploratory partner behavior. The default exploration
    schedule reaches zero at the halfway point; keep it at zero during any
    settling phase, otherwise leftover exploration noise erodes long action
    chains.
    """

    algorithm: str = "independent-q"
    total_steps: int = 400_000
    learning_rate: LinearSchedule = field(
        default_factory=lambda: LinearSchedule(0.5, 0.05)
    )
    exploration: LinearSchedule = field(
        default_factory=lambda: LinearSchedule(0.2, 0.0, end_fraction=0.5)
    )
    eval_interval: int | None = None
    checkpoint_interval: int | None = None
    eval_episodes: int = 3
    final_eval_episodes: int = 100
    discount_override: float | None = None
    optimism_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        for name in ("eval_interval", "checkpoint_interval"):
            interval = getattr(self, name)
            if interval is not None and not 1 <= interval <= self.total_steps:
                raise ValueError(f"{name} must lie in [1, total_steps]")
        for name in ("learning_rate", "exploration"):
            schedule = getattr(self, name)
            if not schedule.non_increasing():
                raise ValueError(f"{name} schedule must be non-increasing")
        if self.learning_rate.start <= 0 or self.learning_rate.end < 0:
            raise ValueError("learning rates must be positive")
        if not 0 <= self.exploration.end <= self.exploration.start <= 1:
            raise ValueError("exploration must stay within [0, 1]")
        if not 0.0 < self.optimism_fraction <= 1.0:
            raise ValueError("optimism_fraction must lie in (0, 1]")
        if self.eval_episodes < 1 or self.final_eval_episodes < 1:
            raise ValueError("evaluation episode counts must be >= 1")

    def resolved_checkpoint_interval(self) -> int:
        if self.checkpoint_interval is not None:
            return self.checkpoint_interval
        return max(1, self.total_steps // 20)

    def resolved_eval_interval(self) -> int:
        if self.eval_interval is not None:
            return self.eval_interval
        return self.resolved_checkpoint_interval()


@dataclass(frozen=True)
class ReturnEstimate:
    mean: float
    std_error: float
    n_episodes: int
    per_episode: tuple[float, ...]

    @classmethod
    def from_episodes(cls, values) -> ReturnEstimate:
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            raise ValueError("need at least one episode")
        se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        return cls(
            mean=float(arr.mean()),
            std_error=se,
            n_episodes=int(arr.size),
            per_episode=tuple(float(v) for v in arr),
        )


@dataclass(frozen=True)
class Checkpoint:
    step: int
    policy: Policy
    eval_return: float


@dataclass
class CandidatePair:
    """A trained behavior-preferring partner with its best response."""

    id: str
    weights: RewardWeights | None
    partner: Policy
    br: Policy
    final_pair_return: ReturnEstimate
    checkpoints: tuple[Checkpoint, ...]
    degenerate: bool = False
    self_play_return: float | None = None

    def __post_init__(self) -> None:
        steps = [c.step for c in self.checkpoints]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("checkpoint steps must be strictly increasing")

    @property
    def eval_curve(self) -> tuple[tuple[int, float], ...]:
        return tuple((c.step, c.eval_return) for c in self.checkpoints)


# -- rollouts ----------------------------------------------------------------


def run_episode(
    env: CooperativeEnv, policies, episode_seed: int
) -> tuple[float, np.ndarray]:
    """One undiscounted episode; returns (base return, per-agent event sums)."""
    state = env.reset(episode_seed)
    rngs = [
        np.random.default_rng(derive_seed(episode_seed, "act", str(i)))
        for i in range(len(policies))
    ]
    for policy in policies:
        policy.reset()
    total = 0.0
    event_sums = np.zeros((len(policies), len(env.schema)), dtype=np.int64)
    for _ in range(env.spec.horizon):
        actions = tuple(p.act(state, rngs[i]) for i, p in enumerate(policies))
        state, reward, events = env.step_fast(state, actions)
        total += reward
        event_sums += np.asarray(events, dtype=np.int64)
        if state == TERMINAL_STATE:
            break
    return total, event_sums


def evaluate_pair(
    env: CooperativeEnv, policies, episodes: int, seed: int
) -> ReturnEstimate:
    """Mean undiscounted base return across seeded evaluation episodes."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if len(policies) != env.spec.n_agents:
        raise ValueError("one policy per agent required")
    values = [
        run_episode(env, policies, derive_seed(seed, "episode", str(i)))[0]
        for i in range(episodes)
    ]
    return ReturnEstimate.from_episodes(values)


def self_play_return(
    env: CooperativeEnv, policy: Policy, episodes: int, seed: int
) -> ReturnEstimate:
    """Return of a policy paired with a copy of itself in every seat.

    Seats the policy beyond its training seat; states it never saw there fall
    back to its default action.
    """
    copies = [copy.deepcopy(policy) for _ in range(env.spec.n_agents)]
    return evaluate_pair(env, copies, episodes, seed)


# -- learners ------------------------------------------------------------------


_UNSET_VALUE = -1e18  # placeholder: any real target overwrites it on first visit


class _QLearner:
    def __init__(self, n_actions: int, noop: int, rng: np.random.Generator):
        self.n_actions = n_actions
        self.noop = noop
        self.rng = rng
        self.rows: dict[int, np.ndarray] = {}
        # while set, greedy choice probes untried actions first, giving
        # systematic coverage instead of waiting on epsilon luck
        self.prefer_untried = False

    def row(self, state: int) -> np.ndarray:
        r = self.rows.get(state)
        if r is None:
            r = np.full(self.n_actions, _UNSET_VALUE, dtype=np.float64)
            self.rows[state] = r
        return r

    def act(self, state: int, exploration: float) -> int:
        if exploration > 0.0 and self.rng.random() < exploration:
            return int(self.rng.integers(self.n_actions))
        row = self.row(state)
        if self.prefer_untried:
            untried = np.flatnonzero(row == _UNSET_VALUE)
            if untried.size:
                return int(untried[self.rng.integers(untried.size)])
        best = row.max()
        ties = np.flatnonzero(row >= best - 1e-9 * max(1.0, abs(best)))
        if len(ties) == 1:
            return int(ties[0])
        return int(ties[self.rng.integers(len(ties))])

    def max_q(self, state: int) -> float:
        row = self.rows.get(state)
        return _UNSET_VALUE if row is None else float(row.max())

    def greedy_action(self, state: int) -> int:
        row = self.rows.get(state)
        return self.noop if row is None else int(np.argmax(row))

    def snapshot(self) -> TabularPolicy:
        # states probed but never value-updated carry no information: leave
        # them out so the snapshot falls back to a uniform draw there
        informed = {s: r for s, r in self.rows.items() if r.max() > _UNSET_VALUE}
        if not informed:
            return TabularPolicy(table={}, n_actions=self.n_actions, default_action=None)
        states = np.fromiter(informed.keys(), dtype=np.int64, count=len(informed))
        actions = np.argmax(np.stack(list(informed.values())), axis=1).astype(np.int16)
        return TabularPolicy(
            states=states, actions=actions, n_actions=self.n_actions,
            default_action=None,
        )


class _PGLearner:
    """Tabular softmax policy gradient with a per-state value baseline."""

    def __init__(self, n_actions: int, noop: int, rng: np.random.Generator,
                 lr_baseline: float = 0.1):
        self.n_actions = n_actions
        self.noop = noop
        self.rng = rng
        self.lr_baseline = lr_baseline
        self.logits: dict[int, np.ndarray] = {}
        self.baseline: dict[int, float] = {}

    def _row(self, state: int) -> np.ndarray:
        r = self.logits.get(state)
        if r is None:
            r = np.zeros(self.n_actions, dtype=np.float64)
            self.logits[state] = r
        return r

    def _probs(self, row: np.ndarray) -> np.ndarray:
        z = row - row.max()
        e = np.exp(z)
        return e / e.sum()

    def act(self, state: int, exploration: float) -> int:
        probs = self._probs(self._row(state))
        return int(np.searchsorted(np.cumsum(probs), self.rng.random()))

    def greedy_action(self, state: int) -> int:
        row = self.logits.get(state)
        return self.noop if row is None else int(np.argmax(row))

    def episode_update(self, transitions, discount, lr, entropy_coef) -> None:
        ret = 0.0
        for state, action, reward in reversed(transitions):
            ret = reward + discount * ret
            row = self._row(state)
            probs = self._probs(row)
            base = self.baseline.get(state, 0.0)
            self.baseline[state] = base + self.lr_baseline * (ret - base)
            advantage = ret - base
            grad = -probs.copy()
            grad[action] += 1.0
            with np.errstate(divide="ignore"):
                logp = np.where(probs > 0, np.log(probs), 0.0)
            entropy = -float((probs * logp).sum())
            entropy_grad = -probs * (logp + entropy)
            row += lr * (advantage * grad + entropy_coef * entropy_grad)
            if not np.all(np.isfinite(row)):
                raise FloatingPointError(f"non-finite policy logits at state {state}")

    def snapshot(self) -> TabularPolicy:
        if not self.logits:
            return TabularPolicy(table={}, n_actions=self.n_actions, default_action=self.noop)
        states = np.fromiter(self.logits.keys(), dtype=np.int64, count=len(self.logits))
        actions = np.argmax(np.stack(list(self.logits.values())), axis=1).astype(np.int16)
        return TabularPolicy(
            states=states, actions=actions, n_actions=self.n_actions,
            default_action=self.noop,
        )


class _LiveGreedy(Policy):
    """Zero-copy greedy view of a learner, for mid-training evaluation."""

    kind = "live-greedy"

    def __init__(self, learner):
        self.learner = learner
        self.n_actions = learner.n_actions

    def act(self, state: int, rng: np.random.Generator) -> int:
        return self.learner.greedy_action(state)

    def action_probs(self, state: int) -> np.ndarray:
        probs = np.zeros(self.n_actions)
        probs[self.learner.greedy_action(state)] = 1.0
        return probs


def _env_noop(env: CooperativeEnv) -> int:
    return getattr(env, "noop_action", 0)


def _q_episode_update(
    trajectory: list,
    learners: dict[int, _QLearner],
    discount: float,
    lr: float,
    optimistic_phase: bool,
    down: float,
) -> None:
    """Backward replay of one episode through every learning seat.

    During the optimistic phase values only move up (exact for deterministic
    common-payoff games, immune to partner exploration noise); afterwards
    negative errors apply at the ramped-in ``down`` rate so the pair settles
    on a consistent greedy equilibrium.
    """
    last = len(trajectory) - 1
    for i in range(last, -1, -1):
        s, acts, rewards, nxt = trajectory[i]
        for slot, learner in learners.items():
            r = rewards[slot]
            # backward order guarantees the successor's row is already
            # written this episode, so the bootstrap value is real
            target = r if i == last else r + discount * learner.max_q(nxt)
            if not math.isfinite(target):
                raise FloatingPointError(f"non-finite value target at state {s}")
            row = learner.row(s)
            a = acts[slot]
            delta = target - row[a]
            if delta >= 0:
                row[a] = target if optimistic_phase else row[a] + lr * delta
            elif down > 0.0:
                row[a] += down * delta


def _train_loop(
    env: CooperativeEnv,
    learner_slots: dict[int, object],
    frozen: dict[int, Policy],
    shaping: ShapedRewards | None,
    designated: int,
    config: TrainConfig,
    seed: int,
    snapshot_slot: int,
) -> tuple[list[Checkpoint], list[tuple[int, float]]]:
    n_agents = env.spec.n_agents
    if set(learner_slots) | set(frozen) != set(range(n_agents)):
        raise ValueError("every seat needs either a learner or a frozen policy")
    horizon = env.spec.horizon
    discount = (
        config.discount_override
        if config.discount_override is not None
        else env.spec.discount
    )
    total = config.total_steps
    ckpt_interval = config.resolved_checkpoint_interval()
    eval_interval = config.resolved_eval_interval()
    use_pg = config.algorithm == "independent-pg"

    frozen_rngs = {
        slot: np.random.default_rng(derive_seed(seed, "frozen-act", str(slot)))
        for slot in frozen
    }
    optimism = config.optimism_fraction

    def eval_policies() -> list[Policy]:
        return [
            _LiveGreedy(learner_slots[i]) if i in learner_slots else frozen[i]
            for i in range(n_agents)
        ]

    checkpoints: list[Checkpoint] = []
    curve: list[tuple[int, float]] = []
    steps = 0
    episode = 0
    next_eval = eval_interval
    next_ckpt = ckpt_interval
    while steps < total:
        if not use_pg:
            discovering = steps / total < optimism
            for learner in learner_slots.values():
                learner.prefer_untried = discovering
        state = env.reset(derive_seed(seed, "train-episode", str(episode)))
        for policy in frozen.values():
            policy.reset()
        trajectory = []
        for _ in range(horizon):
            exploration = config.exploration.value(steps / total)
            actions = tuple(
                learner_slots[i].act(state, exploration)
                if i in learner_slots
                else frozen[i].act(state, frozen_rngs[i])
                for i in range(n_agents)
            )
            next_state, base, events = env.step_fast(state, actions)
            rewards = {}
            for slot in learner_slots:
                if slot == designated and shaping is not None:
                    rewards[slot] = shaping.reward(base, events[slot])
                else:
                    rewards[slot] = base
            trajectory.append((state, actions, rewards, next_state))
            state = next_state
            steps += 1
            if state == TERMINAL_STATE:
                break

        progress = min(steps / total, 1.0)
        lr = config.learning_rate.value(progress)
        if use_pg:
            entropy_coef = config.exploration.value(progress)
            for slot, learner in learner_slots.items():
                learner.episode_update(
                    [(s, a[slot], r[slot]) for s, a, r, _ in trajectory],
                    discount,
                    lr,
                    entropy_coef,
                )
        else:
            optimistic_phase = progress < optimism or optimism >= 1.0
            # symmetric updates ramp in over the correction phase, if any
            down = (
                0.0 if optimistic_phase
                else lr * (progress - optimism) / (1.0 - optimism)
            )
            _q_episode_update(
                trajectory, learner_slots, discount, lr, optimistic_phase, down
            )
        episode += 1

        if steps >= next_eval or steps >= next_ckpt or steps >= total:
            estimate = evaluate_pair(
                env,
                eval_policies(),
                config.eval_episodes,
                derive_seed(seed, "train-eval", str(steps)),
            )
            if steps >= next_eval:
                curve.append((steps, estimate.mean))
                while next_eval <= steps:
                    next_eval += eval_interval
            if steps >= next_ckpt or steps >= total:
                checkpoints.append(
                    Checkpoint(
                        step=steps,
                        policy=learner_slots[snapshot_slot].snapshot(),
                        eval_return=estimate.mean,
                    )
                )
                while next_ckpt <= steps:
                    next_ckpt += ckpt_interval
    return checkpoints, curve


def _is_degenerate(curve: list[tuple[int, float]]) -> bool:
    if len(curve) < 2:
        return False
    first = curve[0][1]
    return max(value for _, value in curve) <= first + 1e-9


def approximate_ne(
    env: CooperativeEnv,
    weights: RewardWeights | None,
    config: TrainConfig,
    seed: int | None = None,
) -> CandidatePair:
    """Train both seats independently; seat 0 prefers the weighted events.

    Returns the behavior-preferring partner (seat 0) with its evaluation
    curve as checkpoints. The returned best response is re-derived against
    the frozen final partner rather than taken from the co-trained seat:
    against a fixed partner the optimistic updates face a stationary
    deterministic problem and converge exactly, whereas the co-trained
    seat's values still carry maxima recorded under partner behaviors that
    the final greedy partner no longer plays.
    """
    if env.spec.n_agents != 2:
        raise ValueError("pair training expects a two-seat environment")
    if seed is None:
        seed = config.seed
    shaping = ShapedRewards.from_weights(weights) if weights is not None else None
    noop = _env_noop(env)
    learner_slots = {
        slot: _make_learner(env, slot, config, noop, derive_seed(seed, "learner", str(slot)))
        for slot in (0, 1)
    }
    checkpoints, curve = _train_loop(
        env, learner_slots, {}, shaping, 0, config, seed, snapshot_slot=0
    )
    partner = checkpoints[-1].policy
    br, final = train_best_response(
        env, partner, config, seed=derive_seed(seed, "br-refresh")
    )
    return CandidatePair(
        id=short_id([weights.id if weights is not None else "w:none", seed], "cand:"),
        weights=weights,
        partner=partner,
        br=br,
        final_pair_return=final,
        checkpoints=tuple(checkpoints),
        degenerate=_is_degenerate(curve),
    )


def train_best_response(
    env: CooperativeEnv,
    partner: Policy,
    config: TrainConfig,
    seed: int | None = None,
    slot: int = 1,
) -> tuple[Policy, ReturnEstimate]:
    """Train one seat against a frozen partner on the base reward.

    Returns the greedy response policy and a fresh return estimate of the
    (partner, response) pair.
    """
    if env.spec.n_agents != 2:
        raise ValueError("pair training expects a two-seat environment")
    if seed is None:
        seed = config.seed
    partner_slot = 1 - slot
    noop = _env_noop(env)
    learner = _make_learner(env, slot, config, noop, derive_seed(seed, "learner", str(slot)))
    checkpoints, _ = _train_loop(
        env,
        {slot: learner},
        {partner_slot: partner},
        None,
        designated=-1,
        config=config,
        seed=seed,
        snapshot_slot=slot,
    )
    response = checkpoints[-1].policy
    policies = [partner, response] if slot == 1 else [response, partner]
    estimate = evaluate_pair(
        env, policies, config.final_eval_episodes, derive_seed(seed, "final-eval")
    )
    return response, estimate


def _make_learner(env: CooperativeEnv, slot: int, config: TrainConfig, noop: int, seed: int):
    n_actions = env.spec.action_space_sizes[slot]
    rng = np.random.default_rng(seed)
    if config.algorithm == "independent-pg":
        return _PGLearner(n_actions, noop, rng)
    return _QLearner(n_actions, noop, rng)
