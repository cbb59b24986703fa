"""Baseline ego agents and the comparative benchmark runner.

The baselines span the classic zero-shot-coordination ladder at tabletop
scale: a uniform-random actor, a scripted actor, plain self-play, population
play against concurrently learning partners, and a two-stage scheme that
pre-trains a self-play population (finals plus mid-skill checkpoints) and
then trains the ego against uniform draws from that frozen pool.

The runner scores every ego against the identical partner set with identical
episode seeds, reports best-response proximity with confidence intervals,
and ranks egos by point estimate (ties broken by the interval's lower bound).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .diversity import (
    BehaviorFeature,
    CandidateFeatures,
    PartnerSet,
    SelectionConfig,
    SimilarityMatrix,
    embed_pair_features,
    max_det_subset,
    population_diversity,
    select_checkpoints,
)
from .envs.base import TERMINAL_STATE, CooperativeEnv
from .metrics import BRProxReport, MetricConfig, RankCorrelation, br_prox, spearman
from .policies import Policy, ScriptedPolicy, UniformPolicy
from .seeding import derive_seed
from .training import (
    TrainConfig,
    _env_noop,
    _make_learner,
    _q_episode_update,
    approximate_ne,
)

logger = logging.getLogger(__name__)

EGO_ALGORITHMS = ("random", "scripted", "sp", "pp", "fcp-lite")


@dataclass(frozen=True)
class EgoSpec:
    """Recipe for one benchmark ego agent."""

    algorithm: str
    train: TrainConfig = field(default_factory=TrainConfig)
    population_size: int = 4
    ego_steps: int | None = None  # stage-2 budget for pp / fcp-lite
    scripted_actions: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.algorithm not in EGO_ALGORITHMS:
            raise ValueError(f"unknown ego algorithm {self.algorithm!r}")
        if self.algorithm in ("pp", "fcp-lite") and self.population_size < 2:
            raise ValueError("population methods need population_size >= 2")
        if self.ego_steps is not None and self.ego_steps < 1:
            raise ValueError("ego_steps must be positive")


def _ego_config(spec: EgoSpec) -> TrainConfig:
    if spec.ego_steps is None:
        return spec.train
    return replace(spec.train, total_steps=spec.ego_steps)


def _train_vs_pool(
    env: CooperativeEnv,
    pool: Sequence[Policy],
    live: Sequence[object] | None,
    config: TrainConfig,
    seed: int,
) -> Policy:
    """Train a seat-1 ego against per-episode draws from a partner pool.

    ``pool`` holds frozen partner policies; when ``live`` learners are given
    instead, the drawn partner also updates that episode (population play).
    """
    if env.spec.n_agents != 2:
        raise ValueError("pool training expects a two-seat environment")
    noop = _env_noop(env)
    ego = _make_learner(env, 1, config, noop, derive_seed(seed, "ego-learner"))
    if config.algorithm != "independent-q":
        raise ValueError("pool training supports independent-q only")
    discount = (
        config.discount_override
        if config.discount_override is not None
        else env.spec.discount
    )
    draw_rng = np.random.default_rng(derive_seed(seed, "pool-draw"))
    act_rng = np.random.default_rng(derive_seed(seed, "pool-act"))
    total = config.total_steps
    optimism = config.optimism_fraction
    n = len(live) if live is not None else len(pool)
    if n == 0:
        raise ValueError("empty partner pool")

    steps = 0
    episode = 0
    while steps < total:
        discovering = steps / total < optimism
        pick = int(draw_rng.integers(n))
        partner_learner = live[pick] if live is not None else None
        partner = pool[pick] if live is None else None
        if partner is not None:
            partner.reset()
        ego.prefer_untried = discovering
        if partner_learner is not None:
            partner_learner.prefer_untried = discovering
        state = env.reset(derive_seed(seed, "pool-episode", str(episode)))
        trajectory = []
        for _ in range(env.spec.horizon):
            exploration = config.exploration.value(steps / total)
            if partner_learner is not None:
                a0 = partner_learner.act(state, exploration)
            else:
                a0 = partner.act(state, act_rng)
            a1 = ego.act(state, exploration)
            next_state, base, _ = env.step_fast(state, (a0, a1))
            trajectory.append((state, (a0, a1), {0: base, 1: base}, next_state))
            state = next_state
            steps += 1
            if state == TERMINAL_STATE:
                break
        progress = min(steps / total, 1.0)
        lr = config.learning_rate.value(progress)
        optimistic_phase = progress < optimism or optimism >= 1.0
        down = 0.0 if optimistic_phase else lr * (progress - optimism) / (1.0 - optimism)
        learners = {1: ego}
        if partner_learner is not None:
            learners[0] = partner_learner
        _q_episode_update(trajectory, learners, discount, lr, optimistic_phase, down)
        episode += 1
    return ego.snapshot()


@dataclass(frozen=True)
class PoolMember:
    """One frozen policy in a co-play pool."""

    member_id: str
    kind: str  # "final" or "checkpoint"
    policy: Policy
    feature: BehaviorFeature | None = None


def fcp_pool(env: CooperativeEnv, spec: EgoSpec) -> list[PoolMember]:
    """Stage-1 pool: per seed, the final self-play policy plus its mid-skill
    checkpoint — ``2 * population_size`` members in all."""
    members: list[PoolMember] = []
    for i in range(spec.population_size):
        run_seed = derive_seed(spec.seed, "fcp-pool", str(i))
        pair = approximate_ne(env, None, spec.train, seed=run_seed)
        members.append(PoolMember(f"run{i}/final", "final", pair.partner))
        ckpt, _ = select_checkpoints(pair)
        if ckpt is None:
            raise ValueError(
                "training budget leaves no non-final checkpoint; "
                "increase total_steps or lower checkpoint_interval"
            )
        members.append(PoolMember(f"run{i}/ckpt-{ckpt.step}", "checkpoint", ckpt.policy))
    return members


def pool_features(
    env: CooperativeEnv,
    members: Sequence[PoolMember],
    episodes: int,
    seed: int,
) -> list[PoolMember]:
    """Attach self-play behavior features (seat-0 attribution) to a pool."""
    out = []
    for m in members:
        feats = embed_pair_features(
            env, [m.policy, m.policy], episodes,
            derive_seed(seed, "pool-embed", m.member_id),
            owner_ids=[m.member_id, f"{m.member_id}/seat1"],
        )
        out.append(replace(m, feature=feats[0]))
    return out


def pool_diversity(members: Sequence[PoolMember]) -> float:
    feats = [m.feature for m in members]
    if any(f is None for f in feats):
        raise ValueError("pool members lack behavior features")
    usable = [f for f in feats if not f.degenerate]
    if not usable:
        return 0.0
    return population_diversity(SimilarityMatrix.build(usable))


def train_ego(env: CooperativeEnv, spec: EgoSpec) -> Policy:
    """Train (or construct) one benchmark ego agent for the responder seat."""
    n_actions = env.spec.action_space_sizes[1]
    if spec.algorithm == "random":
        return UniformPolicy(n_actions)
    if spec.algorithm == "scripted":
        return ScriptedPolicy(
            actions=spec.scripted_actions,
            n_actions=n_actions,
            fallback=_env_noop(env),
        )
    if spec.algorithm == "sp":
        pair = approximate_ne(env, None, spec.train, seed=derive_seed(spec.seed, "sp-ego"))
        return pair.br
    if spec.algorithm == "pp":
        noop = _env_noop(env)
        live = [
            _make_learner(env, 0, spec.train, noop, derive_seed(spec.seed, "pp-partner", str(i)))
            for i in range(spec.population_size)
        ]
        return _train_vs_pool(env, [], live, _ego_config(spec),
                              derive_seed(spec.seed, "pp-ego"))
    # fcp-lite
    pool = fcp_pool(env, spec)
    return _train_vs_pool(env, [m.policy for m in pool], None, _ego_config(spec),
                          derive_seed(spec.seed, "fcp-ego"))


@dataclass(frozen=True)
class BenchmarkResult:
    """Per-ego proximity reports plus the induced leaderboard."""

    reports: dict[str, BRProxReport]
    mean_returns: dict[str, float]
    ranking: tuple[str, ...]
    episodes: int
    seed: int
    partner_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "reports": {k: v.to_dict() for k, v in sorted(self.reports.items())},
            "mean_returns": dict(sorted(self.mean_returns.items())),
            "ranking": list(self.ranking),
            "episodes": self.episodes,
            "seed": self.seed,
            "partner_ids": list(self.partner_ids),
        }

    def leaderboard(self) -> str:
        lines = [f"{'rank':<5}{'ego':<16}{'br-prox':>9}{'ci':>18}{'mean-ret':>10}"]
        for i, name in enumerate(self.ranking, start=1):
            rep = self.reports[name]
            ci = f"[{rep.ci[0]:.3f},{rep.ci[1]:.3f}]"
            lines.append(
                f"{i:<5}{name:<16}{rep.point_estimate:>9.3f}{ci:>18}"
                f"{self.mean_returns[name]:>10.2f}"
            )
        return "\n".join(lines)


def rank_egos(reports: Mapping[str, BRProxReport]) -> tuple[str, ...]:
    """Order egos by proximity point estimate, ties by CI lower bound."""
    return tuple(sorted(
        reports,
        key=lambda name: (-reports[name].point_estimate, -reports[name].ci[0], name),
    ))


def run_benchmark(
    env: CooperativeEnv,
    egos: Mapping[str, Policy],
    partner_set: PartnerSet,
    episodes: int,
    config: MetricConfig,
    seed: int,
) -> BenchmarkResult:
    """Score every ego against the same partners under identical seeds."""
    if len(egos) < 2:
        raise ValueError("benchmark needs at least 2 egos")
    reports: dict[str, BRProxReport] = {}
    mean_returns: dict[str, float] = {}
    for name in sorted(egos):
        report = br_prox(egos[name], partner_set, env, episodes, config, seed)
        reports[name] = report
        mean_returns[name] = float(np.mean(list(report.ego_returns.values())))
    return BenchmarkResult(
        reports=reports,
        mean_returns=mean_returns,
        ranking=rank_egos(reports),
        episodes=episodes,
        seed=seed,
        partner_ids=partner_set.member_ids,
    )


@dataclass(frozen=True)
class CriterionRow:
    """One cell of the selection-criterion comparison table."""

    size: int
    criterion: str
    pd_of_brs: float


def compare_selection_criteria(
    candidates: Sequence[CandidateFeatures],
    sizes: Sequence[int],
    config: SelectionConfig,
    seed: int,
) -> list[CriterionRow]:
    """Subsets chosen under each criterion, scored by BR-feature diversity.

    For every size, runs the subset search once per criterion and records
    the population diversity of the chosen members' best-response features
    — the quantity the BR-driven criterion targets directly and the
    partner-feature criterion only reaches by proxy.
    """
    if not sizes:
        raise ValueError("no subset sizes given")
    if len(candidates) < max(sizes):
        raise ValueError(
            f"need at least {max(sizes)} eligible candidates, got {len(candidates)}"
        )
    br_sim = SimilarityMatrix.build([c.br for c in candidates])
    p_sim = SimilarityMatrix.build([c.partner for c in candidates])
    rows: list[CriterionRow] = []
    for size in sizes:
        for criterion, sim in (("br-div", br_sim), ("p-div", p_sim)):
            rng = np.random.default_rng(
                derive_seed(seed, "compare-select", f"{criterion}:{size}")
            )
            subset, _ = max_det_subset(
                sim.matrix, size, rng,
                chains=config.dpp_iterations, steps=config.mcmc_steps,
                burn_in=config.burn_in,
            )
            value = population_diversity(br_sim, subset)
            rows.append(CriterionRow(size=size, criterion=criterion, pd_of_brs=value))
    return rows


def criterion_table_csv(rows: Sequence[CriterionRow]) -> str:
    lines = ["size,criterion,pd_of_brs"]
    for row in rows:
        lines.append(f"{row.size},{row.criterion},{row.pd_of_brs!r}")
    return "\n".join(lines) + "\n"


def compare_evaluation_methods(
    rankings: Mapping[str, Mapping[str, float]],
    reference: str,
) -> dict[str, RankCorrelation]:
    """Spearman agreement of each method's ego ranking with a reference.

    Every method must rank the same ego set; values are ranks or scores on
    a common orientation (lower = better-ranked).
    """
    if reference not in rankings:
        raise ValueError(f"reference method {reference!r} missing from rankings")
    ref = rankings[reference]
    egos = sorted(ref)
    out: dict[str, RankCorrelation] = {}
    for method, ranking in rankings.items():
        if sorted(ranking) != egos:
            raise ValueError(f"method {method!r} ranks a different ego set")
        out[method] = spearman(
            [ref[e] for e in egos], [ranking[e] for e in egos]
        )
    return out
