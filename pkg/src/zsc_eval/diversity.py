"""Behavior embeddings, determinant diversity, and partner selection.

A policy's behavior feature is its expected per-episode event count vector.
A set of behaviors spans a Gram matrix of their normalized features, and the
set's diversity is that matrix's determinant (the squared volume of the
feature parallelotope): duplicated behavior collapses the volume to zero.

Partner selection searches for the subset of a candidate pool whose
best-response features (or partner features, depending on the criterion)
maximize this determinant, via greedy seeding plus swap MCMC whose
stationary law is the k-DPP induced by the kernel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .envs.base import CooperativeEnv
from .policies import Policy
from .rewards import RewardWeights
from .seeding import derive_seed
from .training import (
    CandidatePair,
    Checkpoint,
    ReturnEstimate,
    run_episode,
    self_play_return,
)

logger = logging.getLogger(__name__)

_JITTER = 1e-12


@dataclass(frozen=True)
class BehaviorFeature:
    """Mean per-episode event counts of one seat's behavior."""

    owner_id: str
    counts: tuple[float, ...]
    episodes: int

    def __post_init__(self) -> None:
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if any(c < 0 for c in self.counts):
            raise ValueError("event counts cannot be negative")

    @property
    def degenerate(self) -> bool:
        return all(c == 0.0 for c in self.counts)

    def normalized(self) -> np.ndarray:
        vec = np.asarray(self.counts, dtype=float)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError(f"feature of {self.owner_id} is all-zero")
        return vec / norm


def embed_behavior(
    env: CooperativeEnv,
    policies: Sequence[Policy],
    owner_slot: int,
    episodes: int,
    seed: int,
) -> BehaviorFeature:
    """Embed one seat's behavior within a fixed pairing."""
    feats = embed_pair_features(env, policies, episodes, seed, owner_ids=None)
    return feats[owner_slot]


def embed_pair_features(
    env: CooperativeEnv,
    policies: Sequence[Policy],
    episodes: int,
    seed: int,
    owner_ids: Sequence[str] | None = None,
) -> list[BehaviorFeature]:
    """Per-seat behavior features from shared rollouts of one pairing."""
    if episodes < 50:
        raise ValueError("behavior embedding needs at least 50 episodes")
    if len(policies) != env.spec.n_agents:
        raise ValueError("one policy per seat required")
    totals = np.zeros((len(policies), len(env.schema)), dtype=np.float64)
    for i in range(episodes):
        _, events = run_episode(env, policies, derive_seed(seed, "embed-episode", str(i)))
        totals += events
    totals /= episodes
    if owner_ids is None:
        owner_ids = [f"seat-{i}" for i in range(len(policies))]
    return [
        BehaviorFeature(owner_id=owner_ids[i], counts=tuple(float(v) for v in totals[i]),
                        episodes=episodes)
        for i in range(len(policies))
    ]


@dataclass(frozen=True)
class SimilarityMatrix:
    """Gram matrix of normalized behavior features."""

    ids: tuple[str, ...]
    matrix: np.ndarray

    @classmethod
    def build(cls, features: Sequence[BehaviorFeature]) -> SimilarityMatrix:
        if not features:
            raise ValueError("need at least one feature")
        ids = tuple(f.owner_id for f in features)
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate feature owners")
        vectors = np.stack([f.normalized() for f in features])
        matrix = vectors @ vectors.T
        matrix = (matrix + matrix.T) / 2.0
        out = cls(ids=ids, matrix=matrix)
        out.validate()
        return out

    def validate(self) -> None:
        m = self.matrix
        if m.shape != (len(self.ids), len(self.ids)):
            raise ValueError("similarity matrix shape mismatch")
        if not np.allclose(m, m.T, atol=1e-12):
            raise ValueError("similarity matrix must be symmetric")
        eigs = np.linalg.eigvalsh(m)
        if eigs.min() < -1e-9:
            raise ValueError(f"similarity matrix has negative eigenvalue {eigs.min()}")

    def submatrix(self, indices: Sequence[int]) -> np.ndarray:
        idx = np.asarray(sorted(indices), dtype=int)
        return self.matrix[np.ix_(idx, idx)]


def det_bruteforce(matrix: np.ndarray) -> float:
    """Cofactor-expansion determinant; the slow independent reference."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    if m.shape != (n, n):
        raise ValueError("matrix must be square")
    if n == 0:
        return 1.0
    if n == 1:
        return float(m[0, 0])
    total = 0.0
    rest = np.arange(1, n)
    for j in range(n):
        cols = [c for c in range(n) if c != j]
        minor = m[np.ix_(rest, cols)]
        total += ((-1.0) ** j) * m[0, j] * det_bruteforce(minor)
    return float(total)


def gram_det(matrix: np.ndarray) -> tuple[float, bool]:
    """Determinant of a PSD Gram matrix via Cholesky.

    Tries the raw factorization first; on failure adds a tiny diagonal
    jitter (recorded in the second return value); a second failure reports
    a vanished determinant.
    """
    m = np.asarray(matrix, dtype=float)
    if m.size == 0:
        return 1.0, False
    if m.shape == (1, 1):
        return float(m[0, 0]), False
    if m.shape == (2, 2):
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]), False
    try:
        chol = np.linalg.cholesky(m)
        return float(np.prod(np.diag(chol)) ** 2), False
    except np.linalg.LinAlgError:
        pass
    try:
        chol = np.linalg.cholesky(m + _JITTER * np.eye(m.shape[0]))
        return float(np.prod(np.diag(chol)) ** 2), True
    except np.linalg.LinAlgError:
        return 0.0, True


def population_diversity(similarity: SimilarityMatrix | np.ndarray,
                         subset: Sequence[int] | None = None) -> float:
    """Determinant of the (sub)population's similarity matrix, in [0, 1]
    for normalized features."""
    if isinstance(similarity, SimilarityMatrix):
        matrix = similarity.submatrix(subset) if subset is not None else similarity.matrix
    else:
        matrix = np.asarray(similarity, dtype=float)
        if subset is not None:
            idx = np.asarray(sorted(subset), dtype=int)
            matrix = matrix[np.ix_(idx, idx)]
    value, jitter = gram_det(matrix)
    if jitter:
        logger.warning("similarity determinant needed diagonal jitter")
    return max(value, 0.0)


def br_div(br_features: Sequence[BehaviorFeature]) -> float:
    """Diversity of a set measured on best-response behavior features."""
    return population_diversity(SimilarityMatrix.build(br_features))


def p_div(partner_features: Sequence[BehaviorFeature]) -> float:
    """Diversity of a set measured on the partners' own behavior features."""
    return population_diversity(SimilarityMatrix.build(partner_features))


# -- k-DPP sampling and subset search ------------------------------------------


def _subset_det(matrix: np.ndarray, subset: Sequence[int]) -> float:
    idx = sorted(subset)
    if len(idx) == 1:
        return float(matrix[idx[0], idx[0]])
    if len(idx) == 2:
        i, j = idx
        return float(matrix[i, i] * matrix[j, j] - matrix[i, j] * matrix[j, i])
    sub = matrix[np.ix_(idx, idx)]
    sign, logdet = np.linalg.slogdet(sub)
    if sign <= 0:
        return 0.0
    return float(sign * np.exp(logdet))


def greedy_map_subset(matrix: np.ndarray, size: int) -> list[int] | None:
    """Greedy determinant-maximizing seed; None when volume collapses."""
    n = matrix.shape[0]
    chosen: list[int] = []
    for _ in range(size):
        best_j, best_det = -1, 0.0
        for j in range(n):
            if j in chosen:
                continue
            d = _subset_det(matrix, chosen + [j])
            if d > best_det:
                best_j, best_det = j, d
        if best_j < 0:
            return None
        chosen.append(best_j)
    return sorted(chosen)


def kdpp_chain(
    matrix: np.ndarray,
    size: int,
    rng: np.random.Generator,
    steps: int,
    burn_in: int = 0,
    start: Sequence[int] | None = None,
) -> Iterator[tuple[int, ...]]:
    """Swap-MCMC over size-``size`` subsets, stationary on P(S) ∝ det(K_S).

    Proposals swap one member for one outsider, drawn uniformly, accepted
    with probability min(1, det_new/det_old); yields the subset after each
    post-burn-in step.
    """
    n = matrix.shape[0]
    if not 1 <= size <= n:
        raise ValueError(f"subset size {size} out of range for {n} items")
    if start is None:
        seeded = greedy_map_subset(matrix, size)
        if seeded is None:
            logger.warning("greedy seeding collapsed; starting from a uniform subset")
            seeded = sorted(int(i) for i in rng.choice(n, size=size, replace=False))
        current = list(seeded)
    else:
        current = sorted(int(i) for i in start)
    current_det = _subset_det(matrix, current)
    inside = set(current)
    outside = [j for j in range(n) if j not in inside]
    for step in range(burn_in + steps):
        if outside:
            pick = int(rng.integers(len(current)))
            drop = current[pick]
            add_idx = int(rng.integers(len(outside)))
            add = outside[add_idx]
            proposal = current[:pick] + current[pick + 1 :] + [add]
            prop_det = _subset_det(matrix, proposal)
            accept = prop_det > 0 and (
                current_det <= 0 or rng.random() < min(1.0, prop_det / current_det)
            )
            if accept:
                current = proposal
                current_det = prop_det
                outside[add_idx] = drop
        if step >= burn_in:
            yield tuple(sorted(current))


def kdpp_sample(
    matrix: np.ndarray,
    size: int,
    rng: np.random.Generator,
    steps: int = 2000,
    burn_in: int = 500,
) -> tuple[int, ...]:
    """One subset drawn by running the swap chain and taking its final state."""
    last: tuple[int, ...] = ()
    for last in kdpp_chain(matrix, size, rng, steps=steps, burn_in=burn_in):
        pass
    return last


def max_det_subset(
    matrix: np.ndarray,
    size: int,
    rng: np.random.Generator,
    chains: int = 4,
    steps: int = 2000,
    burn_in: int = 0,
) -> tuple[tuple[int, ...], float]:
    """Best subset seen across greedy seeding and several swap chains."""
    best = greedy_map_subset(matrix, size)
    if best is None:
        logger.warning("greedy seeding collapsed; starting from a uniform subset")
        best = sorted(int(i) for i in rng.choice(matrix.shape[0], size=size, replace=False))
    best_det = _subset_det(matrix, best)
    for _ in range(chains):
        for subset in kdpp_chain(matrix, size, rng, steps=steps, burn_in=burn_in,
                                 start=best):
            d = _subset_det(matrix, subset)
            if d > best_det:
                best, best_det = list(subset), d
    return tuple(sorted(best)), max(best_det, 0.0)


# -- candidate bookkeeping and selection ----------------------------------------


@dataclass(frozen=True)
class CandidateFeatures:
    """Embedded behaviors of one candidate pair (partner seat + its teammate
    best responder), plus the pair's rollout summary used for eligibility."""

    candidate_id: str
    weights: RewardWeights
    partner: BehaviorFeature
    br: BehaviorFeature
    team_counts: tuple[float, ...]
    final_return: float

    def eligible(self, success_event: int | None) -> tuple[bool, str]:
        """Whether this candidate can join a partner pool, with a reason."""
        if self.partner.degenerate or self.br.degenerate:
            return False, "degenerate all-zero behavior feature"
        if success_event is not None:
            if self.team_counts[success_event] <= 0.0:
                return False, "pair never triggers the success event"
        elif self.final_return <= 0.0:
            return False, "pair return is not positive"
        return True, "ok"


def candidate_features(
    env: CooperativeEnv,
    pair: CandidatePair,
    episodes: int,
    seed: int,
) -> CandidateFeatures:
    """Embed a trained candidate pair's behaviors from shared rollouts."""
    policies = [pair.partner, pair.br]
    feats = embed_pair_features(
        env, policies, episodes,
        derive_seed(seed, "embed", pair.id),
        owner_ids=[f"{pair.id}/partner", f"{pair.id}/br"],
    )
    team = np.asarray(feats[0].counts) + np.asarray(feats[1].counts)
    return CandidateFeatures(
        candidate_id=pair.id,
        weights=pair.weights,
        partner=feats[0],
        br=feats[1],
        team_counts=tuple(float(v) for v in team),
        final_return=pair.final_pair_return.mean,
    )


def filter_candidates(
    candidates: Sequence[CandidateFeatures],
    success_event: int | None,
) -> tuple[list[CandidateFeatures], dict[str, str]]:
    """Keep candidates whose pairs demonstrably play the task.

    ``success_event`` is the schema index that marks task completion (e.g.
    a delivery); when None, a positive pair return is required instead.
    Returns the eligible list and a reason per rejected id.
    """
    kept: list[CandidateFeatures] = []
    rejected: dict[str, str] = {}
    for cand in candidates:
        ok, reason = cand.eligible(success_event)
        if ok:
            kept.append(cand)
        else:
            rejected[cand.candidate_id] = reason
            logger.info("candidate %s filtered: %s", cand.candidate_id, reason)
    return kept, rejected


def select_checkpoints(pair: CandidatePair) -> tuple[Checkpoint | None, list[str]]:
    """Pick the mid-skill snapshot of one candidate's training run.

    The chosen checkpoint is the non-final one whose evaluation return is
    closest to half the pair's final return, ties resolved toward the later
    step. Returns None when no usable snapshot exists.
    """
    warnings: list[str] = []
    non_final = pair.checkpoints[:-1]
    if len(non_final) < 2:
        warnings.append(f"{pair.id}: fewer than 2 non-final checkpoints")
    if not non_final:
        return None, warnings
    target = pair.final_pair_return.mean / 2.0
    if non_final[0].eval_return > target:
        warnings.append(
            f"{pair.id}: first checkpoint already above half the final "
            "return; using the earliest snapshot"
        )
        return non_final[0], warnings
    best = None
    best_gap = float("inf")
    for ckpt in non_final:
        gap = abs(ckpt.eval_return - target)
        if gap < best_gap or (gap == best_gap and best is not None and ckpt.step > best.step):
            best, best_gap = ckpt, gap
    assert best is not None
    return best, warnings


@dataclass(frozen=True)
class PartnerRecord:
    """One member of an evaluation partner set."""

    member_id: str
    source_candidate_id: str
    kind: str  # "final" or "checkpoint"
    policy: Policy
    br_policy: Policy | None = None
    br_return: ReturnEstimate | None = None
    self_play_return: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("final", "checkpoint"):
            raise ValueError(f"unknown member kind {self.kind!r}")

    def with_best_response(self, policy: Policy, estimate: ReturnEstimate) -> PartnerRecord:
        return PartnerRecord(
            member_id=self.member_id,
            source_candidate_id=self.source_candidate_id,
            kind=self.kind,
            policy=self.policy,
            br_policy=policy,
            br_return=estimate,
            self_play_return=self.self_play_return,
        )


@dataclass(frozen=True)
class PartnerSet:
    """A selected set of evaluation partners and its diversity summary."""

    criterion: str
    members: tuple[PartnerRecord, ...]
    br_div_value: float
    p_div_value: float
    rejected: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [m.member_id for m in self.members]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate partner member ids")

    @property
    def member_ids(self) -> tuple[str, ...]:
        return tuple(m.member_id for m in self.members)

    @property
    def evaluation_ready(self) -> bool:
        return all(m.br_policy is not None and m.br_return is not None
                   for m in self.members)

    def member(self, member_id: str) -> PartnerRecord:
        for m in self.members:
            if m.member_id == member_id:
                return m
        raise KeyError(member_id)


@dataclass(frozen=True)
class SelectionConfig:
    """How to pick the partner subset from the eligible candidate pool."""

    subset_size: int
    num_candidates: int | None = None
    criterion: str = "br-div"
    dpp_iterations: int = 4
    mcmc_steps: int = 2000
    burn_in: int = 0
    embed_episodes: int = 100
    include_checkpoints: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")
        if self.num_candidates is not None and self.num_candidates < self.subset_size:
            raise ValueError("num_candidates must be >= subset_size")
        if self.criterion not in ("br-div", "p-div"):
            raise ValueError(f"unknown selection criterion {self.criterion!r}")
        if self.embed_episodes < 50:
            raise ValueError("embed_episodes must be >= 50")
        if self.mcmc_steps < 1 or self.dpp_iterations < 1:
            raise ValueError("mcmc_steps and dpp_iterations must be >= 1")


def select_partners(
    candidates: Sequence[CandidateFeatures],
    pairs: dict[str, CandidatePair],
    config: SelectionConfig,
    rejected: dict[str, str] | None = None,
) -> PartnerSet:
    """Search the eligible pool for the determinant-maximizing subset.

    ``candidates`` must already be filtered; ``pairs`` maps candidate ids to
    their training artifacts (for final policies and checkpoints). The chosen
    candidates contribute their final partner policies, plus one mid-skill
    checkpoint each when ``include_checkpoints`` is set.
    """
    if len(candidates) < config.subset_size:
        raise ValueError(
            f"need at least {config.subset_size} eligible candidates, "
            f"got {len(candidates)}"
        )
    if config.num_candidates is not None and len(candidates) != config.num_candidates:
        raise ValueError(
            f"pool has {len(candidates)} candidates, config says "
            f"{config.num_candidates}"
        )
    key = "br" if config.criterion == "br-div" else "partner"
    features = [getattr(c, key) for c in candidates]
    sim = SimilarityMatrix.build(features)
    rng = np.random.default_rng(derive_seed(config.seed, "select", config.criterion))
    subset, _ = max_det_subset(
        sim.matrix, config.subset_size, rng,
        chains=config.dpp_iterations, steps=config.mcmc_steps, burn_in=config.burn_in,
    )
    chosen = [candidates[i] for i in subset]

    members: list[PartnerRecord] = []
    checkpoint_warnings: list[str] = []
    for cand in chosen:
        pair = pairs[cand.candidate_id]
        members.append(PartnerRecord(
            member_id=f"{cand.candidate_id}/final",
            source_candidate_id=cand.candidate_id,
            kind="final",
            policy=pair.partner,
        ))
        if config.include_checkpoints:
            ckpt, warns = select_checkpoints(pair)
            checkpoint_warnings.extend(warns)
            if ckpt is not None:
                members.append(PartnerRecord(
                    member_id=f"{cand.candidate_id}/ckpt-{ckpt.step}",
                    source_candidate_id=cand.candidate_id,
                    kind="checkpoint",
                    policy=ckpt.policy,
                ))
    for warning in checkpoint_warnings:
        logger.warning("%s", warning)

    return PartnerSet(
        criterion=config.criterion,
        members=tuple(members),
        br_div_value=br_div([c.br for c in chosen]),
        p_div_value=p_div([c.partner for c in chosen]),
        rejected=dict(rejected or {}),
    )


def record_self_play(
    partner_set: PartnerSet,
    env: CooperativeEnv,
    episodes: int,
    seed: int,
) -> PartnerSet:
    """Attach each member's self-play return (for later skill stratification)."""
    members = []
    for m in partner_set.members:
        estimate = self_play_return(
            env, m.policy, episodes, derive_seed(seed, "self-play", m.member_id)
        )
        members.append(replace(m, self_play_return=estimate.mean))
    return replace(partner_set, members=tuple(members))
