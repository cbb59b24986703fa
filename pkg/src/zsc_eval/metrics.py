"""Coordination capability metrics and robust aggregation.

Best-response proximity scores an ego agent by pairing it with each
evaluation partner and dividing the achieved return by the return of that
partner's trained best response — a per-partner "fraction of attainable
teamwork". Scores aggregate by inter-quartile mean with stratified-bootstrap
confidence intervals, and rankings compare via Spearman correlation.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .diversity import PartnerSet
from .envs.base import CooperativeEnv
from .policies import Policy
from .seeding import derive_seed
from .training import run_episode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricConfig:
    """Aggregation and uncertainty settings for proximity reports."""

    aggregator: str = "iqm"
    ci_level: float = 0.95
    bootstrap_resamples: int = 1000
    ratio_clip: float | None = None

    def __post_init__(self) -> None:
        if self.aggregator not in ("iqm", "mean", "median"):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must be in (0, 1)")
        if self.bootstrap_resamples < 100:
            raise ValueError("bootstrap_resamples must be >= 100")
        if self.ratio_clip is not None and self.ratio_clip <= 0:
            raise ValueError("ratio_clip must be positive")


def iqm(values: Sequence[float]) -> float:
    """Inter-quartile mean with fractional trimming.

    A quarter of the mass is trimmed from each end of the sorted sample;
    when 0.25*n is not an integer the boundary elements keep the leftover
    fractional weight, so the statistic is continuous in n.
    """
    arr = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = arr.size
    if n == 0:
        raise ValueError("iqm of empty input")
    cut = 0.25 * n
    g = int(np.floor(cut))
    frac = cut - g
    weights = np.ones(n, dtype=np.float64)
    weights[:g] = 0.0
    if g:
        weights[-g:] = 0.0
    if frac > 0.0:
        weights[g] -= frac
        weights[n - 1 - g] -= frac
    return float(np.dot(arr, weights) / weights.sum())


def aggregate(values: Sequence[float], config: MetricConfig) -> float:
    if config.aggregator == "iqm":
        return iqm(values)
    if config.aggregator == "mean":
        return float(np.mean(values))
    return float(np.median(values))


def _clip(ratio: float, config: MetricConfig) -> float:
    if config.ratio_clip is not None:
        return min(ratio, config.ratio_clip)
    return ratio


def bootstrap_ci(
    episode_returns: Mapping[str, Sequence[float]],
    br_returns: Mapping[str, float],
    config: MetricConfig,
    seed: int,
) -> tuple[float, float]:
    """Stratified percentile bootstrap over per-combination episodes.

    Each resample redraws episodes with replacement independently inside
    every combination, recomputes that combination's ratio against its fixed
    best-response denominator, and re-aggregates; the interval is the
    ci_level percentile band of the resampled statistics.
    """
    keys = sorted(episode_returns)
    if set(keys) != set(br_returns):
        raise ValueError("episode_returns and br_returns must share keys")
    samples = {k: np.asarray(episode_returns[k], dtype=np.float64) for k in keys}
    for k, v in samples.items():
        if v.size < 2:
            raise ValueError(f"combination {k} has fewer than 2 episodes")
        if br_returns[k] <= 0:
            raise ValueError(f"combination {k} has non-positive denominator")
    rng = np.random.default_rng(derive_seed(seed, "bootstrap", ",".join(keys)))
    stats = np.empty(config.bootstrap_resamples, dtype=np.float64)
    for r in range(config.bootstrap_resamples):
        ratios = [
            _clip(float(rng.choice(samples[k], size=samples[k].size).mean())
                  / br_returns[k], config)
            for k in keys
        ]
        stats[r] = aggregate(ratios, config)
    alpha = (1.0 - config.ci_level) / 2.0
    lo, hi = np.percentile(stats, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return float(lo), float(hi)


@dataclass(frozen=True)
class BRProxReport:
    """Best-response proximity of one ego against one partner set."""

    ratios: dict[str, float]
    point_estimate: float
    ci: tuple[float, float]
    iqr: tuple[float, float]
    episodes: int
    ego_returns: dict[str, float]
    br_returns: dict[str, float]
    excluded: dict[str, str] = field(default_factory=dict)
    final_only: "BRProxReport | None" = None
    skill_split: "dict[str, BRProxReport] | None" = None

    def to_dict(self) -> dict:
        out = {
            "ratios": dict(sorted(self.ratios.items())),
            "point_estimate": self.point_estimate,
            "ci": list(self.ci),
            "iqr": list(self.iqr),
            "episodes": self.episodes,
            "ego_returns": dict(sorted(self.ego_returns.items())),
            "br_returns": dict(sorted(self.br_returns.items())),
            "excluded": dict(sorted(self.excluded.items())),
        }
        if self.final_only is not None:
            out["final_only"] = self.final_only.to_dict()
        if self.skill_split is not None:
            out["skill_split"] = {
                k: None if v is None else v.to_dict()
                for k, v in sorted(self.skill_split.items())
            }
        return out


def _assemble(
    episode_returns: dict[str, list[float]],
    br_returns: dict[str, float],
    episodes: int,
    config: MetricConfig,
    seed: int,
    excluded: dict[str, str],
) -> BRProxReport:
    ego_means = {k: float(np.mean(v)) for k, v in episode_returns.items()}
    ratios = {k: _clip(ego_means[k] / br_returns[k], config) for k in episode_returns}
    values = list(ratios.values())
    point = aggregate(values, config)
    q25, q75 = np.percentile(values, [25.0, 75.0])
    ci = bootstrap_ci(episode_returns, br_returns, config, seed)
    return BRProxReport(
        ratios=ratios,
        point_estimate=point,
        ci=ci,
        iqr=(float(q25), float(q75)),
        episodes=episodes,
        ego_returns=ego_means,
        br_returns=dict(br_returns),
        excluded=excluded,
    )


def evaluation_combinations(partner_set: PartnerSet, n_agents: int) -> list[str]:
    """Partner combinations an ego faces; singleton members for 2-seat games."""
    if n_agents != 2:
        raise NotImplementedError("partner combinations beyond 2 seats")
    return [m.member_id for m in partner_set.members]


def _collect_episodes(
    ego: Policy,
    partner_set: PartnerSet,
    env: CooperativeEnv,
    episodes: int,
    seed: int,
) -> tuple[dict[str, list[float]], dict[str, float], dict[str, str]]:
    """Seeded ego-vs-partner rollouts for every usable combination.

    Episode seeds depend only on the partner id and episode index, so
    different egos face identical evaluation conditions.
    """
    if episodes < 2:
        raise ValueError("need at least 2 episodes per combination")
    if not partner_set.evaluation_ready:
        raise ValueError("partner set is not evaluation-ready (missing BRs)")
    combos = evaluation_combinations(partner_set, env.spec.n_agents)

    episode_returns: dict[str, list[float]] = {}
    br_returns: dict[str, float] = {}
    excluded: dict[str, str] = {}
    for member_id in combos:
        member = partner_set.member(member_id)
        assert member.br_return is not None
        denom = member.br_return.mean
        if denom <= 0.0:
            excluded[member_id] = f"best-response return {denom} is not positive"
            logger.warning("excluding combination %s: %s", member_id,
                           excluded[member_id])
            continue
        values = [
            run_episode(env, [member.policy, ego],
                        derive_seed(seed, "brprox-episode", f"{member_id}:{i}"))[0]
            for i in range(episodes)
        ]
        episode_returns[member_id] = values
        br_returns[member_id] = denom
    if not episode_returns:
        raise ValueError("every combination was excluded; nothing to aggregate")
    return episode_returns, br_returns, excluded


def br_prox(
    ego: Policy,
    partner_set: PartnerSet,
    env: CooperativeEnv,
    episodes: int,
    config: MetricConfig,
    seed: int,
) -> BRProxReport:
    """Evaluate an ego policy against every partner combination.

    The ego fills the responder seat opposite each partner for ``episodes``
    seeded episodes. Ratios use the best-response returns recorded when the
    set was built. Combinations whose denominator is non-positive are
    excluded with a warning; a set with checkpoints also carries a
    final-members-only sub-report.
    """
    episode_returns, br_returns, excluded = _collect_episodes(
        ego, partner_set, env, episodes, seed
    )
    report = _assemble(episode_returns, br_returns, episodes, config, seed, excluded)
    final_ids = {m.member_id for m in partner_set.members if m.kind == "final"}
    if final_ids != set(episode_returns):
        kept = {k: v for k, v in episode_returns.items() if k in final_ids}
        if kept:
            sub = _assemble(kept, {k: br_returns[k] for k in kept},
                            episodes, config, seed, {})
            report = BRProxReport(**{**report.__dict__, "final_only": sub})
    return report


def report_csv(report: BRProxReport) -> str:
    """One CSV row per evaluated combination, plus excluded rows for the record."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["combination", "episodes", "ego_return", "br_return", "ratio"])
    for member_id in sorted(report.ratios):
        writer.writerow([
            member_id,
            report.episodes,
            f"{report.ego_returns[member_id]:.6f}",
            f"{report.br_returns[member_id]:.6f}",
            f"{report.ratios[member_id]:.6f}",
        ])
    for member_id in sorted(report.excluded):
        writer.writerow([member_id, 0, "", "", ""])
    return buf.getvalue()


def report_text(report: BRProxReport, title: str = "BR-Prox") -> str:
    """Aligned plain-text summary of one evaluation report."""
    lines = [
        title,
        f"  point estimate : {report.point_estimate:.4f}",
        f"  95% ci approx  : [{report.ci[0]:.4f}, {report.ci[1]:.4f}]",
        f"  iqr            : [{report.iqr[0]:.4f}, {report.iqr[1]:.4f}]",
        f"  episodes/combo : {report.episodes}",
        "",
    ]
    width = max((len(k) for k in report.ratios), default=10)
    header = f"  {'combination':<{width}}  {'ego':>10}  {'br':>10}  {'ratio':>7}"
    lines.append(header)
    lines.append("  " + "-" * (len(header) - 2))
    for member_id in sorted(report.ratios):
        lines.append(
            f"  {member_id:<{width}}  {report.ego_returns[member_id]:>10.3f}  "
            f"{report.br_returns[member_id]:>10.3f}  {report.ratios[member_id]:>7.3f}"
        )
    for member_id in sorted(report.excluded):
        lines.append(f"  {member_id:<{width}}  excluded: {report.excluded[member_id]}")
    if report.final_only is not None:
        lines.append("")
        lines.append(f"  final members only: {report.final_only.point_estimate:.4f} "
                     f"[{report.final_only.ci[0]:.4f}, {report.final_only.ci[1]:.4f}]")
    if report.skill_split is not None:
        for band in sorted(report.skill_split):
            sub = report.skill_split[band]
            value = "n/a" if sub is None else f"{sub.point_estimate:.4f}"
            lines.append(f"  {band} partners: {value}")
    return "\n".join(lines) + "\n"


def median_split(self_play_returns: Mapping[str, float]) -> tuple[list[str], list[str]]:
    """Partition ids into (moderate, expert) by the median self-play return.

    Moderate members sit at or below the median; when every return ties the
    expert stratum is empty.
    """
    if len(self_play_returns) < 2:
        raise ValueError("need at least 2 members to split")
    med = float(np.median(list(self_play_returns.values())))
    moderate = sorted(k for k, v in self_play_returns.items() if v <= med)
    expert = sorted(k for k, v in self_play_returns.items() if v > med)
    return moderate, expert


def skill_split(
    ego: Policy,
    partner_set: PartnerSet,
    env: CooperativeEnv,
    episodes: int,
    config: MetricConfig,
    seed: int,
) -> dict[str, BRProxReport | None]:
    """Proximity reported separately for moderate and expert partners.

    Strata come from the members' recorded self-play returns: at or below
    the median is moderate, above is expert. An empty expert stratum (all
    returns equal) yields None for that key with a warning. Both strata
    reuse one shared set of rollouts.
    """
    sp = {m.member_id: m.self_play_return for m in partner_set.members}
    missing = sorted(k for k, v in sp.items() if v is None)
    if missing:
        raise ValueError(f"members lack self-play returns: {missing}")
    moderate_ids, expert_ids = median_split({k: float(v) for k, v in sp.items()})
    if not expert_ids:
        logger.warning("all self-play returns tie; expert stratum is empty")

    episode_returns, br_returns, _ = _collect_episodes(
        ego, partner_set, env, episodes, seed
    )
    out: dict[str, BRProxReport | None] = {}
    for name, ids in (("moderate", moderate_ids), ("expert", expert_ids)):
        kept = {k: v for k, v in episode_returns.items() if k in ids}
        if not kept:
            out[name] = None
            continue
        out[name] = _assemble(
            kept, {k: br_returns[k] for k in kept}, episodes, config, seed, {},
        )
    return out


@dataclass(frozen=True)
class RankCorrelation:
    """Spearman rank agreement between two orderings."""

    r_s: float
    n: int
    tie_policy: str = "average-rank"

    def __post_init__(self) -> None:
        if abs(self.r_s) > 1.0 + 1e-12:
            raise ValueError(f"rank correlation {self.r_s} out of range")


def spearman(rank_a: Sequence[float], rank_b: Sequence[float]) -> RankCorrelation:
    """r_s = 1 - 6*sum(d^2)/(n(n^2-1)) on average ranks.

    Inputs may be raw scores or rank vectors; both are re-ranked with
    average ranks for ties before applying the difference formula.
    """
    a = np.asarray(rank_a, dtype=np.float64)
    b = np.asarray(rank_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("rankings must be equal-length vectors")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 ranked items")
    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    d2 = float(np.sum((ra - rb) ** 2))
    return RankCorrelation(r_s=1.0 - 6.0 * d2 / (n * (n * n - 1.0)), n=n)
