"""Stage orchestration: configs, artifacts, manifests, and pipeline commands.

A run lives in one output directory. Each stage reads the artifacts of the
stage before it, writes its own files, and records them (with content
hashes) in ``manifest.json``. Re-running a stage whose recorded digest and
artifacts are intact is a no-op, and a full rerun from the same config and
seed reproduces every artifact byte for byte — wall-clock timings go to an
unhashed ``timings.json`` sidecar so they never perturb the manifest.

Stage seeds derive from (global seed, stage name, item id), so enlarging a
candidate pool never changes results for existing candidates.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import multiprocessing
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import yaml

from . import __version__
from .bench import (
    EgoSpec,
    compare_selection_criteria,
    criterion_table_csv,
    run_benchmark,
    train_ego,
)
from .diversity import (
    BehaviorFeature,
    CandidateFeatures,
    PartnerRecord,
    PartnerSet,
    SelectionConfig,
    SimilarityMatrix,
    br_div,
    candidate_features,
    max_det_subset,
    p_div,
    select_checkpoints,
)
from .envs.base import CooperativeEnv
from .envs.kitchen import MiniKitchen, layout_from_text
from .metrics import (
    BRProxReport,
    MetricConfig,
    br_prox,
    report_csv,
    report_text,
    skill_split,
)
from .policies import Policy, export_policy_json, load_policy, save_policy
from .rewards import (
    RewardSpaceSpec,
    RewardWeights,
    enumerate_or_sample_weights,
    kitchen_default_space,
)
from .seeding import derive_seed, file_sha256, stable_hash
from .training import (
    LinearSchedule,
    ReturnEstimate,
    TrainConfig,
    approximate_ne,
    self_play_return,
    train_best_response,
)

logger = logging.getLogger(__name__)

STAGES = ("generate", "select", "train-brs", "evaluate", "benchmark", "compare-selection")


class ConfigError(ValueError):
    """The config file is missing, malformed, or inconsistent."""


class MissingUpstreamError(RuntimeError):
    """A required earlier stage has not produced its artifacts."""


class IntegrityError(RuntimeError):
    """A recorded artifact is absent or does not match its hash."""


# -- config ---------------------------------------------------------------------


def build_env_from_section(section: Any) -> CooperativeEnv:
    """Construct the run's environment from its config mapping.

    Module-level so worker processes can rebuild the environment from the
    plain config dict instead of unpickling a parent instance (whose rollout
    memo could be arbitrarily large).
    """
    if not isinstance(section, Mapping):
        raise ConfigError("env section must be a mapping")
    kind = section.get("kind")
    if kind == "kitchen":
        kwargs: dict[str, Any] = {}
        for key in ("horizon", "cook_time", "random_start"):
            if key in section:
                kwargs[key] = section[key]
        if "layout" in section:
            layout = section["layout"]
            if isinstance(layout, str):
                kwargs["layout"] = layout_from_text(layout)
            else:
                kwargs["layout"] = tuple(layout)
        try:
            return MiniKitchen(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"env: {exc}") from exc
    if kind == "matrix":
        name = section.get("fixture")
        if not name:
            raise ConfigError("matrix env needs a 'fixture' name")
        corpus_seed = section.get("corpus_seed", 0)
        from .fixtures import oracle_corpus

        for fx in oracle_corpus(corpus_seed):
            if fx.name == name:
                return fx.game
        raise ConfigError(f"no matrix fixture named {name!r}")
    raise ConfigError(f"env.kind must be 'kitchen' or 'matrix', got {kind!r}")


def _schedule_from(value: Any, name: str) -> LinearSchedule:
    if isinstance(value, (int, float)):
        return LinearSchedule(float(value), float(value))
    if isinstance(value, Mapping):
        allowed = {"start", "end", "end_fraction"}
        unknown = set(value) - allowed
        if unknown:
            raise ConfigError(f"{name}: unknown schedule keys {sorted(unknown)}")
        try:
            return LinearSchedule(
                float(value["start"]),
                float(value["end"]),
                float(value.get("end_fraction", 1.0)),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{name}: bad schedule ({exc})") from exc
    raise ConfigError(f"{name}: expected a number or start/end mapping")


def _train_config_from(section: Mapping[str, Any]) -> TrainConfig:
    kwargs: dict[str, Any] = {}
    simple = (
        "algorithm", "total_steps", "eval_interval", "checkpoint_interval",
        "eval_episodes", "final_eval_episodes", "discount_override",
        "optimism_fraction", "seed",
    )
    for key in simple:
        if key in section:
            kwargs[key] = section[key]
    for key in ("learning_rate", "exploration"):
        if key in section:
            kwargs[key] = _schedule_from(section[key], f"training.{key}")
    unknown = set(section) - set(simple) - {"learning_rate", "exploration"}
    if unknown:
        raise ConfigError(f"training: unknown keys {sorted(unknown)}")
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"training: {exc}") from exc


@dataclass(frozen=True)
class PipelineConfig:
    """Validated view of one run's YAML config."""

    raw: dict
    path: str
    out_dir: Path
    seed: int

    @classmethod
    def load(cls, path: str | Path, out_override: str | None = None,
             seed_override: int | None = None) -> PipelineConfig:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = yaml.safe_load(p.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        seed = seed_override if seed_override is not None else raw.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        out = out_override or raw.get("out")
        if not out:
            raise ConfigError("output directory missing (config key 'out' or --out)")
        cfg = cls(raw=raw, path=str(p), out_dir=Path(out), seed=seed)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for key in ("env",):
            if key not in self.raw:
                raise ConfigError(f"config section '{key}' is required")
        # construct everything once so bad values fail at load time
        env = self.build_env()
        if "reward_space" in self.raw:
            space = self.build_space()
            space.aligned_menus(env.schema)
        self.train_config()
        self.candidates_section()
        self.selection_config()
        self.metric_config()

    # --- section builders

    def build_env(self) -> CooperativeEnv:
        return build_env_from_section(self.raw.get("env"))

    def build_space(self) -> RewardSpaceSpec:
        section = self.raw.get("reward_space")
        if section is None:
            raise ConfigError("config section 'reward_space' is required here")
        if not isinstance(section, Mapping):
            raise ConfigError("reward_space section must be a mapping")
        if section.get("preset") == "kitchen-default":
            return kitchen_default_space()
        if "preset" in section:
            raise ConfigError(f"unknown reward_space preset {section['preset']!r}")
        try:
            menus = {
                str(name): tuple(float(v) for v in options)
                for name, options in section["menus"].items()
            }
            return RewardSpaceSpec(
                menus=menus,
                max_abs_weight=float(section["max_abs_weight"]),
                max_active=int(section["max_active"]),
                mode=section.get("mode", "at_most"),
                multiplier_event=section.get("multiplier_event"),
                include_base=section.get("include_base", True),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"reward_space: {exc}") from exc

    def train_config(self) -> TrainConfig:
        return _train_config_from(self.raw.get("training", {}))

    def candidates_section(self) -> dict[str, Any]:
        section = dict(self.raw.get("candidates", {}))
        out = {
            "n": int(section.pop("n", 16)),
            "embed_episodes": int(section.pop("embed_episodes", 60)),
            "success_event": section.pop("success_event", "__default__"),
        }
        if section:
            raise ConfigError(f"candidates: unknown keys {sorted(section)}")
        if out["n"] < 1:
            raise ConfigError("candidates.n must be >= 1")
        if out["embed_episodes"] < 50:
            raise ConfigError("candidates.embed_episodes must be >= 50")
        return out

    def success_event_index(self, env: CooperativeEnv) -> int | None:
        name = self.candidates_section()["success_event"]
        if name == "__default__":
            name = "deliver_soup" if "deliver_soup" in env.schema.events else None
        if name is None:
            return None
        if name not in env.schema.events:
            raise ConfigError(f"candidates.success_event {name!r} not in schema")
        return env.schema.index(name)

    def selection_config(self) -> SelectionConfig:
        section = dict(self.raw.get("selection", {}))
        self_play = section.pop("self_play_episodes", 30)
        if not isinstance(self_play, int) or self_play < 1:
            raise ConfigError("selection.self_play_episodes must be a positive integer")
        kwargs = {"subset_size": int(section.pop("subset_size", 4))}
        for key in ("num_candidates", "criterion", "dpp_iterations", "mcmc_steps",
                    "burn_in", "embed_episodes", "include_checkpoints", "seed"):
            if key in section:
                kwargs[key] = section.pop(key)
        if section:
            raise ConfigError(f"selection: unknown keys {sorted(section)}")
        try:
            return SelectionConfig(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"selection: {exc}") from exc

    def self_play_episodes(self) -> int:
        return int(self.raw.get("selection", {}).get("self_play_episodes", 30))

    def metric_config(self) -> MetricConfig:
        section = dict(self.raw.get("metrics", {}))
        episodes = section.pop("episodes", 50)
        if not isinstance(episodes, int) or episodes < 2:
            raise ConfigError("metrics.episodes must be an integer >= 2")
        try:
            cfg = MetricConfig(**section)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"metrics: {exc}") from exc
        return cfg

    def metric_episodes(self) -> int:
        return int(self.raw.get("metrics", {}).get("episodes", 50))

    def benchmark_section(self) -> tuple[list[dict], list[int]]:
        section = self.raw.get("benchmark")
        if not isinstance(section, Mapping):
            raise ConfigError("config section 'benchmark' is required here")
        egos = section.get("egos")
        if not isinstance(egos, list) or len(egos) < 2:
            raise ConfigError("benchmark.egos must list at least 2 egos")
        names = [e.get("name") for e in egos]
        if len(set(names)) != len(names) or not all(names):
            raise ConfigError("benchmark egos need unique non-empty names")
        seeds = section.get("seeds", [0])
        if (not isinstance(seeds, list) or not seeds
                or not all(isinstance(s, int) for s in seeds)):
            raise ConfigError("benchmark.seeds must be a non-empty integer list")
        return [dict(e) for e in egos], list(seeds)

    def ego_spec(self, entry: Mapping[str, Any], seed: int) -> EgoSpec:
        entry = dict(entry)
        entry.pop("name", None)
        algorithm = entry.pop("algorithm", None)
        if algorithm is None:
            raise ConfigError("each benchmark ego needs an 'algorithm'")
        train = self.train_config()
        if "total_steps" in entry:
            train = replace(train, total_steps=int(entry.pop("total_steps")))
        kwargs: dict[str, Any] = {}
        for key in ("population_size", "ego_steps"):
            if key in entry:
                kwargs[key] = int(entry.pop(key))
        if "scripted_actions" in entry:
            kwargs["scripted_actions"] = tuple(int(a) for a in entry.pop("scripted_actions"))
        if entry:
            raise ConfigError(f"benchmark ego: unknown keys {sorted(entry)}")
        try:
            return EgoSpec(algorithm=algorithm, train=train, seed=seed, **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"benchmark ego: {exc}") from exc

    def compare_sizes(self) -> list[int]:
        section = self.raw.get("compare_selection", {})
        lo = int(section.get("min_size", 2))
        hi = int(section.get("max_size", 8))
        if not 1 <= lo <= hi:
            raise ConfigError("compare_selection sizes must satisfy 1 <= min <= max")
        return list(range(lo, hi + 1))


def resolve_workers(cli_value: int | None) -> int:
    if cli_value is not None:
        if cli_value < 1:
            raise ConfigError("--workers must be >= 1")
        return cli_value
    env_value = os.environ.get("ZSC_EVAL_WORKERS")
    if env_value:
        try:
            parsed = int(env_value)
        except ValueError as exc:
            raise ConfigError(f"ZSC_EVAL_WORKERS is not an integer: {env_value!r}") from exc
        if parsed < 1:
            raise ConfigError("ZSC_EVAL_WORKERS must be >= 1")
        return parsed
    return os.cpu_count() or 1


# -- manifest -------------------------------------------------------------------


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


@dataclass
class RunManifest:
    """Ledger of completed stages and the files they produced."""

    root: Path
    data: dict

    PATH = "manifest.json"

    @classmethod
    def load_or_create(cls, root: Path, config_hash: str) -> RunManifest:
        path = root / cls.PATH
        if path.is_file():
            data = json.loads(path.read_text())
            if data.get("config_hash") != config_hash:
                logger.info("config changed; stale stages will rerun")
                data["config_hash"] = config_hash
        else:
            data = {"tool_version": __version__, "config_hash": config_hash, "stages": {}}
        return cls(root=root, data=data)

    def save(self) -> None:
        self.data["tool_version"] = __version__
        tmp = self.root / (self.PATH + ".tmp")
        tmp.write_text(_dump_json(self.data))
        tmp.replace(self.root / self.PATH)

    def stage(self, name: str) -> dict | None:
        return self.data["stages"].get(name)

    def stage_fresh(self, name: str, digest: str) -> bool:
        """True when the stage ran with this digest and its files are intact."""
        entry = self.stage(name)
        if entry is None or entry.get("digest") != digest:
            return False
        try:
            self.check_artifacts(name)
        except IntegrityError:
            return False
        return True

    def record_stage(self, name: str, digest: str, files: Sequence[Path]) -> None:
        artifacts = []
        for f in sorted(files):
            rel = f.relative_to(self.root).as_posix()
            artifacts.append({
                "path": rel,
                "sha256": file_sha256(f),
                "bytes": f.stat().st_size,
            })
        self.data["stages"][name] = {"digest": digest, "artifacts": artifacts}
        self.save()

    def check_artifacts(self, name: str) -> None:
        entry = self.stage(name)
        if entry is None:
            raise IntegrityError(f"stage {name} is not recorded")
        for art in entry["artifacts"]:
            path = self.root / art["path"]
            if not path.is_file():
                raise IntegrityError(f"missing artifact: {art['path']}")
            actual = file_sha256(path)
            if actual != art["sha256"]:
                raise IntegrityError(
                    f"artifact hash mismatch: {art['path']} "
                    f"(recorded {art['sha256'][:12]}, actual {actual[:12]})"
                )

    def require_stage(self, name: str, needed_by: str) -> dict:
        entry = self.stage(name)
        if entry is None:
            raise MissingUpstreamError(
                f"stage '{needed_by}' needs '{name}' first; "
                f"run: zsc-eval {name} --config <config> --out {self.root}"
            )
        self.check_artifacts(name)
        return entry

    def verify_all(self) -> list[str]:
        problems = []
        for name in self.data["stages"]:
            try:
                self.check_artifacts(name)
            except IntegrityError as exc:
                problems.append(str(exc))
        return problems


class _Timings:
    """Wall-clock sidecar, deliberately outside the manifest."""

    def __init__(self, root: Path):
        self.path = root / "timings.json"
        self.data: dict[str, float] = {}
        if self.path.is_file():
            self.data = json.loads(self.path.read_text())

    def record(self, stage: str, seconds: float) -> None:
        self.data[stage] = round(seconds, 3)
        self.path.write_text(_dump_json(self.data))


@dataclass
class RunContext:
    """Everything a stage needs: config, manifest, and directories."""

    config: PipelineConfig
    manifest: RunManifest
    timings: _Timings
    workers: int

    @classmethod
    def open(cls, config: PipelineConfig, workers: int | None = None) -> RunContext:
        root = config.out_dir
        root.mkdir(parents=True, exist_ok=True)
        config_hash = stable_hash({"config": config.raw, "seed": config.seed})
        manifest = RunManifest.load_or_create(root, config_hash)
        return cls(
            config=config,
            manifest=manifest,
            timings=_Timings(root),
            workers=resolve_workers(workers),
        )

    @property
    def root(self) -> Path:
        return self.config.out_dir

    def stage_digest(self, name: str, extra: Any = None, upstream: Sequence[str] = ()) -> str:
        parts: dict[str, Any] = {
            "stage": name,
            "seed": self.config.seed,
            "extra": extra,
        }
        for up in upstream:
            entry = self.manifest.stage(up)
            parts[f"upstream:{up}"] = entry["digest"] if entry else None
        sections = {
            "generate": ("env", "reward_space", "candidates", "training"),
            "select": ("selection",),
            "train-brs": ("training",),
            "evaluate": ("metrics",),
            "benchmark": ("metrics", "benchmark"),
            "compare-selection": ("selection", "compare_selection"),
        }[name]
        parts["config"] = {s: self.config.raw.get(s) for s in sections}
        return stable_hash(parts)


# -- file helpers -----------------------------------------------------------------


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
    return path


def _write_json(path: Path, obj: Any) -> Path:
    return _write_text(path, _dump_json(obj))


def _safe_name(identifier: str) -> str:
    return identifier.replace("/", "__").replace(":", "-")


def _estimate_dict(est: ReturnEstimate) -> dict:
    return {
        "mean": est.mean,
        "std_error": est.std_error,
        "n_episodes": est.n_episodes,
    }


def _map_items(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map, fanned out to spawn workers when it pays off."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    ctx = multiprocessing.get_context("spawn")
    with ctx.Pool(processes=min(workers, len(items))) as pool:
        return pool.map(fn, items)


# -- generate ---------------------------------------------------------------------


def _generate_one(args: tuple) -> dict:
    """Train, embed, and persist one candidate; runs in a worker process."""
    (env_section, train_cfg, weights, embed_episodes, success_index,
     global_seed, out_root) = args
    env = build_env_from_section(env_section)
    t0 = time.monotonic()
    pair = approximate_ne(
        env, weights, train_cfg,
        seed=derive_seed(global_seed, "generate", weights.id),
    )
    feats = candidate_features(
        env, pair, embed_episodes, derive_seed(global_seed, "embed", pair.id)
    )
    ok, reason = feats.eligible(success_index)
    checkpoint, ckpt_warnings = select_checkpoints(pair)

    cand_dir = Path(out_root) / "candidates" / _safe_name(pair.id)
    cand_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for role, policy in (("partner", pair.partner), ("br", pair.br)):
        path = cand_dir / f"{role}.pol"
        save_policy(path, policy, metadata={"candidate": pair.id, "role": role})
        files[role] = path.relative_to(out_root).as_posix()
    ckpt_entry = None
    if checkpoint is not None:
        path = cand_dir / "checkpoint.pol"
        save_policy(path, checkpoint.policy,
                    metadata={"candidate": pair.id, "role": "checkpoint",
                              "step": checkpoint.step})
        ckpt_entry = {
            "step": checkpoint.step,
            "eval_return": checkpoint.eval_return,
            "file": path.relative_to(out_root).as_posix(),
        }

    return {
        "candidate_id": pair.id,
        "weights": {
            "values": list(weights.values),
            "multiplier_index": weights.multiplier_index,
            "id": weights.id,
        },
        "final_return": _estimate_dict(pair.final_pair_return),
        "eval_curve": [[step, value] for step, value in pair.eval_curve],
        "degenerate": pair.degenerate,
        "checkpoint": ckpt_entry,
        "checkpoint_warnings": ckpt_warnings,
        "features": {
            "partner": {"counts": list(feats.partner.counts),
                        "episodes": feats.partner.episodes},
            "br": {"counts": list(feats.br.counts), "episodes": feats.br.episodes},
            "team_counts": list(feats.team_counts),
        },
        "eligible": ok,
        "reject_reason": "" if ok else reason,
        "files": files,
        "seconds": round(time.monotonic() - t0, 3),
    }


def stage_generate(ctx: RunContext) -> dict:
    """Train the behavior-preferring candidate pool and embed its behaviors."""
    cfg = ctx.config
    digest = ctx.stage_digest("generate")
    if ctx.manifest.stage_fresh("generate", digest):
        logger.info("generate: up to date")
        return json.loads((ctx.root / "candidates.json").read_text())

    env = cfg.build_env()
    space = cfg.build_space()
    schema = env.schema
    section = cfg.candidates_section()
    success_index = cfg.success_event_index(env)
    rng = np.random.default_rng(derive_seed(cfg.seed, "generate", "weights"))
    weight_list = enumerate_or_sample_weights(space, schema, section["n"], rng)
    logger.info("generate: %d candidates on %s (%d workers)",
                len(weight_list), env.spec.name, ctx.workers)

    t0 = time.monotonic()
    train_cfg = cfg.train_config()
    items = [
        (cfg.raw["env"], train_cfg, weights, section["embed_episodes"],
         success_index, cfg.seed, str(ctx.root))
        for weights in weight_list
    ]
    rows = _map_items(_generate_one, items, ctx.workers)
    for row in rows:
        logger.info("  %s eligible=%s return=%.2f (%.1fs)",
                    row["candidate_id"], row["eligible"],
                    row["final_return"]["mean"], row["seconds"])
        for warning in row["checkpoint_warnings"]:
            logger.warning("  %s", warning)
        row.pop("seconds")

    doc = {
        "env": env.spec.name,
        "events": list(schema.events),
        "success_event": (None if success_index is None
                          else schema.events[success_index]),
        "candidates": rows,
    }
    path = _write_json(ctx.root / "candidates.json", doc)
    files = [path]
    for row in rows:
        files.extend(ctx.root / rel for rel in row["files"].values())
        if row["checkpoint"] is not None:
            files.append(ctx.root / row["checkpoint"]["file"])
    ctx.manifest.record_stage("generate", digest, files)
    ctx.timings.record("generate", time.monotonic() - t0)
    eligible = sum(1 for r in rows if r["eligible"])
    logger.info("generate: %d/%d eligible", eligible, len(rows))
    return doc


# -- select -----------------------------------------------------------------------


def _row_feature(row: dict, role: str) -> BehaviorFeature:
    block = row["features"][role]
    return BehaviorFeature(
        owner_id=f"{row['candidate_id']}/{role}",
        counts=tuple(float(v) for v in block["counts"]),
        episodes=int(block["episodes"]),
    )


def _row_candidate_features(row: dict) -> CandidateFeatures:
    w = row["weights"]
    weights = RewardWeights(
        values=tuple(float(v) for v in w["values"]),
        multiplier_index=w["multiplier_index"],
    )
    return CandidateFeatures(
        candidate_id=row["candidate_id"],
        weights=weights,
        partner=_row_feature(row, "partner"),
        br=_row_feature(row, "br"),
        team_counts=tuple(float(v) for v in row["features"]["team_counts"]),
        final_return=row["final_return"]["mean"],
    )


def _load_candidates(ctx: RunContext) -> tuple[dict, list[dict], dict[str, str]]:
    ctx.manifest.require_stage("generate", "select")
    doc = json.loads((ctx.root / "candidates.json").read_text())
    eligible = [row for row in doc["candidates"] if row["eligible"]]
    rejected = {
        row["candidate_id"]: row["reject_reason"]
        for row in doc["candidates"] if not row["eligible"]
    }
    return doc, eligible, rejected


def _features_csv(doc: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["candidate_id", "role", "episodes", "eligible"]
                    + list(doc["events"]))
    for row in doc["candidates"]:
        feats = row["features"]
        for role in ("partner", "br"):
            writer.writerow(
                [row["candidate_id"], role, feats[role]["episodes"],
                 int(row["eligible"])]
                + [f"{v:.6f}" for v in feats[role]["counts"]]
            )
        writer.writerow(
            [row["candidate_id"], "team", feats["partner"]["episodes"],
             int(row["eligible"])]
            + [f"{v:.6f}" for v in feats["team_counts"]]
        )
    return buf.getvalue()


def stage_select(ctx: RunContext, criterion: str | None = None) -> dict:
    """Pick the diversity-maximizing partner subset from the eligible pool."""
    cfg = ctx.config
    digest = ctx.stage_digest("select", extra={"criterion": criterion},
                              upstream=("generate",))
    out_path = ctx.root / "selection" / "partner_set.json"
    if ctx.manifest.stage_fresh("select", digest):
        logger.info("select: up to date")
        return json.loads(out_path.read_text())

    doc, eligible_rows, rejected = _load_candidates(ctx)
    sel_cfg = cfg.selection_config()
    if criterion is not None:
        sel_cfg = replace(sel_cfg, criterion=criterion)
    if len(eligible_rows) < sel_cfg.subset_size:
        raise MissingUpstreamError(
            f"only {len(eligible_rows)} eligible candidates for subset size "
            f"{sel_cfg.subset_size}; regenerate with a larger pool"
        )
    if (sel_cfg.num_candidates is not None
            and sel_cfg.num_candidates != len(eligible_rows)):
        raise ConfigError(
            f"selection.num_candidates={sel_cfg.num_candidates} but the pool "
            f"has {len(eligible_rows)} eligible candidates"
        )

    t0 = time.monotonic()
    feats = [_row_candidate_features(row) for row in eligible_rows]
    key = "br" if sel_cfg.criterion == "br-div" else "partner"
    sim = SimilarityMatrix.build([getattr(c, key) for c in feats])
    sel_seed = cfg.raw.get("selection", {}).get("seed", cfg.seed)
    rng = np.random.default_rng(derive_seed(sel_seed, "select", sel_cfg.criterion))
    subset, _ = max_det_subset(
        sim.matrix, sel_cfg.subset_size, rng,
        chains=sel_cfg.dpp_iterations, steps=sel_cfg.mcmc_steps,
        burn_in=sel_cfg.burn_in,
    )
    chosen = [feats[i] for i in subset]
    chosen_rows = [eligible_rows[i] for i in subset]

    env = cfg.build_env()
    members = []
    for cand, row in zip(chosen, chosen_rows):
        entries = [(f"{cand.candidate_id}/final", "final", row["files"]["partner"])]
        if sel_cfg.include_checkpoints and row["checkpoint"] is not None:
            ckpt = row["checkpoint"]
            entries.append(
                (f"{cand.candidate_id}/ckpt-{ckpt['step']}", "checkpoint",
                 ckpt["file"])
            )
        for member_id, kind, rel in entries:
            policy, _meta = load_policy(ctx.root / rel)
            estimate = self_play_return(
                env, policy, cfg.self_play_episodes(),
                derive_seed(cfg.seed, "self-play", member_id),
            )
            members.append({
                "member_id": member_id,
                "source_candidate_id": cand.candidate_id,
                "kind": kind,
                "policy_file": rel,
                "self_play_return": estimate.mean,
            })

    doc_out = {
        "criterion": sel_cfg.criterion,
        "subset_size": sel_cfg.subset_size,
        "chosen_candidates": [c.candidate_id for c in chosen],
        "br_div": br_div([c.br for c in chosen]),
        "p_div": p_div([c.partner for c in chosen]),
        "members": members,
        "rejected": dict(sorted(rejected.items())),
        "pool_size": len(eligible_rows),
    }
    files = [
        _write_json(out_path, doc_out),
        _write_text(ctx.root / "selection" / "features.csv", _features_csv(doc)),
    ]
    ctx.manifest.record_stage("select", digest, files)
    ctx.timings.record("select", time.monotonic() - t0)
    logger.info("select: %d members from %d candidates (%s)",
                len(members), len(eligible_rows), sel_cfg.criterion)
    return doc_out


# -- train-brs --------------------------------------------------------------------


def _train_br_one(args: tuple) -> dict:
    env_section, train_cfg, member_id, policy_file, global_seed, out_root = args
    env = build_env_from_section(env_section)
    partner, _meta = load_policy(Path(out_root) / policy_file)
    policy, estimate = train_best_response(
        env, partner, train_cfg,
        seed=derive_seed(global_seed, "train-brs", member_id),
    )
    path = Path(out_root) / "brs" / f"{_safe_name(member_id)}.pol"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_policy(path, policy, metadata={"member_id": member_id, "role": "br"})
    return {
        "member_id": member_id,
        "br_return": _estimate_dict(estimate),
        "file": path.relative_to(out_root).as_posix(),
    }


def stage_train_brs(ctx: RunContext) -> dict:
    """Train one best response per selected partner (the metric denominators)."""
    cfg = ctx.config
    digest = ctx.stage_digest("train-brs", upstream=("select",))
    out_path = ctx.root / "brs" / "br_returns.json"
    if ctx.manifest.stage_fresh("train-brs", digest):
        logger.info("train-brs: up to date")
        return json.loads(out_path.read_text())

    ctx.manifest.require_stage("select", "train-brs")
    selection = json.loads((ctx.root / "selection" / "partner_set.json").read_text())
    t0 = time.monotonic()
    train_cfg = cfg.train_config()
    items = [
        (cfg.raw["env"], train_cfg, m["member_id"], m["policy_file"],
         cfg.seed, str(ctx.root))
        for m in selection["members"]
    ]
    rows = _map_items(_train_br_one, items, ctx.workers)
    for row in rows:
        logger.info("  br %s -> %.2f", row["member_id"], row["br_return"]["mean"])

    doc = {"members": rows}
    files = [_write_json(out_path, doc)]
    files.extend(ctx.root / row["file"] for row in rows)
    ctx.manifest.record_stage("train-brs", digest, files)
    ctx.timings.record("train-brs", time.monotonic() - t0)
    return doc


# -- evaluate ---------------------------------------------------------------------


def load_partner_set(ctx: RunContext, needed_by: str = "evaluate") -> PartnerSet:
    """Rebuild the evaluation-ready partner set from stage artifacts."""
    ctx.manifest.require_stage("generate", needed_by)
    ctx.manifest.require_stage("select", needed_by)
    ctx.manifest.require_stage("train-brs", needed_by)
    selection = json.loads((ctx.root / "selection" / "partner_set.json").read_text())
    brs = json.loads((ctx.root / "brs" / "br_returns.json").read_text())
    br_by_id = {row["member_id"]: row for row in brs["members"]}

    members = []
    for m in selection["members"]:
        row = br_by_id.get(m["member_id"])
        if row is None:
            raise MissingUpstreamError(
                f"member {m['member_id']} has no trained best response; "
                "rerun train-brs"
            )
        policy, _ = load_policy(ctx.root / m["policy_file"])
        br_policy, _ = load_policy(ctx.root / row["file"])
        est = row["br_return"]
        members.append(PartnerRecord(
            member_id=m["member_id"],
            source_candidate_id=m["source_candidate_id"],
            kind=m["kind"],
            policy=policy,
            br_policy=br_policy,
            br_return=ReturnEstimate(
                mean=est["mean"], std_error=est["std_error"],
                n_episodes=est["n_episodes"], per_episode=(),
            ),
            self_play_return=m["self_play_return"],
        ))
    return PartnerSet(
        criterion=selection["criterion"],
        members=tuple(members),
        br_div_value=selection["br_div"],
        p_div_value=selection["p_div"],
        rejected=dict(selection["rejected"]),
    )


def _ego_identity(ctx: RunContext, ego: str | None,
                  ego_policy: str | None) -> tuple[str, Any, Callable[[], Policy]]:
    """Name the ego and defer the expensive part (training / file load)."""
    cfg = ctx.config
    if (ego is None) == (ego_policy is None):
        raise ConfigError("pass exactly one of --ego or --ego-policy")
    if ego_policy is not None:
        path = Path(ego_policy)
        if not path.is_file():
            raise ConfigError(f"ego policy file not found: {path}")
        return path.stem, {"policy_sha256": file_sha256(path)}, \
            lambda: load_policy(path)[0]
    entries, _seeds = cfg.benchmark_section()
    for entry in entries:
        if entry["name"] == ego:
            def build() -> Policy:
                spec = cfg.ego_spec(
                    entry, seed=derive_seed(cfg.seed, "evaluate-ego", ego)
                )
                logger.info("evaluate: training ego %r (%s)",
                            ego, entry["algorithm"])
                return train_ego(cfg.build_env(), spec)

            return ego, {"ego_entry": entry}, build
    raise ConfigError(f"no benchmark ego named {ego!r}")


def stage_evaluate(ctx: RunContext, ego: str | None = None,
                   ego_policy: str | None = None) -> BRProxReport:
    """Score one ego against the evaluation partner set."""
    cfg = ctx.config
    name, extra, build_ego = _ego_identity(ctx, ego, ego_policy)
    stage_key = f"evaluate:{name}"
    digest = ctx.stage_digest("evaluate", extra={"ego": name, **extra},
                              upstream=("select", "train-brs"))
    report_base = ctx.root / "reports" / _safe_name(name)
    if ctx.manifest.stage_fresh(stage_key, digest):
        logger.info("%s: up to date", stage_key)
        return _report_from_file(report_base)

    partner_set = load_partner_set(ctx)
    policy = build_ego()
    env = cfg.build_env()
    metric_cfg = cfg.metric_config()
    episodes = cfg.metric_episodes()
    t0 = time.monotonic()
    eval_seed = derive_seed(cfg.seed, "evaluate", name)
    report = br_prox(policy, partner_set, env, episodes, metric_cfg, eval_seed)
    splits = skill_split(policy, partner_set, env, episodes, metric_cfg, eval_seed)
    report = BRProxReport(**{**report.__dict__, "skill_split": splits})

    files = [
        _write_json(report_base.with_suffix(".json"), report.to_dict()),
        _write_text(report_base.with_suffix(".csv"), report_csv(report)),
        _write_text(report_base.with_suffix(".txt"),
                    report_text(report, title=f"BR-Prox: {name}")),
    ]
    ctx.manifest.record_stage(stage_key, digest, files)
    ctx.timings.record(stage_key, time.monotonic() - t0)
    logger.info("%s: point estimate %.4f ci [%.4f, %.4f]",
                stage_key, report.point_estimate, *report.ci)
    return report


def _report_from_file(base: Path) -> BRProxReport:
    doc = json.loads(base.with_suffix(".json").read_text())

    def build(d: dict) -> BRProxReport:
        return BRProxReport(
            ratios=d["ratios"], point_estimate=d["point_estimate"],
            ci=tuple(d["ci"]), iqr=tuple(d["iqr"]), episodes=d["episodes"],
            ego_returns=d["ego_returns"], br_returns=d["br_returns"],
            excluded=d.get("excluded", {}),
            final_only=build(d["final_only"]) if d.get("final_only") else None,
            skill_split={k: (build(v) if v else None)
                         for k, v in d["skill_split"].items()}
            if d.get("skill_split") else None,
        )

    return build(doc)


# -- benchmark --------------------------------------------------------------------


def _train_ego_one(args: tuple) -> tuple[int, str, Policy]:
    env_section, bench_seed, name, spec = args
    env = build_env_from_section(env_section)
    return bench_seed, name, train_ego(env, spec)


def stage_benchmark(ctx: RunContext) -> dict:
    """Train the baseline egos across seeds and rank them on BR-Prox."""
    cfg = ctx.config
    digest = ctx.stage_digest("benchmark", upstream=("select", "train-brs"))
    out_path = ctx.root / "benchmark.json"
    if ctx.manifest.stage_fresh("benchmark", digest):
        logger.info("benchmark: up to date")
        return json.loads(out_path.read_text())

    partner_set = load_partner_set(ctx, needed_by="benchmark")
    env = cfg.build_env()
    entries, seeds = cfg.benchmark_section()
    metric_cfg = cfg.metric_config()
    episodes = cfg.metric_episodes()

    t0 = time.monotonic()
    items = []
    for bench_seed in seeds:
        for entry in entries:
            spec = cfg.ego_spec(
                entry,
                seed=derive_seed(cfg.seed, "benchmark-ego",
                                 f"{bench_seed}:{entry['name']}"),
            )
            items.append((cfg.raw["env"], bench_seed, entry["name"], spec))
    logger.info("benchmark: training %d egos (%d workers)", len(items), ctx.workers)
    trained = _map_items(_train_ego_one, items, ctx.workers)

    by_seed: dict[int, dict[str, Policy]] = {s: {} for s in seeds}
    for bench_seed, name, policy in trained:
        by_seed[bench_seed][name] = policy

    results = {}
    for bench_seed in seeds:
        results[bench_seed] = run_benchmark(
            env, by_seed[bench_seed], partner_set, episodes, metric_cfg,
            derive_seed(cfg.seed, "benchmark-eval", str(bench_seed)),
        )
        logger.info("benchmark seed %d ranking: %s",
                    bench_seed, " > ".join(results[bench_seed].ranking))

    names = sorted(by_seed[seeds[0]])
    mean_points = {
        name: float(np.mean([results[s].reports[name].point_estimate
                             for s in seeds]))
        for name in names
    }
    aggregate_order = sorted(names, key=lambda n: (-mean_points[n], n))
    doc = {
        "per_seed": {str(s): results[s].to_dict() for s in seeds},
        "aggregate": {
            "mean_point_estimate": mean_points,
            "ranking": aggregate_order,
        },
        "partner_ids": list(partner_set.member_ids),
    }

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "rank", "ego", "point_estimate", "ci_lo", "ci_hi",
                     "mean_return"])
    for s in seeds:
        result = results[s]
        for rank, name in enumerate(result.ranking, start=1):
            rep = result.reports[name]
            writer.writerow([
                s, rank, name, f"{rep.point_estimate:.6f}",
                f"{rep.ci[0]:.6f}", f"{rep.ci[1]:.6f}",
                f"{result.mean_returns[name]:.6f}",
            ])

    width = max(len(n) for n in names)
    lines = [f"{'ego':<{width}}  {'mean br-prox':>12}  per-seed rank"]
    for name in aggregate_order:
        ranks = " ".join(str(results[s].ranking.index(name) + 1) for s in seeds)
        lines.append(f"{name:<{width}}  {mean_points[name]:>12.4f}  {ranks}")
    leaderboard = "\n".join(lines) + "\n"

    files = [
        _write_json(out_path, doc),
        _write_text(ctx.root / "rankings.csv", buf.getvalue()),
        _write_text(ctx.root / "leaderboard.txt", leaderboard),
    ]
    ctx.manifest.record_stage("benchmark", digest, files)
    ctx.timings.record("benchmark", time.monotonic() - t0)
    return doc


# -- compare-selection ------------------------------------------------------------


def stage_compare_selection(ctx: RunContext) -> list[dict]:
    """Score both selection criteria by the BR diversity their subsets reach."""
    cfg = ctx.config
    digest = ctx.stage_digest("compare-selection", upstream=("generate",))
    out_path = ctx.root / "compare_selection.json"
    if ctx.manifest.stage_fresh("compare-selection", digest):
        logger.info("compare-selection: up to date")
        return json.loads(out_path.read_text())

    _doc, eligible_rows, _rejected = _load_candidates(ctx)
    sizes = cfg.compare_sizes()
    if len(eligible_rows) < max(sizes):
        raise MissingUpstreamError(
            f"only {len(eligible_rows)} eligible candidates, need {max(sizes)}"
        )
    t0 = time.monotonic()
    feats = [_row_candidate_features(row) for row in eligible_rows]
    rows = compare_selection_criteria(feats, sizes, cfg.selection_config(),
                                      seed=cfg.seed)
    doc = [
        {"size": r.size, "criterion": r.criterion, "pd_of_brs": r.pd_of_brs}
        for r in rows
    ]
    files = [
        _write_json(out_path, doc),
        _write_text(ctx.root / "compare_selection.csv", criterion_table_csv(rows)),
    ]
    ctx.manifest.record_stage("compare-selection", digest, files)
    ctx.timings.record("compare-selection", time.monotonic() - t0)
    for size in sizes:
        values = {r.criterion: r.pd_of_brs for r in rows if r.size == size}
        logger.info("  size %d: br-div %.4g vs p-div %.4g", size,
                    values["br-div"], values["p-div"])
    return doc


# -- verify / export ---------------------------------------------------------------


def verify_run(out_dir: str | Path) -> list[str]:
    """Re-hash every recorded artifact; returns a list of problems."""
    root = Path(out_dir)
    manifest_path = root / RunManifest.PATH
    if not manifest_path.is_file():
        raise MissingUpstreamError(f"no manifest at {manifest_path}")
    manifest = RunManifest(root=root, data=json.loads(manifest_path.read_text()))
    return manifest.verify_all()


def export_policy_file(policy_path: str | Path, out_path: str | Path | None) -> dict:
    """Dump a stored policy to readable JSON (stdout when no output path)."""
    doc = export_policy_json(policy_path)
    if out_path is not None:
        _write_json(Path(out_path), doc)
    return doc
