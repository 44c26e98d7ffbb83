"""The evolution driver: stream tasks, execute, reflect, and revise the skill every B reflections.

A run is fully determined by its config and master seed when scripted
providers are used: the task stream, every episode's executor randomness,
and all revision mechanics derive from seeded generators. The executor is
frozen for the whole run; every improvement lives in the skill document.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import random
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

from . import world as w
from .executor import (
    ActionChoice,
    ExecutorConfig,
    Provider,
    SkillMode,
    UnparseableModelOutput,
    next_action,
)
from .gateway import Gateway, GatewayError
from .protocol import PeerClosed, ProtocolClient, ProtocolTimeout, ExternalEnv
from .reflection import (
    MissingSidecar,
    OracleReflector,
    ProviderError,
    RemoteReflector,
    reflect,
)
from .revision import (
    ContractViolation,
    ReflectionBuffer,
    RemoteRevisionProvider,
    ScriptedRevisionProvider,
    partition_by_type,
)
from .skill import (
    Skill,
    SkillRule,
    SkillStore,
    compute_body_digest,
    new_initial_skill,
    RuleOrigin,
)
from .trajectory import (
    ActionStatus,
    SeedRecord,
    StepTrace,
    Task,
    Trajectory,
    TrajectoryBuilder,
    write_trajectory,
)

logger = logging.getLogger(__name__)

MODES = ("no_skill", "static_skill", "skill_unaware", "skill_aware")


class ConfigError(Exception):
    pass


class StoreError(Exception):
    pass


@dataclass(frozen=True)
class TaskSpec:
    families: tuple[str, ...] = w.FAMILIES
    count: int = 120
    seed_base: int = 0

    def seeds(self) -> frozenset[int]:
        return frozenset(self.seed_base + i for i in range(self.count))

    def tasks(self) -> list[tuple[str, int]]:
        return [(self.families[i % len(self.families)], self.seed_base + i) for i in range(self.count)]


@dataclass(frozen=True)
class InitialSkillSpec:
    kind: str = "seeded"  # seeded | complete | empty | custom
    missing_families: tuple[str, ...] = ("cool_put", "examine")
    defect_family: str | None = "heat_put"
    custom_rules: tuple[tuple[str, tuple[str, ...]], ...] = ()


@dataclass(frozen=True)
class EvolutionConfig:
    mode: str = "skill_aware"
    k: int = 1  # max reflections per trajectory
    b: int = 8  # revision interval
    stages: int = 10
    train: TaskSpec = field(default_factory=TaskSpec)
    test: TaskSpec = field(default_factory=lambda: TaskSpec(seed_base=100_000))
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)
    reflection_provider: str = "oracle"  # oracle | remote
    revision_provider: str = "scripted"  # scripted | remote
    initial_skill: InitialSkillSpec = field(default_factory=InitialSkillSpec)
    master_seed: int = 0
    horizon: int = 30
    eval_every_stage: bool = True
    max_train_episodes: int = 5000
    env: str = "microworld"  # microworld | external
    external_cmd: tuple[str, ...] | None = None

    def validate(self) -> None:
        problems: list[str] = []
        if self.mode not in MODES:
            problems.append(f"mode: {self.mode!r} not one of {MODES}")
        if self.k < 1:
            problems.append("k: must be >= 1")
        if self.b < 1:
            problems.append("b: must be >= 1")
        if self.stages < 0:
            problems.append("stages: must be >= 0")
        for side, spec in (("train", self.train), ("test", self.test)):
            for family in spec.families:
                if family not in w.FAMILIES:
                    problems.append(f"{side}.families: unknown family {family!r}")
            if spec.count < 1:
                problems.append(f"{side}.count: must be >= 1")
        if self.train.seeds() & self.test.seeds():
            problems.append("train/test: seed sets must be disjoint")
        if self.horizon < 1:
            problems.append("horizon: must be >= 1")
        if self.env not in ("microworld", "external"):
            problems.append(f"env: {self.env!r} not one of ('microworld', 'external')")
        if self.env == "external" and not self.external_cmd:
            problems.append("external_cmd: required when env is external")
        if self.env == "external" and self.executor.provider == Provider.RULE_BASED:
            problems.append("executor.provider: rule_based requires the built-in microworld")
        if self.env == "external" and self.reflection_provider == "oracle":
            problems.append("reflection_provider: the scripted oracle requires the built-in microworld")
        if self.env == "external" and self.mode == "skill_unaware":
            problems.append("mode: skill_unaware summaries require the built-in microworld")
        if self.reflection_provider not in ("oracle", "remote"):
            problems.append(f"reflection_provider: {self.reflection_provider!r} unknown")
        if self.revision_provider not in ("scripted", "remote"):
            problems.append(f"revision_provider: {self.revision_provider!r} unknown")
        if self.initial_skill.kind not in ("seeded", "complete", "empty", "custom"):
            problems.append(f"initial_skill.kind: {self.initial_skill.kind!r} unknown")
        for family in self.initial_skill.missing_families:
            if family not in w.FAMILY_RULE_KEY:
                problems.append(f"initial_skill.missing_families: no family rule for {family!r}")
        if self.initial_skill.defect_family and self.initial_skill.defect_family not in w.DEFECT_RULES:
            problems.append(f"initial_skill.defect_family: no defect variant for {self.initial_skill.defect_family!r}")
        if problems:
            raise ConfigError("; ".join(problems))

    def effective_executor(self) -> ExecutorConfig:
        mode_map = {
            "no_skill": SkillMode.NONE,
            "static_skill": SkillMode.STATIC,
            "skill_unaware": SkillMode.EVOLVING,
            "skill_aware": SkillMode.EVOLVING,
        }
        return replace(self.executor, skill_mode=mode_map[self.mode])

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["executor"] = self.executor.to_dict()
        doc["train"]["families"] = list(self.train.families)
        doc["test"]["families"] = list(self.test.families)
        doc["initial_skill"]["missing_families"] = list(self.initial_skill.missing_families)
        doc["initial_skill"]["custom_rules"] = [
            [text, list(tags)] for text, tags in self.initial_skill.custom_rules
        ]
        doc["external_cmd"] = list(self.external_cmd) if self.external_cmd else None
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "EvolutionConfig":
        base = EvolutionConfig()
        known = {f.name for f in dataclasses.fields(EvolutionConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs: dict = {}
        for key, value in doc.items():
            if key in ("train", "test"):
                sub = dict(value)
                extra = set(sub) - {f.name for f in dataclasses.fields(TaskSpec)}
                if extra:
                    raise ConfigError(f"unknown config fields: {sorted(key + '.' + e for e in extra)}")
                if "families" in sub:
                    sub["families"] = tuple(sub["families"])
                kwargs[key] = replace(getattr(base, key), **sub)
            elif key == "executor":
                sub = dict(value)
                extra = set(sub) - {f.name for f in dataclasses.fields(ExecutorConfig)}
                if extra:
                    raise ConfigError(f"unknown config fields: {sorted('executor.' + e for e in extra)}")
                merged = base.executor.to_dict()
                merged.update(sub)
                kwargs[key] = ExecutorConfig.from_dict(merged)
            elif key == "initial_skill":
                sub = dict(value)
                extra = set(sub) - {f.name for f in dataclasses.fields(InitialSkillSpec)}
                if extra:
                    raise ConfigError(f"unknown config fields: {sorted('initial_skill.' + e for e in extra)}")
                if "missing_families" in sub:
                    sub["missing_families"] = tuple(sub["missing_families"])
                if "custom_rules" in sub:
                    sub["custom_rules"] = tuple((t, tuple(tags)) for t, tags in sub["custom_rules"])
                kwargs[key] = replace(base.initial_skill, **sub)
            elif key == "external_cmd":
                kwargs[key] = tuple(value) if value else None
            else:
                kwargs[key] = value
        try:
            config = EvolutionConfig(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return config


@dataclass
class EvaluationReport:
    skill_version: int
    stage: int
    per_family: dict[str, list[int]]  # family -> [successes, episodes]
    episode_count: int
    successes: int
    success_rate: float | None  # absent (None) for an empty task set
    wall_clock_s: float

    def to_dict(self) -> dict:
        doc = {
            "skill_version": self.skill_version,
            "stage": self.stage,
            "per_family": {f: {"successes": s, "episodes": e, "rate": (s / e if e else None)}
                           for f, (s, e) in sorted(self.per_family.items())},
            "episode_count": self.episode_count,
            "successes": self.successes,
            "wall_clock_s": self.wall_clock_s,
        }
        if self.success_rate is not None:
            doc["success_rate"] = self.success_rate
        else:
            doc["empty"] = True
        return doc


# ---------------------------------------------------------------------------
# episodes


def run_episode(
    env,
    task: Task,
    skill: Skill,
    executor_config: ExecutorConfig,
    executor_seed: str,
    traj_id: str,
    episode_index: int = 0,
    gateway: Gateway | None = None,
) -> Trajectory:
    """Execute one task to completion and return the finalized trajectory."""
    rng = random.Random(executor_seed)
    record_sidecar = executor_config.provider == Provider.RULE_BASED
    builder = TrajectoryBuilder(
        traj_id,
        task,
        skill.version,
        SeedRecord(
            env_seed=task.env_spec.seed,
            executor_seed=executor_seed,
            episode_index=episode_index,
            executor_config=executor_config.to_dict(),
        ),
        record_sidecar=record_sidecar,
    )
    history: list[str] = []
    success = False
    try:
        obs = env.reset()
        for _ in range(task.env_spec.horizon):
            history.append(obs)
            try:
                choice = next_action(executor_config, task, skill, history, rng, gateway=gateway)
            except (GatewayError, UnparseableModelOutput) as exc:
                choice = ActionChoice("[model-error]", (), False)
                logger.warning("executor call failed (%s); counting a rejected step", exc)
            result = env.step(choice.action)
            builder.add_step(
                obs,
                choice.action,
                ActionStatus.REJECTED if result.rejected else ActionStatus.ACCEPTED,
                StepTrace(choice.applied_rule_ids, choice.lapse_flag),
            )
            history.append(choice.action)
            obs = result.observation
            if result.done:
                success = result.success
                break
    except (PeerClosed, ProtocolTimeout) as exc:
        logger.warning("episode %s failed: %s; marking failed and continuing", traj_id, exc)
        if not builder.steps:
            builder.add_step("", "[peer-lost]", ActionStatus.REJECTED, StepTrace())
        return builder.finalize(0)
    return builder.finalize(1 if success else 0)


def _make_env(config: EvolutionConfig, family: str, seed: int, client: ProtocolClient | None):
    if config.env == "microworld":
        return w.MicroWorldEnv.from_task(family, seed, horizon=config.horizon)
    return ExternalEnv(client, family, seed, horizon=config.horizon)


def make_task(config: EvolutionConfig, family: str, seed: int) -> Task:
    if config.env == "microworld":
        task, _, _ = w.sample_task(family, seed, horizon=config.horizon)
        return task
    from .trajectory import EnvSpec

    return Task(
        task_id=f"{family}-{seed}",
        instruction=f"Complete external task {family}-{seed}.",
        env_spec=EnvSpec(env="external", family=family, seed=seed, horizon=config.horizon),
    )


def task_stream(spec: TaskSpec, master_seed: int) -> Iterator[tuple[str, int]]:
    """Randomized order over the training pool; reshuffles whenever exhausted."""
    pool = spec.tasks()
    rng = random.Random(f"{master_seed}:stream")
    while True:
        order = list(pool)
        rng.shuffle(order)
        yield from order


def evaluate(
    skill: Skill,
    test: TaskSpec,
    executor_config: ExecutorConfig,
    master_seed: int,
    stage: int,
    horizon: int = 30,
    out_dir: Path | None = None,
    gateway: Gateway | None = None,
    env_config: EvolutionConfig | None = None,
    client: ProtocolClient | None = None,
) -> EvaluationReport:
    """Score a frozen skill over every test task exactly once."""
    started = time.perf_counter()
    per_family: dict[str, list[int]] = {f: [0, 0] for f in test.families}
    episodes = 0
    successes = 0
    for idx, (family, seed) in enumerate(test.tasks()):
        if env_config is not None and env_config.env == "external":
            task = make_task(env_config, family, seed)
            env = ExternalEnv(client, family, seed, horizon=horizon)
        else:
            task, spec, _ = w.sample_task(family, seed, horizon=horizon)
            env = w.MicroWorldEnv(spec, horizon=horizon)
        traj = run_episode(
            env,
            task,
            skill,
            executor_config,
            executor_seed=f"{master_seed}:eval:{stage}:{idx}",
            traj_id=f"eval-s{stage:02d}-t{idx:03d}-{task.task_id}",
            episode_index=idx,
            gateway=gateway,
        )
        episodes += 1
        successes += traj.outcome
        per_family[family][0] += traj.outcome
        per_family[family][1] += 1
        if out_dir is not None:
            write_trajectory(traj, out_dir / f"{traj.traj_id}.jsonl")
    rate = successes / episodes if episodes else None
    return EvaluationReport(
        skill_version=skill.version,
        stage=stage,
        per_family=per_family,
        episode_count=episodes,
        successes=successes,
        success_rate=rate,
        wall_clock_s=time.perf_counter() - started,
    )


# ---------------------------------------------------------------------------
# run directory plumbing

CSV_COLUMNS = ["stage", "skill_version", "episodes", "success_rate"] + [
    f"rate_{family}" for family in w.FAMILIES
]


def write_stage_csv(reports: Sequence[EvaluationReport], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            row = [
                report.stage,
                report.skill_version,
                report.episode_count,
                f"{report.success_rate:.6f}" if report.success_rate is not None else "",
            ]
            for family in w.FAMILIES:
                s, e = report.per_family.get(family, (0, 0))
                row.append(f"{s / e:.6f}" if e else "")
            writer.writerow(row)


class _Audit:
    def __init__(self, path: Path):
        self.path = path
        self.path.write_text("", "utf-8")

    def record(self, doc: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n")


@dataclass
class SpiralResult:
    final_skill: Skill
    reports: list[EvaluationReport]
    run_dir: Path
    revisions: int
    truncated: bool
    executor_digest: str
    train_episodes: int


def _initial_rules(spec: InitialSkillSpec) -> list[tuple[str, frozenset[str]]]:
    if spec.kind == "complete":
        return w.complete_skill_rules()
    if spec.kind == "seeded":
        return w.seeded_skill_rules(spec.missing_families, spec.defect_family)
    if spec.kind == "empty":
        return []
    return [(text, frozenset(tags)) for text, tags in spec.custom_rules]


def _make_reflector(config: EvolutionConfig, gateway: Gateway | None):
    if config.reflection_provider == "oracle":
        return OracleReflector()
    if gateway is None:
        raise ConfigError("reflection_provider: remote requires a gateway")
    return RemoteReflector(gateway)


def _make_revision_provider(config: EvolutionConfig, gateway: Gateway | None):
    if config.revision_provider == "scripted":
        return ScriptedRevisionProvider()
    if gateway is None:
        raise ConfigError("revision_provider: remote requires a gateway")
    return RemoteRevisionProvider(gateway)


def _rule_diff(old_body: Sequence[SkillRule], new_body: Sequence[SkillRule]) -> list[dict]:
    old = {r.rule_id: r for r in old_body}
    diff = []
    for rule in new_body:
        prior = old.get(rule.rule_id)
        if prior is None:
            change = "added"
        elif rule.retired and not prior.retired:
            change = "retired"
        elif (rule.text, rule.tags) != (prior.text, prior.tags):
            change = "edited"
        else:
            change = "unchanged"
        diff.append({"rule_id": rule.rule_id, "change": change})
    return diff


_UNAWARE_PREFIX = "In practice: "


def _coarse_rewrite(text: str) -> str:
    if text.startswith(_UNAWARE_PREFIX):
        return text
    return _UNAWARE_PREFIX + text


def run_spiral(config: EvolutionConfig, run_dir: Path | str, gateway: Gateway | None = None) -> SpiralResult:
    """Run the full loop: execute, reflect, buffer, revise every B reflections, evaluate per stage."""
    config.validate()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    existing = {p.name for p in run_dir.iterdir()} - {"manifest.json"}
    if existing:
        raise StoreError(f"run directory {run_dir} is not empty: {sorted(existing)}")
    skills_dir = run_dir / "skills"
    train_dir = run_dir / "trajectories" / "train"
    eval_dir = run_dir / "trajectories" / "eval"
    reports_dir = run_dir / "reports"
    for d in (skills_dir, train_dir, eval_dir, reports_dir):
        d.mkdir(parents=True, exist_ok=True)
    reflections_audit = _Audit(run_dir / "reflections.jsonl")
    revisions_audit = _Audit(run_dir / "revisions.jsonl")
    (run_dir / "config_snapshot.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", "utf-8"
    )

    store = SkillStore(skills_dir)
    skill = new_initial_skill(_initial_rules(config.initial_skill), allocator=store.allocator)
    store.save_version(skill)

    executor_config = config.effective_executor()
    executor_digest = executor_config.digest()
    client = ProtocolClient(cmd=list(config.external_cmd)) if config.env == "external" else None

    def run_eval(stage: int, current_skill: Skill) -> EvaluationReport:
        report = evaluate(
            current_skill,
            config.test,
            executor_config,
            config.master_seed,
            stage,
            horizon=config.horizon,
            out_dir=eval_dir,
            gateway=gateway,
            env_config=config,
            client=client,
        )
        (reports_dir / f"stage_{stage:02d}.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", "utf-8"
        )
        return report

    reports = [run_eval(0, skill)]
    revisions = 0
    episode_idx = 0

    try:
        if config.mode == "skill_aware":
            revisions, episode_idx = _aware_loop(
                config, skill, store, executor_config, executor_digest, gateway, client,
                train_dir, reflections_audit, revisions_audit, reports, run_eval,
            )
            skill = store.load_latest()
        elif config.mode == "skill_unaware":
            revisions, episode_idx = _unaware_loop(
                config, skill, store, executor_config, executor_digest, client,
                train_dir, revisions_audit, reports, run_eval, gateway,
            )
            skill = store.load_latest()
        # no_skill and static_skill collect no reflections and never revise:
        # the baseline evaluation is the whole run.
    finally:
        if client is not None:
            client.close()

    truncated = config.mode in ("skill_aware", "skill_unaware") and revisions < config.stages
    write_stage_csv(reports, run_dir / "stages.csv")
    summary = {
        "mode": config.mode,
        "completed_stages": revisions,
        "truncated": truncated,
        "final_skill_version": skill.version,
        "final_rate": reports[-1].success_rate,
        "executor_digest": executor_digest,
        "train_episodes": episode_idx,
    }
    (run_dir / "run_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", "utf-8")
    return SpiralResult(
        final_skill=skill,
        reports=reports,
        run_dir=run_dir,
        revisions=revisions,
        truncated=truncated,
        executor_digest=executor_digest,
        train_episodes=episode_idx,
    )


def _train_episode(config, skill, executor_config, executor_digest, client, train_dir,
                   revisions, episode_idx, family, seed, gateway):
    if executor_config.digest() != executor_digest:
        raise StoreError("executor config changed mid-run; the executor must stay frozen")
    task = (
        w.sample_task(family, seed, horizon=config.horizon)[0]
        if config.env == "microworld"
        else make_task(config, family, seed)
    )
    env = _make_env(config, family, seed, client)
    traj = run_episode(
        env,
        task,
        skill,
        executor_config,
        executor_seed=f"{config.master_seed}:train:{episode_idx}",
        traj_id=f"train-s{revisions:02d}-e{episode_idx:05d}-{task.task_id}",
        episode_index=episode_idx,
        gateway=gateway,
    )
    write_trajectory(traj, train_dir / f"{traj.traj_id}.jsonl")
    return traj


def _aware_loop(config, skill, store, executor_config, executor_digest, gateway, client,
                train_dir, reflections_audit, revisions_audit, reports, run_eval):
    reflector = _make_reflector(config, gateway)
    provider = _make_revision_provider(config, gateway)
    buffer = ReflectionBuffer(config.b)
    stream = task_stream(config.train, config.master_seed)
    revisions = 0
    episode_idx = 0
    while revisions < config.stages and episode_idx < config.max_train_episodes:
        family, seed = next(stream)
        traj = _train_episode(config, skill, executor_config, executor_digest, client,
                              train_dir, revisions, episode_idx, family, seed, gateway)
        episode_idx += 1
        try:
            records = reflect(reflector, traj, skill, config.k)
        except (ProviderError, MissingSidecar) as exc:
            logger.warning("reflection failed for %s: %s", traj.traj_id, exc)
            records = []
        for record in records:
            buffer.add(record)
            reflections_audit.record({"trajectory": traj.traj_id, **record.to_dict()})
        if not buffer.ready:
            continue
        drained = buffer.drain()
        recency = {r.record_id: i for i, r in enumerate(drained)}
        r_disc, r_opt, r_def, r_lap = partition_by_type(drained)
        old_body = skill.body
        try:
            consolidated = provider.consolidate(skill.body, r_disc, r_opt, r_def, recency=recency)
            new_body = provider.revise_body(skill.body, consolidated, store.allocator)
        except (ContractViolation, GatewayError) as exc:
            logger.warning("revision aborted (%s); keeping buffer for the next attempt", exc)
            buffer.records = drained + buffer.records
            continue
        digest_before_appendix = compute_body_digest(new_body)
        new_appendix, lapse_discards = provider.update_appendix(
            new_body, skill.appendix, r_lap, skill.version + 1
        )
        digest_after_appendix = compute_body_digest(new_body)
        new_skill = Skill.create(skill.version + 1, new_body, new_appendix)
        store.save_version(new_skill)
        revisions += 1
        revisions_audit.record(
            {
                "stage": revisions,
                "new_version": new_skill.version,
                "input_record_ids": [r.record_id for r in drained],
                "consolidated": consolidated.to_dict(),
                "lapse_records": [r.record_id for r in r_lap],
                "lapse_discards": [list(d) for d in lapse_discards],
                "body_digest_before_appendix": digest_before_appendix,
                "body_digest_after_appendix": digest_after_appendix,
                "per_rule_diff": _rule_diff(old_body, new_body),
                "buffer_size_at_trigger": len(drained),
            }
        )
        skill = new_skill
        if config.eval_every_stage or revisions == config.stages:
            reports.append(run_eval(revisions, skill))
    return revisions, episode_idx


def _unaware_loop(config, skill, store, executor_config, executor_digest, client,
                  train_dir, revisions_audit, reports, run_eval, gateway):
    """Coarse ablation: untyped trajectory summaries and whole-document rewrites."""
    summaries: list[dict] = []
    revisions = 0
    episode_idx = 0
    stream = task_stream(config.train, config.master_seed)
    while revisions < config.stages and episode_idx < config.max_train_episodes:
        family, seed = next(stream)
        traj = _train_episode(config, skill, executor_config, executor_digest, client,
                              train_dir, revisions, episode_idx, family, seed, gateway)
        episode_idx += 1
        _, spec, gtp = w.sample_task(family, seed, horizon=config.horizon)
        achieved = sorted(w.achieved_subgoal_classes(traj, spec, gtp))
        summaries.append({"trajectory": traj.traj_id, "outcome": traj.outcome, "classes": achieved})
        if len(summaries) < config.b:
            continue
        # whole-document rewrite: append rules for whatever succeeded, touch every rule's text
        batch_keys: list[str] = []
        for summary in summaries:
            if summary["outcome"] != 1:
                continue
            for kind in summary["classes"]:
                key = w.SUBGOAL_RULE_KEY[kind]
                if key not in batch_keys:
                    batch_keys.append(key)
        new_body = [replace(r, text=_coarse_rewrite(r.text)) for r in skill.body]
        for key in batch_keys:
            canon = w.CANON_BY_KEY[key]
            new_body.append(
                SkillRule(
                    rule_id=store.allocator.fresh(),
                    text=_coarse_rewrite(canon.text),
                    tags=canon.tags,
                    origin=RuleOrigin.DISCOVERY,
                    provenance=tuple(s["trajectory"] for s in summaries if s["outcome"] == 1),
                )
            )
        new_skill = Skill.create(skill.version + 1, tuple(new_body), skill.appendix)
        store.save_version(new_skill)
        revisions += 1
        revisions_audit.record(
            {
                "stage": revisions,
                "new_version": new_skill.version,
                "summaries": summaries,
                "appended_rule_keys": batch_keys,
                "rewrite": "all rule text",
            }
        )
        skill = new_skill
        summaries = []
        if config.eval_every_stage or revisions == config.stages:
            reports.append(run_eval(revisions, skill))
    return revisions, episode_idx


# ---------------------------------------------------------------------------
# replay


@dataclass(frozen=True)
class ReplayVerdict:
    identical: bool
    divergence_step: int | None


def replay_trajectory(traj: Trajectory, store_root: Path | str) -> ReplayVerdict:
    """Re-execute a logged micro-world episode from its seeds and compare step lists."""
    if traj.sidecar is None or traj.task.env_spec.env != "microworld":
        raise MissingSidecar(f"trajectory {traj.traj_id} cannot be replayed deterministically")
    if traj.seed_record.executor_config is None:
        raise MissingSidecar(f"trajectory {traj.traj_id} lacks an executor config snapshot")
    store = SkillStore(Path(store_root))
    skill = store.load_version(traj.skill_version_used)
    executor_config = ExecutorConfig.from_dict(traj.seed_record.executor_config)
    spec_env = traj.task.env_spec
    task, spec, _ = w.sample_task(spec_env.family, spec_env.seed, horizon=spec_env.horizon)
    env = w.MicroWorldEnv(spec, horizon=spec_env.horizon)
    regen = run_episode(
        env,
        task,
        skill,
        executor_config,
        executor_seed=traj.seed_record.executor_seed,
        traj_id=traj.traj_id,
        episode_index=traj.seed_record.episode_index,
    )
    for recorded, replayed in zip(traj.steps, regen.steps):
        if recorded != replayed:
            return ReplayVerdict(identical=False, divergence_step=recorded.index)
    if traj.length != regen.length:
        return ReplayVerdict(identical=False, divergence_step=min(traj.length, regen.length) + 1)
    if traj.outcome != regen.outcome:
        return ReplayVerdict(identical=False, divergence_step=traj.length)
    return ReplayVerdict(identical=True, divergence_step=None)
