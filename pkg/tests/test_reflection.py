import random

import pytest

from skillloop import world as w
from skillloop.evolution import run_episode
from skillloop.executor import ExecutorConfig
from skillloop.reflection import (
    Directive,
    Evidence,
    MissingSidecar,
    OracleReflector,
    ReflectionRecord,
    ReflectionType,
    reflect,
    validate_reflection,
)
from skillloop.skill import new_initial_skill
from skillloop.trajectory import ActionStatus, SeedRecord, StepTrace, TrajectoryBuilder


def run_one(family, seed, skill, config, exec_seed="t"):
    task, spec, _ = w.sample_task(family, seed)
    env = w.MicroWorldEnv(spec)
    return run_episode(env, task, skill, config, exec_seed, f"{family}-{seed}")


def ground_truth_trajectory(family, seed, skill_version=0):
    """Successful episode that just replays the ground-truth plan, sidecar attached."""
    task, spec, gtp = w.sample_task(family, seed)
    env = w.MicroWorldEnv(spec)
    builder = TrajectoryBuilder(f"gt-{family}-{seed}", task, skill_version, SeedRecord(seed, "gt"))
    obs = env.reset()
    result = None
    for action in gtp.plan():
        result = env.step(action)
        builder.add_step(obs, action,
                         ActionStatus.REJECTED if result.rejected else ActionStatus.ACCEPTED,
                         StepTrace())
        obs = result.observation
    assert result.success
    return builder.finalize(1), spec, gtp


def make_record(traj, rtype, target=None, text="do something", lo=1, hi=1):
    return ReflectionRecord(
        record_id="rec-1",
        type=rtype,
        evidence=Evidence(lo, hi, "excerpt"),
        directive=Directive(text),
        target_rule_id=target,
        source_trajectory=traj.traj_id,
        skill_version_seen=traj.skill_version_used,
    )


# ---------------------------------------------------------------------------
# validation


def test_defect_on_successful_trajectory_is_type_outcome_mismatch():
    skill = new_initial_skill(w.complete_skill_rules())
    traj, _, _ = ground_truth_trajectory("put", 3)
    record = make_record(traj, ReflectionType.SKILL_DEFECT, target=skill.body[0].rule_id)
    assert "type/outcome mismatch" in validate_reflection(record, traj, skill)


def test_discovery_with_target_is_unexpected_target():
    skill = new_initial_skill(w.complete_skill_rules())
    traj, _, _ = ground_truth_trajectory("put", 3)
    record = make_record(traj, ReflectionType.DISCOVERY, target=skill.body[0].rule_id)
    assert "unexpected target" in validate_reflection(record, traj, skill)


def test_optimization_with_dangling_target():
    skill = new_initial_skill(w.complete_skill_rules())
    traj, _, _ = ground_truth_trajectory("put", 3)
    record = make_record(traj, ReflectionType.OPTIMIZATION, target="r9999")
    assert "dangling target" in validate_reflection(record, traj, skill)


def test_out_of_range_evidence_and_empty_directive():
    skill = new_initial_skill(w.complete_skill_rules())
    traj, _, _ = ground_truth_trajectory("put", 3)
    record = make_record(traj, ReflectionType.DISCOVERY, lo=0, hi=traj.length + 5, text="  ")
    violations = validate_reflection(record, traj, skill)
    assert "evidence out of range" in violations
    assert "empty directive" in violations


# ---------------------------------------------------------------------------
# oracle behavior


def test_injected_heat_defect_yields_corrected_rule():
    skill = new_initial_skill(w.seeded_skill_rules(missing_families=(), defect_family="heat_put"))
    config = ExecutorConfig(lapse_rate=0.0)
    traj = run_one("heat_put", 2, skill, config)
    assert traj.outcome == 0
    records = reflect(OracleReflector(), traj, skill, k=1)
    assert len(records) == 1
    record = records[0]
    assert record.type == ReflectionType.SKILL_DEFECT
    heat_rule = next(r for r in skill.body if w.when_tag_of(r.tags) == w.WHEN_HEAT)
    assert record.target_rule_id == heat_rule.rule_id
    canon = w.CANON_BY_KEY["heat"]
    assert record.directive.text == canon.text
    assert "microwave" in record.directive.text
    assert w.do_tag_of(record.directive.tags) == "do:station:heat:microwave"


def test_forced_lapse_failure_yields_execution_lapse():
    skill = new_initial_skill(w.complete_skill_rules())
    config = ExecutorConfig(lapse_rate=1.0)
    traj = run_one("put", 4, skill, config)
    assert traj.outcome == 0
    records = reflect(OracleReflector(), traj, skill, k=1)
    assert len(records) == 1
    record = records[0]
    assert record.type == ReflectionType.EXECUTION_LAPSE
    lapse_steps = [tr for tr in traj.sidecar if tr.lapse_flag]
    assert record.target_rule_id == lapse_steps[0].applied_rule_ids[0]
    target_rule = skill.rule(record.target_rule_id)
    assert target_rule.text in record.directive.text


def test_complete_skill_clean_success_yields_nothing():
    skill = new_initial_skill(w.complete_skill_rules())
    config = ExecutorConfig(lapse_rate=0.0)
    traj = run_one("clean_put", 6, skill, config)
    assert traj.outcome == 1
    assert reflect(OracleReflector(), traj, skill, k=3) == []


def test_missing_family_success_yields_discovery_of_canonical_rule():
    skill = new_initial_skill(w.seeded_skill_rules(missing_families=("cool_put",), defect_family=None))
    traj, spec, gtp = ground_truth_trajectory("cool_put", 8)
    records = reflect(OracleReflector(), traj, skill, k=1)
    assert len(records) == 1
    record = records[0]
    assert record.type == ReflectionType.DISCOVERY
    assert record.target_rule_id is None
    canon = w.CANON_BY_KEY["cool"]
    assert record.directive.text == canon.text
    assert record.directive.tags == canon.tags


def test_empty_skill_success_discovers_in_evidence_order():
    skill = new_initial_skill([])
    traj, spec, gtp = ground_truth_trajectory("clean_put", 5)
    records = reflect(OracleReflector(), traj, skill, k=4)
    assert len(records) == 4
    assert all(r.type == ReflectionType.DISCOVERY for r in records)
    evidence = [r.evidence.step_lo for r in records]
    assert evidence == sorted(evidence)  # ordered by when each class was realized
    whens = {w.when_tag_of(r.directive.tags) for r in records}
    assert w.WHEN_SEARCH in whens and w.WHEN_CLEAN in whens


def test_oracle_respects_k_limit_and_priority():
    skill = new_initial_skill([])
    traj, _, _ = ground_truth_trajectory("clean_put", 5)
    assert len(reflect(OracleReflector(), traj, skill, k=1)) == 1
    assert len(reflect(OracleReflector(), traj, skill, k=2)) == 2


def test_oracle_optimization_on_lucky_search_shortcut():
    skill = new_initial_skill(w.complete_skill_rules())
    search_rule = next(r for r in skill.body if w.when_tag_of(r.tags) == w.WHEN_SEARCH)
    # find a task whose goal object sits late in the sweep, then hand-build the
    # shortcut: a lapse on step 1 jumps straight to the right receptacle
    chosen = None
    for seed in range(300):
        task, spec, gtp = w.sample_task("put", seed)
        rec = spec.objects[0].location
        if rec not in w.OPENABLE and w.SEARCH_SWEEP.index(rec) >= 4:
            chosen = (task, spec, gtp, rec)
            break
    assert chosen
    task, spec, gtp, rec = chosen
    env = w.MicroWorldEnv(spec)
    builder = TrajectoryBuilder("shortcut", task, 0, SeedRecord(spec.rng_seed, "s"))
    obs = env.reset()
    plan = [f"go to {rec}", f"take {spec.objects[0].name}"] + list(gtp.plan())[2:]
    traces = [StepTrace((search_rule.rule_id,), True)] + [StepTrace() for _ in plan[1:]]
    for action, trace in zip(plan, traces):
        result = env.step(action)
        builder.add_step(obs, action,
                         ActionStatus.REJECTED if result.rejected else ActionStatus.ACCEPTED, trace)
        obs = result.observation
    assert result.success
    traj = builder.finalize(1)
    records = reflect(OracleReflector(), traj, skill, k=1)
    assert len(records) == 1
    record = records[0]
    assert record.type == ReflectionType.OPTIMIZATION
    assert record.target_rule_id == search_rule.rule_id
    assert f"prior:{rec}" in record.directive.tags
    assert record.directive.text.startswith(w.CANON_BY_WHEN[w.WHEN_SEARCH].text)


def test_oracle_is_deterministic():
    skill = new_initial_skill(w.seeded_skill_rules())
    config = ExecutorConfig(lapse_rate=0.3)
    traj = run_one("heat_put", 9, skill, config)
    a = OracleReflector().reflect(traj, skill, 4)
    b = OracleReflector().reflect(traj, skill, 4)
    assert a == b


def test_oracle_requires_sidecar():
    skill = new_initial_skill(w.complete_skill_rules())
    traj, _, _ = ground_truth_trajectory("put", 3)
    object.__setattr__(traj, "sidecar", None)
    with pytest.raises(MissingSidecar):
        OracleReflector().reflect(traj, skill, 1)


def test_reflect_rejects_version_mismatch():
    skill = new_initial_skill(w.complete_skill_rules())
    traj, _, _ = ground_truth_trajectory("put", 3, skill_version=2)
    with pytest.raises(ValueError):
        reflect(OracleReflector(), traj, skill, 1)


def test_reflect_drops_invalid_provider_output():
    skill = new_initial_skill(w.complete_skill_rules())
    traj, _, _ = ground_truth_trajectory("put", 3)

    class LyingProvider:
        def reflect(self, trajectory, sk, k):
            return [
                make_record(trajectory, ReflectionType.SKILL_DEFECT, target=sk.body[0].rule_id),
                make_record(trajectory, ReflectionType.DISCOVERY, text="new rule"),
                make_record(trajectory, ReflectionType.OPTIMIZATION, target="r9999"),
            ]

    admitted = reflect(LyingProvider(), traj, skill, k=3)
    assert len(admitted) == 1
    assert admitted[0].type == ReflectionType.DISCOVERY


def test_every_oracle_record_validates_over_random_episodes():
    variants = [
        new_initial_skill(w.complete_skill_rules()),
        new_initial_skill(w.seeded_skill_rules()),
        new_initial_skill(w.seeded_skill_rules(("clean_put",), "cool_put")),
        new_initial_skill([]),
    ]
    rng = random.Random(7)
    oracle = OracleReflector()
    for i in range(120):
        family = w.FAMILIES[i % 6]
        skill = variants[i % len(variants)]
        config = ExecutorConfig(lapse_rate=rng.choice([0.0, 0.1, 0.3]))
        traj = run_one(family, 3000 + i, skill, config, exec_seed=f"rand:{i}")
        for record in oracle.reflect(traj, skill, k=rng.choice([1, 2, 3])):
            assert validate_reflection(record, traj, skill) == []
