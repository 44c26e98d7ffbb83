"""Typed reflections extracted from finalized trajectories.

Four record types partition the evidence a trajectory can carry: DISCOVERY
and OPTIMIZATION only from successes, SKILL_DEFECT and EXECUTION_LAPSE only
from failures. All but DISCOVERY must target an existing body rule. The
scripted oracle derives records deterministically from the episode sidecar
and the task's ground truth; the remote provider asks a model for the same
structure and drops anything that fails validation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

from . import world as w
from .skill import Skill
from .trajectory import Trajectory

logger = logging.getLogger(__name__)


class ReflectionError(Exception):
    pass


class MissingSidecar(ReflectionError):
    pass


class ProviderError(ReflectionError):
    pass


class ReflectionType(str, Enum):
    DISCOVERY = "DISCOVERY"
    OPTIMIZATION = "OPTIMIZATION"
    SKILL_DEFECT = "SKILL_DEFECT"
    EXECUTION_LAPSE = "EXECUTION_LAPSE"


SUCCESS_TYPES = frozenset({ReflectionType.DISCOVERY, ReflectionType.OPTIMIZATION})
FAILURE_TYPES = frozenset({ReflectionType.SKILL_DEFECT, ReflectionType.EXECUTION_LAPSE})


@dataclass(frozen=True)
class Evidence:
    step_lo: int
    step_hi: int
    excerpt: str


@dataclass(frozen=True)
class Directive:
    text: str
    tags: frozenset[str] = frozenset()


@dataclass(frozen=True)
class ReflectionRecord:
    record_id: str
    type: ReflectionType
    evidence: Evidence
    directive: Directive
    target_rule_id: str | None
    source_trajectory: str
    skill_version_seen: int

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "type": self.type.value,
            "evidence": {"step_lo": self.evidence.step_lo, "step_hi": self.evidence.step_hi,
                         "excerpt": self.evidence.excerpt},
            "directive": {"text": self.directive.text, "tags": sorted(self.directive.tags)},
            "target_rule_id": self.target_rule_id,
            "source_trajectory": self.source_trajectory,
            "skill_version_seen": self.skill_version_seen,
        }

    @staticmethod
    def from_dict(doc: dict) -> "ReflectionRecord":
        return ReflectionRecord(
            record_id=doc["record_id"],
            type=ReflectionType(doc["type"]),
            evidence=Evidence(doc["evidence"]["step_lo"], doc["evidence"]["step_hi"], doc["evidence"]["excerpt"]),
            directive=Directive(doc["directive"]["text"], frozenset(doc["directive"]["tags"])),
            target_rule_id=doc["target_rule_id"],
            source_trajectory=doc["source_trajectory"],
            skill_version_seen=doc["skill_version_seen"],
        )


def validate_reflection(record: ReflectionRecord, traj: Trajectory, skill: Skill) -> list[str]:
    """Empty list means the record is admissible; violations are data, not exceptions."""
    violations: list[str] = []
    if record.type in SUCCESS_TYPES and traj.outcome != 1:
        violations.append("type/outcome mismatch")
    if record.type in FAILURE_TYPES and traj.outcome != 0:
        violations.append("type/outcome mismatch")
    if record.type == ReflectionType.DISCOVERY:
        if record.target_rule_id is not None:
            violations.append("unexpected target")
    else:
        if record.target_rule_id is None:
            violations.append("missing target")
        else:
            rule = skill.rule(record.target_rule_id)
            if rule is None or rule.retired:
                violations.append("dangling target")
    lo, hi = record.evidence.step_lo, record.evidence.step_hi
    if not (1 <= lo <= hi <= traj.length):
        violations.append("evidence out of range")
    if not record.directive.text.strip():
        violations.append("empty directive")
    return violations


def reflect(provider, trajectory: Trajectory, skill: Skill, k: int) -> list[ReflectionRecord]:
    """Run a provider and admit at most k validated records; invalid output is dropped."""
    if trajectory.skill_version_used != skill.version:
        raise ValueError(
            f"trajectory ran under skill v{trajectory.skill_version_used}, got v{skill.version}"
        )
    records = provider.reflect(trajectory, skill, k)
    admitted: list[ReflectionRecord] = []
    for record in records:
        violations = validate_reflection(record, trajectory, skill)
        if violations:
            logger.warning("dropping invalid reflection %s: %s", record.record_id, violations)
            continue
        admitted.append(record)
        if len(admitted) >= k:
            break
    return admitted


# ---------------------------------------------------------------------------
# scripted oracle


def _excerpt(traj: Trajectory, t: int) -> str:
    step = traj.steps[t - 1]
    return f"step {t}: {step.action} ({step.status.value})"


class OracleReflector:
    """Deterministic reflector for micro-world episodes with a sidecar.

    Decision order when k limits output: defects, then lapses, then
    discoveries, then optimizations. Ground truth comes from regenerating the
    task's world from its env spec.
    """

    def reflect(self, traj: Trajectory, skill: Skill, k: int) -> list[ReflectionRecord]:
        if traj.sidecar is None:
            raise MissingSidecar(f"trajectory {traj.traj_id} has no executor sidecar")
        spec_env = traj.task.env_spec
        if spec_env.env != "microworld":
            raise MissingSidecar("oracle reflection requires the built-in micro-world")
        _, spec, gtp = w.sample_task(spec_env.family, spec_env.seed, horizon=spec_env.horizon)
        records: list[ReflectionRecord] = []
        seq = 0

        def emit(rtype, t_lo, t_hi, text, tags=frozenset(), target=None) -> None:
            nonlocal seq
            records.append(
                ReflectionRecord(
                    record_id=f"{traj.traj_id}:r{seq}",
                    type=rtype,
                    evidence=Evidence(t_lo, t_hi, _excerpt(traj, t_lo)),
                    directive=Directive(text, frozenset(tags)),
                    target_rule_id=target,
                    source_trajectory=traj.traj_id,
                    skill_version_seen=traj.skill_version_used,
                )
            )
            seq += 1

        if traj.outcome == 0:
            self._defects(traj, skill, emit)
            self._lapses(traj, skill, emit)
        else:
            self._discoveries(traj, skill, spec, gtp, emit)
            self._optimizations(traj, skill, spec, emit)
        return records[:k]

    # -- failure evidence ------------------------------------------------

    def _defects(self, traj, skill, emit) -> None:
        flagged: set[str] = set()
        for step, trace in zip(traj.steps, traj.sidecar):
            if trace.lapse_flag or not trace.applied_rule_ids:
                continue
            rule_id = trace.applied_rule_ids[0]
            rule = skill.rule(rule_id)
            if rule is None or rule.retired or rule_id in flagged:
                continue
            when = w.when_tag_of(rule.tags)
            canon = w.CANON_BY_WHEN.get(when) if when else None
            if canon is None:
                continue  # no ground truth to correct against
            rejected = step.status.value == "rejected_by_env"
            contradicts = w.do_tag_of(rule.tags) != canon.do
            if rejected or contradicts:
                flagged.add(rule_id)
                emit(
                    ReflectionType.SKILL_DEFECT,
                    step.index,
                    step.index,
                    canon.text,
                    canon.tags,
                    target=rule_id,
                )

    def _lapses(self, traj, skill, emit) -> None:
        flagged: set[str] = set()
        for step, trace in zip(traj.steps, traj.sidecar):
            if not trace.lapse_flag or not trace.applied_rule_ids:
                continue
            rule_id = trace.applied_rule_ids[0]
            rule = skill.rule(rule_id)
            if rule is None or rule.retired or rule_id in flagged:
                continue
            flagged.add(rule_id)
            emit(
                ReflectionType.EXECUTION_LAPSE,
                step.index,
                step.index,
                f"Follow this rule carefully: {rule.text}",
                frozenset(),
                target=rule_id,
            )

    # -- success evidence --------------------------------------------------

    def _discoveries(self, traj, skill, spec, gtp, emit) -> None:
        achieved = w.achieved_subgoal_classes(traj, spec, gtp)
        covered = {w.when_tag_of(r.tags) for r in skill.live_rules()}
        for kind in sorted(achieved, key=achieved.get):
            canon = w.CANON_BY_KEY[w.SUBGOAL_RULE_KEY[kind]]
            if canon.when in covered:
                continue
            covered.add(canon.when)
            emit(ReflectionType.DISCOVERY, achieved[kind], achieved[kind], canon.text, canon.tags)

    def _optimizations(self, traj, skill, spec, emit) -> None:
        search_rule = None
        for rule in skill.live_rules():
            if w.when_tag_of(rule.tags) == w.WHEN_SEARCH:
                search_rule = rule
                break
        if search_rule is None:
            return
        applied = any(
            trace.applied_rule_ids and trace.applied_rule_ids[0] == search_rule.rule_id
            for trace in traj.sidecar
        )
        if not applied:
            return
        effort = w.search_effort(traj, spec, priors=w.prior_receptacles(search_rule.tags))
        if effort is None:
            return
        realized, nominal, found_rec = effort
        if realized >= nominal:
            return
        canon = w.CANON_BY_WHEN[w.WHEN_SEARCH]
        text = canon.text + f" Check the {found_rec} first for {spec.goal.klass} items."
        tags = canon.tags | {f"prior:{found_rec}"}
        locate_step = max(2, realized + 1)
        emit(ReflectionType.OPTIMIZATION, 1, min(locate_step, traj.length), text, tags,
             target=search_rule.rule_id)


# ---------------------------------------------------------------------------
# remote provider

REFLECTION_SCHEMA = {
    "type": "object",
    "required": ["records"],
    "fields": {
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["type", "evidence_lo", "evidence_hi", "excerpt", "directive_text"],
                "fields": {
                    "type": {
                        "type": "string",
                        "enum": [t.value for t in ReflectionType],
                    },
                    "target_rule_id": {"type": "string", "nullable": True},
                    "evidence_lo": {"type": "integer"},
                    "evidence_hi": {"type": "integer"},
                    "excerpt": {"type": "string"},
                    "directive_text": {"type": "string"},
                    "directive_tags": {"type": "array", "items": {"type": "string"}},
                },
            },
        }
    },
}


class RemoteReflector:
    """Asks a remote model for typed reflections; anything off-schema never leaves the gateway."""

    def __init__(self, gateway, template_id: str = "reflect_v1"):
        self.gateway = gateway
        self.template_id = template_id

    def reflect(self, traj: Trajectory, skill: Skill, k: int) -> list[ReflectionRecord]:
        from .executor import format_history_excerpt
        from .gateway import GatewayError
        from .skill import render_skill_text
        from .trajectory import history_at

        history = history_at(traj, traj.length)
        try:
            value = self.gateway.complete_structured(
                self.template_id,
                {
                    "instruction": traj.task.instruction,
                    "skill": render_skill_text(skill),
                    "outcome": str(traj.outcome),
                    "k": str(k),
                    "history": format_history_excerpt(history),
                },
                REFLECTION_SCHEMA,
            )
        except GatewayError as exc:
            logger.warning("reflection call failed for %s (%s); no reflections", traj.traj_id, exc)
            return []
        records = []
        for i, doc in enumerate(value["records"][:k]):
            records.append(
                ReflectionRecord(
                    record_id=f"{traj.traj_id}:m{i}",
                    type=ReflectionType(doc["type"]),
                    evidence=Evidence(doc["evidence_lo"], doc["evidence_hi"], doc["excerpt"]),
                    directive=Directive(doc["directive_text"], frozenset(doc.get("directive_tags", []))),
                    target_rule_id=doc.get("target_rule_id"),
                    source_trajectory=traj.traj_id,
                    skill_version_seen=traj.skill_version_used,
                )
            )
        return records
