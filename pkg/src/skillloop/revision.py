"""Turning a full reflection buffer into the next skill version.

The pipeline is: partition records by type, consolidate body-level signals
into a conflict-free set, apply that set as a constrained edit of the body
(untouched rules stay byte-identical), then rebuild the appendix from lapse
records against the already-revised body. Lapse records can never change the
body; body edits can never be smuggled in through the appendix step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

from .reflection import ReflectionRecord, ReflectionType
from .skill import AppendixItem, RuleIdAllocator, RuleOrigin, SkillRule, TOMBSTONE
from . import world as w

logger = logging.getLogger(__name__)


class RevisionError(Exception):
    pass


class ContractViolation(RevisionError):
    pass


class ReflectionBuffer:
    """Validated reflections awaiting the next revision; drained to empty each stage."""

    def __init__(self, capacity_threshold: int):
        if capacity_threshold < 1:
            raise ValueError("capacity threshold must be >= 1")
        self.capacity_threshold = capacity_threshold
        self.records: list[ReflectionRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def add(self, record: ReflectionRecord) -> None:
        self.records.append(record)

    @property
    def ready(self) -> bool:
        return len(self.records) >= self.capacity_threshold

    def drain(self) -> list[ReflectionRecord]:
        records, self.records = self.records, []
        return records


def partition_by_type(
    records: Sequence[ReflectionRecord],
) -> tuple[list[ReflectionRecord], list[ReflectionRecord], list[ReflectionRecord], list[ReflectionRecord]]:
    """Split records into (discovery, optimization, defect, lapse), preserving input order."""
    disc = [r for r in records if r.type == ReflectionType.DISCOVERY]
    opt = [r for r in records if r.type == ReflectionType.OPTIMIZATION]
    defect = [r for r in records if r.type == ReflectionType.SKILL_DEFECT]
    lapse = [r for r in records if r.type == ReflectionType.EXECUTION_LAPSE]
    return disc, opt, defect, lapse


@dataclass(frozen=True)
class Addition:
    text: str
    tags: frozenset[str]
    provenance: tuple[str, ...]


@dataclass(frozen=True)
class Edit:
    target_rule_id: str
    text: str
    tags: frozenset[str]
    kind: str  # "optimize" | "fix"
    provenance: tuple[str, ...]


@dataclass(frozen=True)
class ConsolidatedRevisionSet:
    additions: tuple[Addition, ...]
    edits: tuple[Edit, ...]
    discarded: tuple[tuple[str, str], ...] = ()  # (record_id, reason)

    def to_dict(self) -> dict:
        return {
            "additions": [
                {"text": a.text, "tags": sorted(a.tags), "provenance": list(a.provenance)}
                for a in self.additions
            ],
            "edits": [
                {"target_rule_id": e.target_rule_id, "text": e.text, "tags": sorted(e.tags),
                 "kind": e.kind, "provenance": list(e.provenance)}
                for e in self.edits
            ],
            "discarded": [list(d) for d in self.discarded],
        }


def validate_consolidated(body: Sequence[SkillRule], consolidated: ConsolidatedRevisionSet,
                          input_count: int) -> list[str]:
    problems: list[str] = []
    rule_ids = {r.rule_id for r in body if not r.retired}
    targets = [e.target_rule_id for e in consolidated.edits]
    if len(targets) != len(set(targets)):
        problems.append("multiple edits on one target")
    for edit in consolidated.edits:
        if edit.target_rule_id not in rule_ids:
            problems.append(f"edit targets unknown rule {edit.target_rule_id}")
    if len(consolidated.additions) + len(consolidated.edits) > input_count:
        problems.append("more revision entries than input records")
    return problems


def _directive_key(record: ReflectionRecord) -> tuple:
    return (record.type.value, record.target_rule_id, record.directive.text, tuple(sorted(record.directive.tags)))


def consolidate(
    body: Sequence[SkillRule],
    r_disc: Sequence[ReflectionRecord],
    r_opt: Sequence[ReflectionRecord],
    r_def: Sequence[ReflectionRecord],
    recency: dict[str, int] | None = None,
) -> ConsolidatedRevisionSet:
    """Scripted consolidation of body-level reflections into a consistent revision set.

    Rules, in order: exact-duplicate directives merge their provenance; a
    defect beats an optimization on the same target; among same-kind edits
    the most recent wins; a discovery whose predicate an existing live rule
    already covers is discarded; contradictory same-target fixes with no
    recency order discard each other. ``recency`` maps record ids to buffer
    position; records missing from it fall back to argument order.
    """
    all_records = list(r_disc) + list(r_opt) + list(r_def)
    if recency is None:
        recency = {rec.record_id: i for i, rec in enumerate(all_records)}
    discarded: list[tuple[str, str]] = []

    # (a) merge exact duplicates, keeping first appearance order
    merged: list[tuple[ReflectionRecord, list[str]]] = []
    by_key: dict[tuple, int] = {}
    for rec in all_records:
        key = _directive_key(rec)
        if key in by_key:
            merged[by_key[key]][1].append(rec.record_id)
        else:
            by_key[key] = len(merged)
            merged.append((rec, [rec.record_id]))

    # (c) discoveries duplicating an existing live rule's predicate are dropped;
    #     duplicate-predicate discoveries among themselves keep the most recent
    live_whens = {w.when_tag_of(r.tags) for r in body if not r.retired}
    live_whens.discard(None)
    additions: dict[str, tuple[ReflectionRecord, list[str]]] = {}  # when tag -> winner
    no_pred_additions: list[tuple[ReflectionRecord, list[str]]] = []
    edits_by_target: dict[str, list[tuple[ReflectionRecord, list[str]]]] = {}
    for rec, prov in merged:
        if rec.type == ReflectionType.DISCOVERY:
            when = w.when_tag_of(rec.directive.tags)
            if when is not None and when in live_whens:
                discarded.append((rec.record_id, "duplicates existing rule predicate"))
                logger.info("discarding discovery %s: predicate already covered", rec.record_id)
                continue
            if when is None:
                no_pred_additions.append((rec, prov))
                continue
            if when in additions:
                prev_rec, prev_prov = additions[when]
                if recency.get(rec.record_id, -1) >= recency.get(prev_rec.record_id, -1):
                    additions[when] = (rec, prov + prev_prov)
                else:
                    additions[when] = (prev_rec, prev_prov + prov)
            else:
                additions[when] = (rec, prov)
        else:
            edits_by_target.setdefault(rec.target_rule_id, []).append((rec, prov))

    # (b)/(d) resolve per-target conflicts
    final_edits: list[Edit] = []
    for target, entries in edits_by_target.items():
        defects = [e for e in entries if e[0].type == ReflectionType.SKILL_DEFECT]
        opts = [e for e in entries if e[0].type == ReflectionType.OPTIMIZATION]
        demoted_prov = [rid for rec, prov in opts for rid in prov] if defects else []
        pool = defects or opts
        pool_sorted = sorted(pool, key=lambda e: recency.get(e[0].record_id, -1))
        winner_rec, winner_prov = pool_sorted[-1]
        losers = pool_sorted[:-1]
        contradiction = False
        for loser_rec, loser_prov in losers:
            same_traj = loser_rec.source_trajectory == winner_rec.source_trajectory
            differs = _directive_key(loser_rec)[2:] != _directive_key(winner_rec)[2:]
            if defects and same_traj and differs:
                # contradictory fixes with no recency order: trust neither
                contradiction = True
                discarded.append((loser_rec.record_id, "contradictory fixes, no recency order"))
            else:
                winner_prov = winner_prov + loser_prov
        if contradiction:
            discarded.append((winner_rec.record_id, "contradictory fixes, no recency order"))
            logger.info("discarding contradictory fixes on %s", target)
            continue
        kind = "fix" if defects else "optimize"
        final_edits.append(
            Edit(
                target_rule_id=target,
                text=winner_rec.directive.text,
                tags=winner_rec.directive.tags,
                kind=kind,
                provenance=tuple(winner_prov + demoted_prov),
            )
        )
    final_edits.sort(key=lambda e: min(recency.get(rid, 10**9) for rid in e.provenance))

    addition_entries = list(additions.values()) + no_pred_additions
    addition_entries.sort(key=lambda entry: recency.get(entry[0].record_id, 10**9))
    final_additions = tuple(
        Addition(text=rec.directive.text, tags=rec.directive.tags, provenance=tuple(prov))
        for rec, prov in addition_entries
    )
    return ConsolidatedRevisionSet(additions=final_additions, edits=tuple(final_edits),
                                   discarded=tuple(discarded))


def revise_body(
    body: Sequence[SkillRule],
    consolidated: ConsolidatedRevisionSet,
    allocator: RuleIdAllocator,
) -> tuple[SkillRule, ...]:
    """Apply the consolidated set as a mechanical edit; untouched rules are returned as-is.

    Edits replace a rule's content in place, keeping id and position; a fix
    whose text is the tombstone marker retires the rule. Additions append new
    rules with fresh ids.
    """
    problems = validate_consolidated(body, consolidated, input_count=10**9)
    problems = [p for p in problems if not p.startswith("more revision")]
    if problems:
        raise ContractViolation("; ".join(problems))
    edit_for = {e.target_rule_id: e for e in consolidated.edits}
    new_body: list[SkillRule] = []
    for rule in body:
        edit = edit_for.get(rule.rule_id)
        if edit is None:
            new_body.append(rule)
            continue
        origin = RuleOrigin.DEFECT_FIX if edit.kind == "fix" else RuleOrigin.OPTIMIZATION
        tags = edit.tags if edit.text != TOMBSTONE else frozenset()
        new_body.append(
            SkillRule(rule_id=rule.rule_id, text=edit.text, tags=tags, origin=origin,
                      provenance=edit.provenance)
        )
    for addition in consolidated.additions:
        new_body.append(
            SkillRule(
                rule_id=allocator.fresh(),
                text=addition.text,
                tags=addition.tags,
                origin=RuleOrigin.DISCOVERY,
                provenance=addition.provenance,
            )
        )
    return tuple(new_body)


def _reminder_for(rule: SkillRule) -> str:
    return f"Follow rule {rule.rule_id} exactly: {rule.text}"


def update_appendix(
    new_body: Sequence[SkillRule],
    old_appendix: Sequence[AppendixItem],
    r_lap: Sequence[ReflectionRecord],
    next_version: int,
) -> tuple[tuple[AppendixItem, ...], tuple[tuple[str, str], ...]]:
    """Rebuild the appendix against the already-revised body.

    Items anchored to rules that no longer exist are pruned; reminders are
    regenerated from each anchor's current text; lapse records merge into an
    existing item for their target or open a new one. The body is never
    touched here. Returns (appendix, discarded lapse records).
    """
    live = {r.rule_id: r for r in new_body if not r.retired}
    items: dict[str, AppendixItem] = {}
    order: list[str] = []
    for item in old_appendix:
        rule = live.get(item.anchor_rule_id)
        if rule is None:
            logger.info("pruning obsolete appendix item anchored at %s", item.anchor_rule_id)
            continue
        items[item.anchor_rule_id] = replace(item, reminder=_reminder_for(rule))
        order.append(item.anchor_rule_id)
    discarded: list[tuple[str, str]] = []
    for rec in r_lap:
        if rec.type != ReflectionType.EXECUTION_LAPSE:
            raise ValueError("appendix update only consumes execution-lapse records")
        rule = live.get(rec.target_rule_id)
        if rule is None:
            discarded.append((rec.record_id, "lapse target no longer in body"))
            logger.info("discarding lapse %s: target %s gone", rec.record_id, rec.target_rule_id)
            continue
        existing = items.get(rec.target_rule_id)
        if existing is None:
            items[rec.target_rule_id] = AppendixItem(
                anchor_rule_id=rec.target_rule_id,
                reminder=_reminder_for(rule),
                lapse_count=1,
                last_updated_version=next_version,
            )
            order.append(rec.target_rule_id)
        else:
            items[rec.target_rule_id] = replace(
                existing, lapse_count=existing.lapse_count + 1, last_updated_version=next_version
            )
    return tuple(items[a] for a in order), tuple(discarded)


# ---------------------------------------------------------------------------
# providers: the scripted path above is the default; the remote path must meet
# the same hard constraints or the revision is aborted and the buffer kept.


class ScriptedRevisionProvider:
    """Purely mechanical consolidation and editing; runs offline."""

    def consolidate(self, body, r_disc, r_opt, r_def, recency=None) -> ConsolidatedRevisionSet:
        return consolidate(body, r_disc, r_opt, r_def, recency=recency)

    def revise_body(self, body, consolidated, allocator) -> tuple[SkillRule, ...]:
        return revise_body(body, consolidated, allocator)

    def update_appendix(self, new_body, old_appendix, r_lap, next_version):
        return update_appendix(new_body, old_appendix, r_lap, next_version)


CONSOLIDATE_SCHEMA = {
    "type": "object",
    "required": ["additions", "edits"],
    "fields": {
        "additions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["text", "provenance"],
                "fields": {
                    "text": {"type": "string"},
                    "tags": {"type": "array", "items": {"type": "string"}},
                    "provenance": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "edits": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["target_rule_id", "text", "kind", "provenance"],
                "fields": {
                    "target_rule_id": {"type": "string"},
                    "text": {"type": "string"},
                    "tags": {"type": "array", "items": {"type": "string"}},
                    "kind": {"type": "string", "enum": ["optimize", "fix"]},
                    "provenance": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
    },
}

BODY_SCHEMA = {
    "type": "object",
    "required": ["rules"],
    "fields": {
        "rules": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["rule_id", "text"],
                "fields": {
                    "rule_id": {"type": "string"},
                    "text": {"type": "string"},
                    "tags": {"type": "array", "items": {"type": "string"}},
                },
            },
        }
    },
}


class RemoteRevisionProvider:
    """Model-backed consolidation and body editing, re-checked against the scripted contract."""

    def __init__(self, gateway, consolidate_template: str = "consolidate_v1",
                 revise_template: str = "revise_body_v1"):
        self.gateway = gateway
        self.consolidate_template = consolidate_template
        self.revise_template = revise_template

    def consolidate(self, body, r_disc, r_opt, r_def, recency=None) -> ConsolidatedRevisionSet:
        records = list(r_disc) + list(r_opt) + list(r_def)
        import json as _json

        value = self.gateway.complete_structured(
            self.consolidate_template,
            {
                "body": _json.dumps([{"rule_id": r.rule_id, "text": r.text} for r in body if not r.retired]),
                "records": _json.dumps([r.to_dict() for r in records]),
            },
            CONSOLIDATE_SCHEMA,
        )
        by_id = {r.record_id: r for r in records}
        kinds = {"fix": ReflectionType.SKILL_DEFECT, "optimize": ReflectionType.OPTIMIZATION}
        proposed = ConsolidatedRevisionSet(
            additions=tuple(
                Addition(text=a["text"], tags=frozenset(a.get("tags", [])), provenance=tuple(a["provenance"]))
                for a in value["additions"]
            ),
            edits=tuple(
                Edit(target_rule_id=e["target_rule_id"], text=e["text"], tags=frozenset(e.get("tags", [])),
                     kind=e["kind"], provenance=tuple(e["provenance"]))
                for e in value["edits"]
            ),
        )
        problems = validate_consolidated(body, proposed, input_count=len(records))
        for entry in proposed.additions + proposed.edits:
            unknown = [rid for rid in entry.provenance if rid not in by_id]
            if unknown:
                problems.append(f"provenance names unknown records {unknown}")
        for edit in proposed.edits:
            types = {by_id[rid].type for rid in edit.provenance if rid in by_id}
            if ReflectionType.SKILL_DEFECT in types and edit.kind != "fix":
                problems.append(f"defect evidence on {edit.target_rule_id} must yield a fix")
        if problems:
            raise ContractViolation("; ".join(problems))
        return proposed

    def revise_body(self, body, consolidated, allocator) -> tuple[SkillRule, ...]:
        import json as _json

        value = self.gateway.complete_structured(
            self.revise_template,
            {
                "body": _json.dumps(
                    [{"rule_id": r.rule_id, "text": r.text, "tags": sorted(r.tags)} for r in body]
                ),
                "revisions": _json.dumps(consolidated.to_dict()),
            },
            BODY_SCHEMA,
        )
        reference = revise_body(body, consolidated, RuleIdAllocator(allocator.next_index))
        proposed_rules = value["rules"]
        touched = {e.target_rule_id for e in consolidated.edits}
        prior = {r.rule_id: r for r in body}
        if len(proposed_rules) != len(reference):
            raise ContractViolation("proposed body has wrong rule count")
        out: list[SkillRule] = []
        for ref_rule, doc in zip(reference, proposed_rules):
            is_prior = ref_rule.rule_id in prior
            if is_prior and doc["rule_id"] != ref_rule.rule_id:
                raise ContractViolation(f"rule order or ids changed at {ref_rule.rule_id}")
            if not is_prior and doc["rule_id"] not in (ref_rule.rule_id, "new"):
                raise ContractViolation(f"appended rule must carry rule_id \"new\", got {doc['rule_id']!r}")
            text = doc["text"]
            tags = frozenset(doc.get("tags", sorted(ref_rule.tags)))
            if is_prior and ref_rule.rule_id not in touched:
                # untouched rules must be preserved byte-for-byte
                if text != prior[ref_rule.rule_id].text or tags != prior[ref_rule.rule_id].tags:
                    raise ContractViolation(f"unimplicated rule {ref_rule.rule_id} was modified")
                out.append(prior[ref_rule.rule_id])
            else:
                # limited consistency edits only: whitespace normalization of touched rules
                if " ".join(text.split()) != " ".join(ref_rule.text.split()):
                    raise ContractViolation(f"rule {ref_rule.rule_id} diverges from the revision set")
                out.append(replace(ref_rule, text=text, tags=tags))
        for rule in out:
            allocator.observe(rule.rule_id)
        return tuple(out)

    def update_appendix(self, new_body, old_appendix, r_lap, next_version):
        # Appendix mechanics are structural bookkeeping; the scripted path is
        # authoritative for both providers so the body-isolation contract is
        # enforced by construction.
        return update_appendix(new_body, old_appendix, r_lap, next_version)
