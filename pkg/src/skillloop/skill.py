"""Versioned skill documents: a rule body, an emphasis appendix, and an append-only store.

A skill is an immutable snapshot ``(body, appendix)``. The body is an ordered
list of rules with stable ids; the appendix holds reminder items anchored to
body rules and never introduces prescriptions of its own. Versions live in an
append-only directory, one self-describing JSON document per version.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

SKILL_FORMAT = "skill/1"
STORE_FORMAT = "skillstore/1"
DIGEST_ALGO = "sha256"

# A rule edited down to this marker is retired: dropped from rendering and
# from executor matching, but its id stays reserved so appendix pruning and
# the never-reuse-ids invariant keep working.
TOMBSTONE = "[retired]"


class SkillError(Exception):
    pass


class EmptyRuleText(SkillError):
    pass


class InvalidSkill(SkillError):
    pass


class VersionGap(SkillError):
    pass


class SkillNotFound(SkillError):
    pass


class CorruptRecord(SkillError):
    pass


class RuleOrigin(str, Enum):
    INITIAL = "initial"
    DISCOVERY = "discovery"
    OPTIMIZATION = "optimization"
    DEFECT_FIX = "defect_fix"


@dataclass(frozen=True)
class SkillRule:
    rule_id: str
    text: str
    tags: frozenset[str] = frozenset()
    origin: RuleOrigin = RuleOrigin.INITIAL
    # ids of the reflection records that produced or last edited this rule
    provenance: tuple[str, ...] = ()

    @property
    def retired(self) -> bool:
        return self.text == TOMBSTONE


@dataclass(frozen=True)
class AppendixItem:
    anchor_rule_id: str
    reminder: str
    lapse_count: int = 1
    last_updated_version: int = 0


@dataclass(frozen=True)
class Skill:
    version: int
    body: tuple[SkillRule, ...]
    appendix: tuple[AppendixItem, ...]
    body_digest: str

    @staticmethod
    def create(version: int, body: Iterable[SkillRule], appendix: Iterable[AppendixItem] = ()) -> "Skill":
        body = tuple(body)
        return Skill(version=version, body=body, appendix=tuple(appendix), body_digest=compute_body_digest(body))

    def live_rules(self) -> tuple[SkillRule, ...]:
        return tuple(r for r in self.body if not r.retired)

    def rule(self, rule_id: str) -> SkillRule | None:
        for r in self.body:
            if r.rule_id == rule_id:
                return r
        return None

    def anchored_rule_ids(self) -> frozenset[str]:
        return frozenset(item.anchor_rule_id for item in self.appendix)


def compute_body_digest(body: Sequence[SkillRule]) -> str:
    payload = json.dumps(
        [[r.rule_id, r.text, sorted(r.tags)] for r in body],
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class RuleIdAllocator:
    """Monotone counter for rule ids; ids are never reused within a run."""

    def __init__(self, next_index: int = 1):
        self.next_index = next_index

    def fresh(self) -> str:
        rid = f"r{self.next_index:04d}"
        self.next_index += 1
        return rid

    def observe(self, rule_id: str) -> None:
        m = re.fullmatch(r"r(\d+)", rule_id)
        if m:
            self.next_index = max(self.next_index, int(m.group(1)) + 1)


def new_initial_skill(
    rules: Sequence[str | tuple[str, Iterable[str]]],
    allocator: RuleIdAllocator | None = None,
) -> Skill:
    """Build the version-0 skill from rule texts (optionally with tags)."""
    allocator = allocator or RuleIdAllocator()
    body = []
    for entry in rules:
        if isinstance(entry, str):
            text, tags = entry, frozenset()
        else:
            text, raw_tags = entry
            tags = frozenset(raw_tags)
        if not text.strip():
            raise EmptyRuleText("skill rules must have non-empty text")
        body.append(SkillRule(rule_id=allocator.fresh(), text=text, tags=tags, origin=RuleOrigin.INITIAL))
    return Skill.create(version=0, body=body, appendix=())


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[tuple[str, str], ...]  # (code, detail)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_skill(s: Skill) -> ValidationReport:
    """Check structural invariants; violations are reported, never raised."""
    violations: list[tuple[str, str]] = []
    seen: set[str] = set()
    for r in s.body:
        if r.rule_id in seen:
            violations.append(("duplicate id", r.rule_id))
        seen.add(r.rule_id)
        if not r.text.strip():
            violations.append(("empty text", r.rule_id))
    live = {r.rule_id for r in s.live_rules()}
    for item in s.appendix:
        if item.anchor_rule_id not in live:
            violations.append(("dangling anchor", item.anchor_rule_id))
        if item.lapse_count < 0:
            violations.append(("negative lapse count", item.anchor_rule_id))
    if compute_body_digest(s.body) != s.body_digest:
        violations.append(("digest mismatch", s.body_digest))
    return ValidationReport(tuple(violations))


def render_skill_text(s: Skill) -> str:
    """Render the skill as the deterministic text document shown to executors.

    Retired rules are omitted. Identical skills render to identical bytes.
    """
    report = validate_skill(s)
    if not report.ok:
        raise InvalidSkill(f"cannot render invalid skill: {report.violations}")
    lines = [f"SKILL VERSION {s.version}", "BODY"]
    for r in s.live_rules():
        lines.append(f"- [{r.rule_id}] {r.text}")
    lines.append("APPENDIX")
    for item in s.appendix:
        lines.append(f"- [anchor {item.anchor_rule_id}] {item.reminder} (lapses seen: {item.lapse_count})")
    return "\n".join(lines) + "\n"


def _rule_to_doc(r: SkillRule) -> dict:
    return {
        "rule_id": r.rule_id,
        "text": r.text,
        "tags": sorted(r.tags),
        "origin": r.origin.value,
        "provenance": list(r.provenance),
    }


def _rule_from_doc(doc: dict) -> SkillRule:
    return SkillRule(
        rule_id=doc["rule_id"],
        text=doc["text"],
        tags=frozenset(doc["tags"]),
        origin=RuleOrigin(doc["origin"]),
        provenance=tuple(doc["provenance"]),
    )


def skill_to_document(s: Skill) -> str:
    doc = {
        "format": SKILL_FORMAT,
        "digest_algo": DIGEST_ALGO,
        "version": s.version,
        "body_digest": s.body_digest,
        "body": [_rule_to_doc(r) for r in s.body],
        "appendix": [
            {
                "anchor_rule_id": a.anchor_rule_id,
                "reminder": a.reminder,
                "lapse_count": a.lapse_count,
                "last_updated_version": a.last_updated_version,
            }
            for a in s.appendix
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def skill_from_document(text: str) -> Skill:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptRecord(f"unparseable skill document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != SKILL_FORMAT:
        raise CorruptRecord(f"unknown skill document format: {doc.get('format') if isinstance(doc, dict) else doc!r}")
    if doc.get("digest_algo") != DIGEST_ALGO:
        raise CorruptRecord(f"unsupported digest algorithm: {doc.get('digest_algo')}")
    try:
        body = tuple(_rule_from_doc(r) for r in doc["body"])
        appendix = tuple(
            AppendixItem(
                anchor_rule_id=a["anchor_rule_id"],
                reminder=a["reminder"],
                lapse_count=a["lapse_count"],
                last_updated_version=a["last_updated_version"],
            )
            for a in doc["appendix"]
        )
        skill = Skill(version=doc["version"], body=body, appendix=appendix, body_digest=doc["body_digest"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptRecord(f"malformed skill document: {exc}") from exc
    if compute_body_digest(skill.body) != skill.body_digest:
        raise CorruptRecord("body digest does not match recorded digest")
    return skill


class SkillStore:
    """Append-only, gap-free store of skill versions under one directory.

    The store owns the rule-id allocator; its state is persisted in the store
    metadata so rule ids survive process restarts and are never reused.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._meta_path = self.root / "store_meta.json"
        if self._meta_path.exists():
            meta = json.loads(self._meta_path.read_text("utf-8"))
            if meta.get("format") != STORE_FORMAT:
                raise CorruptRecord(f"unknown store format: {meta.get('format')}")
            self.allocator = RuleIdAllocator(meta["next_rule_index"])
        else:
            self.allocator = RuleIdAllocator()
            self._write_meta()

    def _write_meta(self) -> None:
        meta = {
            "format": STORE_FORMAT,
            "digest_algo": DIGEST_ALGO,
            "next_rule_index": self.allocator.next_index,
        }
        self._meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", "utf-8")

    def _version_path(self, n: int) -> Path:
        return self.root / f"v{n:06d}.json"

    def versions(self) -> list[int]:
        out = []
        for p in self.root.glob("v*.json"):
            m = re.fullmatch(r"v(\d{6})\.json", p.name)
            if m:
                out.append(int(m.group(1)))
        return sorted(out)

    def latest_version(self) -> int | None:
        versions = self.versions()
        return versions[-1] if versions else None

    def fresh_rule_id(self) -> str:
        rid = self.allocator.fresh()
        self._write_meta()
        return rid

    def save_version(self, s: Skill) -> int:
        latest = self.latest_version()
        expected = 0 if latest is None else latest + 1
        if s.version != expected:
            raise VersionGap(f"expected version {expected}, got {s.version}")
        report = validate_skill(s)
        if not report.ok:
            raise InvalidSkill(f"refusing to store invalid skill: {report.violations}")
        for r in s.body:
            self.allocator.observe(r.rule_id)
        path = self._version_path(s.version)
        path.write_text(skill_to_document(s), "utf-8")
        self._write_meta()
        return s.version

    def load_version(self, n: int) -> Skill:
        path = self._version_path(n)
        if not path.exists():
            raise SkillNotFound(f"no stored skill version {n}")
        skill = skill_from_document(path.read_text("utf-8"))
        if skill.version != n:
            raise CorruptRecord(f"file {path.name} holds version {skill.version}")
        return skill

    def load_latest(self) -> Skill:
        latest = self.latest_version()
        if latest is None:
            raise SkillNotFound("store is empty")
        return self.load_version(latest)
