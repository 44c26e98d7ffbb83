"""Action selection: a deterministic rule-following executor and a remote-model executor.

The executor maps (instruction, skill, history) to the next action and is
frozen for the lifetime of a run: nothing here learns or mutates config. The
rule-based provider matches skill rules against a belief state parsed from
the history; a seeded lapse makes it deviate from an applicable rule with
probability ``lapse_rate``, damped for rules the skill appendix emphasizes.
Rules are followed literally, wrong prescriptions included, so defective
skill content produces detectably failing behavior.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Sequence

from . import world as w
from .belief import Belief
from .skill import Skill, SkillRule, render_skill_text
from .trajectory import Task


class ExecutorError(Exception):
    pass


class UnparseableModelOutput(ExecutorError):
    pass


class Provider(str, Enum):
    RULE_BASED = "rule_based"
    REMOTE_MODEL = "remote_model"


class SkillMode(str, Enum):
    NONE = "none"
    STATIC = "static"
    EVOLVING = "evolving"


@dataclass(frozen=True)
class ExecutorConfig:
    provider: Provider = Provider.RULE_BASED
    lapse_rate: float = 0.15
    rng_seed: int = 0
    prompt_template_id: str = "executor_action_v1"
    skill_mode: SkillMode = SkillMode.EVOLVING
    appendix_lapse_damping: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.lapse_rate <= 1.0:
            raise ValueError("lapse_rate must lie in [0, 1]")

    def digest(self) -> str:
        doc = asdict(self)
        doc["provider"] = self.provider.value
        doc["skill_mode"] = self.skill_mode.value
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["provider"] = self.provider.value
        doc["skill_mode"] = self.skill_mode.value
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "ExecutorConfig":
        return ExecutorConfig(
            provider=Provider(doc["provider"]),
            lapse_rate=doc["lapse_rate"],
            rng_seed=doc["rng_seed"],
            prompt_template_id=doc["prompt_template_id"],
            skill_mode=SkillMode(doc["skill_mode"]),
            appendix_lapse_damping=doc["appendix_lapse_damping"],
        )


@dataclass(frozen=True)
class ActionChoice:
    action: str
    applied_rule_ids: tuple[str, ...]
    lapse_flag: bool


# ---------------------------------------------------------------------------
# rule matching


def condition_holds(when: str, belief: Belief) -> bool:
    goal = belief.goal
    if goal is None:
        return False
    holding = belief.holding_goal()
    if when == w.WHEN_OPEN:
        place = belief.place
        if place is None or place not in w.OPENABLE or belief.open_state.get(place, False):
            return False
        if belief.needs_more() and holding is None and place not in belief.searched:
            return True
        if any(rec == place for _, rec in belief.known_candidates()):
            return True
        return holding is not None and goal.target == place
    if when == w.WHEN_TAKE:
        return (
            belief.carried is None
            and belief.needs_more()
            and belief.visible_candidate_here() is not None
        )
    if when == w.WHEN_CLEAN:
        return goal.requires == "clean" and holding is not None and holding not in belief.clean
    if when == w.WHEN_HEAT:
        return goal.requires == "hot" and holding is not None and holding not in belief.hot
    if when == w.WHEN_COOL:
        return goal.requires == "cold" and holding is not None and holding not in belief.cold
    if when == w.WHEN_EXAMINE:
        return goal.requires == "examined" and holding is not None and holding not in belief.examined
    if when == w.WHEN_DELIVER:
        return (
            holding is not None
            and goal.target is not None
            and belief._meets_requirement(holding)
        )
    if when == w.WHEN_SEARCH:
        return (
            belief.needs_more()
            and holding is None
            and belief.visible_candidate_here() is None
        )
    return False


def resolve_do(rule: SkillRule, belief: Belief) -> str | None:
    """Turn a rule's machine tag into the next concrete action, or None if it cannot act here."""
    do = w.do_tag_of(rule.tags)
    goal = belief.goal
    if do is None or goal is None:
        return None
    holding = belief.holding_goal()
    if do == w.DO_OPEN:
        return f"open {belief.place}" if belief.place else None
    if do == w.DO_TAKE:
        obj = belief.visible_candidate_here()
        return f"take {obj}" if obj else None
    if do == w.DO_DELIVER:
        if holding is None or goal.target is None:
            return None
        if belief.place != goal.target:
            return f"go to {goal.target}"
        if goal.target in w.OPENABLE and not belief.open_state.get(goal.target, False):
            return None  # opening is another rule's job
        return f"put {holding} {w.PREPOSITION[goal.target]} {goal.target}"
    if do == w.DO_SEARCH:
        for _, rec in belief.known_candidates():
            if rec != belief.place:
                return f"go to {rec}"
        for rec in w.sweep_order(w.prior_receptacles(rule.tags)):
            if rec not in belief.searched and rec != belief.place:
                return f"go to {rec}"
        return None
    if do.startswith("do:station:"):
        _, _, verb, station = do.split(":")
        if holding is None:
            return None
        if belief.place != station:
            return f"go to {station}"
        return f"{verb} {holding}"
    return None


def valid_form_actions(belief: Belief) -> list[str]:
    """Grammatically valid candidate actions given what the agent can currently see."""
    out = ["look"]
    out.extend(f"go to {rec}" for rec in w.RECEPTACLE_NAMES)
    out.extend(f"go to {room}" for room in w.ROOMS)
    place = belief.place
    if place in w.OPENABLE:
        state = belief.open_state.get(place)
        if state is False:
            out.append(f"open {place}")
        elif state is True:
            out.append(f"close {place}")
    if place is not None and belief.carried is None:
        for obj, rec in sorted(belief.seen_at.items()):
            if rec == place:
                out.append(f"take {obj}")
    if belief.carried is not None:
        if place is not None and w.PREPOSITION.get(place):
            out.append(f"put {belief.carried} {w.PREPOSITION[place]} {place}")
        for verb in ("clean", "heat", "cool", "examine"):
            out.append(f"{verb} {belief.carried}")
    return out


def random_valid_action(belief: Belief, rng: random.Random, exclude: str | None = None) -> str:
    candidates = [a for a in valid_form_actions(belief) if a != exclude]
    return rng.choice(candidates)


def _rule_parts(rule: SkillRule) -> tuple[str | None, str | None]:
    return w.when_tag_of(rule.tags), w.do_tag_of(rule.tags)


def next_action(
    config: ExecutorConfig,
    task: Task,
    skill: Skill,
    history: Sequence[str],
    rng: random.Random,
    gateway=None,
) -> ActionChoice:
    """Select the next action per Execute semantics; pure given (history, rng state)."""
    if config.provider == Provider.REMOTE_MODEL:
        return _remote_action(config, task, skill, history, gateway)

    belief = Belief.from_history(task.instruction, history)
    if config.skill_mode == SkillMode.NONE:
        return ActionChoice(random_valid_action(belief, rng), (), False)

    anchored = skill.anchored_rule_ids()
    for rule in skill.live_rules():
        when, do = _rule_parts(rule)
        if when is None or do is None or not condition_holds(when, belief):
            continue
        prescribed = resolve_do(rule, belief)
        if prescribed is None:
            continue
        eps = config.lapse_rate
        if rule.rule_id in anchored:
            eps *= config.appendix_lapse_damping
        if rng.random() < eps:
            deviation = random_valid_action(belief, rng, exclude=prescribed)
            return ActionChoice(deviation, (rule.rule_id,), True)
        return ActionChoice(prescribed, (rule.rule_id,), False)
    return ActionChoice(random_valid_action(belief, rng), (), False)


# ---------------------------------------------------------------------------
# remote provider

ACTION_SCHEMA = {
    "type": "object",
    "required": ["action"],
    "fields": {"action": {"type": "string"}},
}


def format_history_excerpt(history: Sequence[str], max_steps: int = 20) -> str:
    """Render the most recent steps plus every rejected-action step, oldest first.

    Rejected steps are the key evidence for failure analysis, so they survive
    truncation even when they fall outside the recency window; an elision
    marker stands in for dropped spans.
    """
    pairs: list[tuple[str, str]] = []
    obs = None
    for i, text in enumerate(history):
        if i % 2 == 0:
            obs = text
        else:
            pairs.append((obs, text))
    keep: set[int] = set(range(max(0, len(pairs) - max_steps), len(pairs)))
    for i in range(len(pairs)):
        followup = pairs[i + 1][0] if i + 1 < len(pairs) else (history[-1] if len(history) % 2 == 1 else None)
        if followup is not None and followup.startswith("Nothing happens"):
            keep.add(i)
    lines: list[str] = []
    previous = -1
    for i in sorted(keep):
        if i != previous + 1:
            lines.append("...")
        lines.append(f"> {pairs[i][0]}\n< {pairs[i][1]}")
        previous = i
    if len(history) % 2 == 1:
        lines.append(f"> {history[-1]}")
    return "\n".join(lines)


def _remote_action(config, task, skill, history, gateway) -> ActionChoice:
    if gateway is None:
        raise ExecutorError("remote_model provider requires a gateway")
    skill_text = "" if config.skill_mode == SkillMode.NONE else render_skill_text(skill)
    value = gateway.complete_structured(
        config.prompt_template_id,
        {
            "instruction": task.instruction,
            "skill": skill_text,
            "history": format_history_excerpt(history),
        },
        ACTION_SCHEMA,
    )
    action = str(value["action"]).strip().splitlines()[0] if str(value["action"]).strip() else ""
    if not action:
        raise UnparseableModelOutput("model returned an empty action")
    return ActionChoice(action, (), False)
