"""Deterministic household text environment with six task families.

The world is intentionally small (3 rooms, 8 receptacles of which 2 open and
close, 10 objects) so that an unguided random policy measurably fails within
the step horizon while a policy following a handful of procedural rules
succeeds. Every task is generated from (family, seed) alone; the generator
also emits a ground-truth procedure, which the scripted reflection oracle may
consult but executors never see.

Observation strings follow fixed templates so the rule-based executor can
parse its belief state back out of the episode history.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .trajectory import EnvSpec, Task, Trajectory

FAMILIES = ("put", "clean_put", "heat_put", "cool_put", "examine", "put_two")

ROOMS = ("kitchen", "livingroom", "bedroom")

# name, room, openable, preposition (None = holds no objects), station verb
RECEPTACLE_DEFS = (
    ("countertop", "kitchen", False, "on", None),
    ("sink", "kitchen", False, "in", "clean"),
    ("fridge", "kitchen", True, "in", "cool"),
    ("microwave", "kitchen", False, "in", "heat"),
    ("cabinet", "kitchen", True, "in", None),
    ("shelf", "livingroom", False, "on", None),
    ("desk", "bedroom", False, "on", None),
    ("desklamp", "bedroom", False, None, "examine"),
)

RECEPTACLE_NAMES = tuple(d[0] for d in RECEPTACLE_DEFS)
OPENABLE = frozenset(d[0] for d in RECEPTACLE_DEFS if d[2])
PLACEABLE = tuple(d[0] for d in RECEPTACLE_DEFS if d[3] is not None)
PREPOSITION = {d[0]: d[3] for d in RECEPTACLE_DEFS}
STATION_FOR = {d[4]: d[0] for d in RECEPTACLE_DEFS if d[4]}
ROOM_OF = {d[0]: d[1] for d in RECEPTACLE_DEFS}

# Fixed sweep used by the search rule and by the reflection oracle when it
# judges whether a search finished faster than prescribed.
SEARCH_SWEEP = PLACEABLE

OBJECT_CLASSES = ("apple", "mug", "plate", "book", "pen", "towel", "bowl", "candle", "sponge", "egg", "cloth")

TARGET_RECEPTACLES = ("countertop", "shelf", "desk", "cabinet")

WORLD_SIZE = 10  # objects per world


class WorldError(Exception):
    pass


class UnknownFamily(WorldError):
    pass


@dataclass(frozen=True)
class Goal:
    family: str
    klass: str
    count: int
    target: str | None  # None for examine
    requires: str | None  # None | "clean" | "hot" | "cold" | "examined"


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    klass: str
    location: str


@dataclass(frozen=True)
class WorldSpec:
    """Initial world state; regenerable from (family, seed)."""

    family: str
    rng_seed: int
    agent_room: str
    open_state: tuple[tuple[str, bool], ...]  # (openable receptacle, is_open)
    objects: tuple[ObjectSpec, ...]
    goal: Goal


@dataclass(frozen=True)
class SubGoal:
    kind: str  # locate | open | take | clean | heat | cool | examine | deliver
    obj: str | None
    receptacle: str | None
    actions: tuple[str, ...]
    preconditions: tuple[str, ...]


@dataclass(frozen=True)
class GroundTruthProcedure:
    subgoals: tuple[SubGoal, ...]

    def plan(self) -> tuple[str, ...]:
        out: list[str] = []
        for sg in self.subgoals:
            out.extend(sg.actions)
        return tuple(out)

    def classes(self) -> frozenset[str]:
        kinds = {sg.kind for sg in self.subgoals}
        if any(a.startswith("open ") for a in self.plan()):
            kinds.add("open")
        return frozenset(kinds)


# ---------------------------------------------------------------------------
# task generation


def _instruction(goal: Goal) -> str:
    prep = PREPOSITION[goal.target] if goal.target else None
    if goal.family == "put":
        return f"Put a {goal.klass} {prep} the {goal.target}."
    if goal.family == "clean_put":
        return f"Put a clean {goal.klass} {prep} the {goal.target}."
    if goal.family == "heat_put":
        return f"Put a hot {goal.klass} {prep} the {goal.target}."
    if goal.family == "cool_put":
        return f"Put a cool {goal.klass} {prep} the {goal.target}."
    if goal.family == "examine":
        return f"Examine a {goal.klass} under the desklamp."
    if goal.family == "put_two":
        return f"Put two {goal.klass}s {prep} the {goal.target}."
    raise UnknownFamily(goal.family)


_REQUIRES = {"put": None, "clean_put": "clean", "heat_put": "hot", "cool_put": "cold",
             "examine": "examined", "put_two": None}


def sample_task(family: str, seed: int, horizon: int = 30) -> tuple[Task, WorldSpec, GroundTruthProcedure]:
    """Deterministically generate a task, its initial world, and its ground truth."""
    if family not in FAMILIES:
        raise UnknownFamily(family)
    rng = random.Random(f"{family}:{seed}")
    klass = rng.choice(OBJECT_CLASSES)
    target = None if family == "examine" else rng.choice(TARGET_RECEPTACLES)
    count = 2 if family == "put_two" else 1
    goal = Goal(family=family, klass=klass, count=count, target=target, requires=_REQUIRES[family])

    objects: list[ObjectSpec] = []
    goal_spots = [r for r in PLACEABLE if r != target]
    for k in range(count):
        objects.append(ObjectSpec(name=f"{klass} {k + 1}", klass=klass, location=rng.choice(goal_spots)))
    others = rng.sample([c for c in OBJECT_CLASSES if c != klass], WORLD_SIZE - count)
    for c in others:
        objects.append(ObjectSpec(name=f"{c} 1", klass=c, location=rng.choice(PLACEABLE)))

    open_state = tuple((r, not (rng.random() < 0.85)) for r in RECEPTACLE_NAMES if r in OPENABLE)
    spec = WorldSpec(
        family=family,
        rng_seed=seed,
        agent_room=rng.choice(ROOMS),
        open_state=open_state,
        objects=tuple(objects),
        goal=goal,
    )
    task = Task(
        task_id=f"{family}-{seed}",
        instruction=_instruction(goal),
        env_spec=EnvSpec(env="microworld", family=family, seed=seed, horizon=horizon),
    )
    return task, spec, build_ground_truth(spec)


def build_ground_truth(spec: WorldSpec) -> GroundTruthProcedure:
    goal = spec.goal
    open_now = dict(spec.open_state)
    subgoals: list[SubGoal] = []
    instances = [o for o in spec.objects if o.klass == goal.klass][: goal.count]
    for inst in instances:
        rec = inst.location
        subgoals.append(SubGoal("locate", inst.name, rec, (f"go to {rec}",), ()))
        if rec in OPENABLE and not open_now[rec]:
            subgoals.append(SubGoal("open", None, rec, (f"open {rec}",), (f"at:{rec}", f"closed:{rec}")))
            open_now[rec] = True
        subgoals.append(SubGoal("take", inst.name, rec, (f"take {inst.name}",),
                                (f"at:{rec}", f"visible:{rec}", "hands_free")))
        if goal.requires in ("clean", "hot", "cold"):
            verb = {"clean": "clean", "hot": "heat", "cold": "cool"}[goal.requires]
            station = STATION_FOR[verb]
            subgoals.append(SubGoal(verb, inst.name, station,
                                    (f"go to {station}", f"{verb} {inst.name}"), (f"carrying:{inst.name}",)))
        if goal.requires == "examined":
            station = STATION_FOR["examine"]
            subgoals.append(SubGoal("examine", inst.name, station,
                                    (f"go to {station}", f"examine {inst.name}"), (f"carrying:{inst.name}",)))
        if goal.target is not None:
            actions = [f"go to {goal.target}"]
            if goal.target in OPENABLE and not open_now[goal.target]:
                actions.append(f"open {goal.target}")
                open_now[goal.target] = True
            actions.append(f"put {inst.name} {PREPOSITION[goal.target]} {goal.target}")
            subgoals.append(SubGoal("deliver", inst.name, goal.target, tuple(actions), (f"carrying:{inst.name}",)))
    return GroundTruthProcedure(tuple(subgoals))


# ---------------------------------------------------------------------------
# the stepping engine


@dataclass
class _Obj:
    name: str
    klass: str
    location: str  # receptacle name, or "carried"
    clean: bool = False
    temp: str = "room"
    examined: bool = False


def _listing(names: Sequence[str]) -> str:
    return ", ".join(names)


_ACTION_RES = (
    ("look", re.compile(r"look")),
    ("go", re.compile(r"go to (.+)")),
    ("open", re.compile(r"open (.+)")),
    ("close", re.compile(r"close (.+)")),
    ("take", re.compile(r"take (.+)")),
    ("put", re.compile(r"put (.+?) (?:in|on) (?:the )?(.+)")),
    ("clean", re.compile(r"clean (.+)")),
    ("heat", re.compile(r"heat (.+)")),
    ("cool", re.compile(r"cool (.+)")),
    ("examine", re.compile(r"examine (.+)")),
)


def parse_action(text: str) -> tuple[str, tuple[str, ...]] | None:
    text = text.strip().lower()
    for verb, rx in _ACTION_RES:
        m = rx.fullmatch(text)
        if m:
            return verb, tuple(g.strip() for g in m.groups())
    return None


class MicroWorld:
    """One episode's world. reset() rebuilds the state from its WorldSpec."""

    def __init__(self, spec: WorldSpec, horizon: int = 30):
        self.spec = spec
        self.horizon = horizon
        self.reset_state()

    def reset_state(self) -> None:
        self.open: dict[str, bool] = dict(self.spec.open_state)
        self.objects: dict[str, _Obj] = {
            o.name: _Obj(name=o.name, klass=o.klass, location=o.location) for o in self.spec.objects
        }
        self.room: str = self.spec.agent_room
        self.place: str | None = None
        self.carried: str | None = None
        self.steps_taken = 0
        self.done = False
        self.success = False
        self.last_rejected = False

    # -- rendering ----------------------------------------------------------

    def _contents(self, rec: str) -> list[str]:
        return [o.name for o in self.spec.objects if self.objects[o.name].location == rec]

    def _rec_phrase(self, rec: str) -> str:
        if rec in OPENABLE:
            return f"a {rec} ({'open' if self.open[rec] else 'closed'})"
        return f"a {rec}"

    def _describe_initial(self) -> str:
        parts = [f"You are in the {self.room}.",
                 f"This home has {len(ROOMS)} rooms: {', '.join(ROOMS)}."]
        for room in ROOMS:
            recs = [self._rec_phrase(r) for r in RECEPTACLE_NAMES if ROOM_OF[r] == room]
            parts.append(f"In the {room}: {_listing(recs)}.")
        parts.append("Your hands are empty.")
        return " ".join(parts)

    def _describe_at(self, rec: str) -> str:
        if rec == "desklamp":
            return "The desklamp glows softly."
        if rec in OPENABLE and not self.open[rec]:
            return f"The {rec} is closed."
        contents = self._contents(rec)
        prep = PREPOSITION[rec]
        if not contents:
            return f"There is nothing {prep} the {rec}."
        return f"{prep.capitalize()} the {rec} you see: {_listing(contents)}."

    # -- goal ---------------------------------------------------------------

    def _state_ok(self, obj: _Obj) -> bool:
        req = self.spec.goal.requires
        if req is None:
            return True
        if req == "clean":
            return obj.clean
        if req == "hot":
            return obj.temp == "hot"
        if req == "cold":
            return obj.temp == "cold"
        if req == "examined":
            return obj.examined
        return False

    def goal_met(self) -> bool:
        goal = self.spec.goal
        if goal.family == "examine":
            return any(o.examined for o in self.objects.values() if o.klass == goal.klass)
        placed = [
            o for o in self.objects.values()
            if o.klass == goal.klass and o.location == goal.target and self._state_ok(o)
        ]
        return len(placed) >= goal.count

    # -- stepping -----------------------------------------------------------

    def reset(self) -> str:
        self.reset_state()
        return self._describe_initial()

    def step(self, action: str) -> tuple[str, bool, bool]:
        if self.done:
            return "Nothing happens: the episode is over.", True, self.success
        self.steps_taken += 1
        obs, rejected = self._apply(action)
        self.last_rejected = rejected
        if self.goal_met():
            self.success = True
        if self.success or self.steps_taken >= self.horizon:
            self.done = True
        return obs, self.done, self.success

    def _reject(self, why: str) -> tuple[str, bool]:
        return f"Nothing happens: {why}", True

    def _apply(self, action: str) -> tuple[str, bool]:
        parsed = parse_action(action)
        if parsed is None:
            return self._reject("that makes no sense.")
        verb, args = parsed

        if verb == "look":
            if self.place:
                return f"You are at the {self.place}. {self._describe_at(self.place)}", False
            return f"You are in the {self.room}.", False

        if verb == "go":
            (target,) = args
            if target in RECEPTACLE_NAMES:
                self.place = target
                self.room = ROOM_OF[target]
                return f"You arrive at the {target}. {self._describe_at(target)}", False
            if target in ROOMS:
                self.room = target
                self.place = None
                return f"You walk to the {target}.", False
            return self._reject(f"there is no {target} here.")

        if verb in ("open", "close"):
            (target,) = args
            if target not in RECEPTACLE_NAMES:
                return self._reject(f"there is no {target} here.")
            if self.place != target:
                return self._reject(f"you are not at the {target}.")
            if target not in OPENABLE:
                return self._reject(f"the {target} does not open.")
            if verb == "open":
                if self.open[target]:
                    return self._reject(f"the {target} is already open.")
                self.open[target] = True
                contents = self._contents(target)
                inside = _listing(contents) if contents else "nothing"
                return f"You open the {target}. Inside you see: {inside}.", False
            if not self.open[target]:
                return self._reject(f"the {target} is already closed.")
            self.open[target] = False
            return f"You close the {target}.", False

        if verb == "take":
            (name,) = args
            obj = self.objects.get(name)
            if self.place and self.place in OPENABLE and not self.open[self.place]:
                return self._reject(f"the {self.place} is closed.")
            if obj is None or obj.location != (self.place or ""):
                return self._reject(f"you see no {name} here.")
            if self.carried is not None:
                return self._reject("your hands are full.")
            obj.location = "carried"
            self.carried = name
            return f"You take the {name} from the {self.place}.", False

        if verb == "put":
            name, rec = args
            if self.carried != name:
                return self._reject(f"you are not carrying the {name}.")
            if rec not in RECEPTACLE_NAMES:
                return self._reject(f"there is no {rec} here.")
            if self.place != rec:
                return self._reject(f"you are not at the {rec}.")
            if PREPOSITION[rec] is None:
                return self._reject(f"you can't put things on the {rec}.")
            if rec in OPENABLE and not self.open[rec]:
                return self._reject(f"the {rec} is closed.")
            self.objects[name].location = rec
            self.carried = None
            return f"You put the {name} {PREPOSITION[rec]} the {rec}.", False

        if verb in ("clean", "heat", "cool"):
            (name,) = args
            if self.carried != name:
                return self._reject(f"you are not carrying the {name}.")
            if self.place != STATION_FOR[verb]:
                return self._reject(f"nothing here can {verb} things.")
            obj = self.objects[name]
            if verb == "clean":
                obj.clean = True
                return f"You clean the {name} at the sink. It is now clean.", False
            if verb == "heat":
                obj.temp = "hot"
                return f"You heat the {name} in the microwave. It is now hot.", False
            obj.temp = "cold"
            return f"You cool the {name} in the fridge. It is now cool.", False

        if verb == "examine":
            (name,) = args
            if self.carried != name:
                return self._reject(f"you are not carrying the {name}.")
            if self.place != STATION_FOR["examine"]:
                return self._reject("you need the desklamp to examine things.")
            self.objects[name].examined = True
            return f"You examine the {name} under the desklamp.", False

        return self._reject("that makes no sense.")  # pragma: no cover

    # -- introspection helpers (tests, oracle) -------------------------------

    def check_predicate(self, pred: str) -> bool:
        kind, _, arg = pred.partition(":")
        if kind == "at":
            return self.place == arg
        if kind == "closed":
            return arg in OPENABLE and not self.open[arg]
        if kind == "visible":
            return self.place == arg and (arg not in OPENABLE or self.open[arg])
        if kind == "hands_free":
            return self.carried is None
        if kind == "carrying":
            return self.carried == arg
        raise ValueError(f"unknown predicate {pred!r}")

    def state_digest(self) -> str:
        doc = {
            "room": self.room,
            "place": self.place,
            "carried": self.carried,
            "open": sorted(self.open.items()),
            "objects": sorted(
                (o.name, o.location, o.clean, o.temp, o.examined) for o in self.objects.values()
            ),
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# env adapter shared by in-process and remote environments


@dataclass(frozen=True)
class StepResult:
    observation: str
    done: bool
    success: bool
    rejected: bool


class MicroWorldEnv:
    """In-process env wrapper with the reset/step/close surface episode runners use."""

    def __init__(self, spec: WorldSpec, horizon: int = 30):
        self.world = MicroWorld(spec, horizon=horizon)

    @staticmethod
    def from_task(family: str, seed: int, horizon: int = 30) -> "MicroWorldEnv":
        _, spec, _ = sample_task(family, seed, horizon=horizon)
        return MicroWorldEnv(spec, horizon=horizon)

    def reset(self) -> str:
        return self.world.reset()

    def step(self, action: str) -> StepResult:
        obs, done, success = self.world.step(action)
        return StepResult(observation=obs, done=done, success=success, rejected=self.world.last_rejected)

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# the canonical rule library

WHEN_OPEN = "when:at_closed_container"
WHEN_TAKE = "when:goal_in_reach"
WHEN_CLEAN = "when:needs_clean"
WHEN_HEAT = "when:needs_heat"
WHEN_COOL = "when:needs_cool"
WHEN_EXAMINE = "when:needs_examine"
WHEN_DELIVER = "when:ready_to_deliver"
WHEN_SEARCH = "when:goal_unlocated"

DO_OPEN = "do:open_here"
DO_TAKE = "do:take_goal"
DO_DELIVER = "do:deliver"
DO_SEARCH = "do:search"


@dataclass(frozen=True)
class CanonRule:
    key: str
    text: str
    when: str
    do: str

    @property
    def tags(self) -> frozenset[str]:
        return frozenset({self.when, self.do})


CANONICAL_RULES = (
    CanonRule("open_container",
              "If you are at a closed container you need to look inside or use, open it before doing anything else.",
              WHEN_OPEN, DO_OPEN),
    CanonRule("take_goal",
              "When a goal object is within reach and your hands are free, take it.",
              WHEN_TAKE, DO_TAKE),
    CanonRule("clean",
              "Clean the carried object at the sink before delivering it.",
              WHEN_CLEAN, "do:station:clean:sink"),
    CanonRule("heat",
              "Heat the carried object in the microwave before delivering it.",
              WHEN_HEAT, "do:station:heat:microwave"),
    CanonRule("cool",
              "Cool the carried object in the fridge before delivering it.",
              WHEN_COOL, "do:station:cool:fridge"),
    CanonRule("examine",
              "Carry the object to the desklamp and examine it there.",
              WHEN_EXAMINE, "do:station:examine:desklamp"),
    CanonRule("deliver",
              "Once the carried object meets every requirement in the task, put it in or on the target receptacle.",
              WHEN_DELIVER, DO_DELIVER),
    CanonRule("search",
              "If a goal object is not located yet, sweep the receptacles one by one in a fixed order until you spot one.",
              WHEN_SEARCH, DO_SEARCH),
)

CANON_BY_KEY = {c.key: c for c in CANONICAL_RULES}
CANON_BY_WHEN = {c.when: c for c in CANONICAL_RULES}

SUBGOAL_RULE_KEY = {
    "locate": "search",
    "open": "open_container",
    "take": "take_goal",
    "clean": "clean",
    "heat": "heat",
    "cool": "cool",
    "examine": "examine",
    "deliver": "deliver",
}

FAMILY_RULE_KEY = {"clean_put": "clean", "heat_put": "heat", "cool_put": "cool", "examine": "examine"}

# Wrong-station variants used to seed a known-bad rule into an initial skill.
DEFECT_RULES = {
    "heat_put": ("Heat the carried object at the sink before delivering it.",
                 WHEN_HEAT, "do:station:heat:sink"),
    "clean_put": ("Clean the carried object in the microwave before delivering it.",
                  WHEN_CLEAN, "do:station:clean:microwave"),
    "cool_put": ("Cool the carried object at the cabinet before delivering it.",
                 WHEN_COOL, "do:station:cool:cabinet"),
    "examine": ("Examine the carried object at the shelf.",
                WHEN_EXAMINE, "do:station:examine:shelf"),
}


def when_tag_of(tags: Iterable[str]) -> str | None:
    for t in sorted(tags):
        if t.startswith("when:"):
            return t
    return None


def do_tag_of(tags: Iterable[str]) -> str | None:
    for t in sorted(tags):
        if t.startswith("do:"):
            return t
    return None


def prior_receptacles(tags: Iterable[str]) -> tuple[str, ...]:
    return tuple(sorted(t.split(":", 1)[1] for t in tags if t.startswith("prior:")))


def sweep_order(priors: Sequence[str] = ()) -> tuple[str, ...]:
    priors = [p for p in priors if p in SEARCH_SWEEP]
    return tuple(priors) + tuple(r for r in SEARCH_SWEEP if r not in priors)


def complete_skill_rules() -> list[tuple[str, frozenset[str]]]:
    return [(c.text, c.tags) for c in CANONICAL_RULES]


def seeded_skill_rules(
    missing_families: Sequence[str] = ("cool_put", "examine"),
    defect_family: str | None = "heat_put",
) -> list[tuple[str, frozenset[str]]]:
    """Canonical rules minus the listed families' rules, with one wrong-station defect."""
    drop = {FAMILY_RULE_KEY[f] for f in missing_families}
    rules: list[tuple[str, frozenset[str]]] = []
    for canon in CANONICAL_RULES:
        if canon.key in drop:
            continue
        if defect_family and FAMILY_RULE_KEY.get(defect_family) == canon.key:
            text, when, do = DEFECT_RULES[defect_family]
            rules.append((text, frozenset({when, do})))
        else:
            rules.append((canon.text, canon.tags))
    return rules


# ---------------------------------------------------------------------------
# trajectory analysis against ground truth (used by the reflection oracle)


def needed_instances(spec: WorldSpec) -> tuple[str, ...]:
    goal = spec.goal
    return tuple(o.name for o in spec.objects if o.klass == goal.klass)[: goal.count]


def achieved_subgoal_classes(traj: Trajectory, spec: WorldSpec, gtp: GroundTruthProcedure) -> dict[str, int]:
    """Map each ground-truth sub-goal class realized in the trajectory to an evidence step."""
    goal = spec.goal
    instances = needed_instances(spec)
    classes = gtp.classes()
    relevant_opens = {o.location for o in spec.objects if o.name in instances and o.location in OPENABLE}
    if goal.target in OPENABLE:
        relevant_opens.add(goal.target)
    achieved: dict[str, int] = {}

    def note(kind: str, step_index: int) -> None:
        if kind in classes and kind not in achieved:
            achieved[kind] = step_index

    for step in traj.steps:
        if any(name in step.observation for name in instances):
            note("locate", step.index)
        if step.status.value != "accepted":
            continue
        parsed = parse_action(step.action)
        if parsed is None:
            continue
        verb, args = parsed
        if verb == "open" and args[0] in relevant_opens:
            note("open", step.index)
        elif verb == "take" and args[0] in instances:
            note("take", step.index)
        elif verb in ("clean", "heat", "cool", "examine") and args[0] in instances:
            note(verb, step.index)
        elif verb == "put" and args[0] in instances and args[1] == goal.target:
            note("deliver", step.index)
    return achieved


def search_effort(traj: Trajectory, spec: WorldSpec, priors: Sequence[str] = ()) -> tuple[int, int, str] | None:
    """(realized go-to count, prescribed sweep position, receptacle found) for the first locate.

    Returns None when the goal object never became visible.
    """
    instances = needed_instances(spec)
    locate_step = None
    for step in traj.steps:
        if any(name in step.observation for name in instances):
            locate_step = step.index
            break
    if locate_step is None or locate_step < 2:
        return None
    revealing = traj.steps[locate_step - 2]  # action whose feedback revealed the object
    parsed = parse_action(revealing.action)
    if parsed is None:
        return None
    verb, args = parsed
    if verb == "go" and args[0] in RECEPTACLE_NAMES:
        found_rec = args[0]
    elif verb == "open":
        found_rec = args[0]
    else:
        return None
    realized = sum(
        1
        for step in traj.steps[: locate_step - 1]
        if step.status.value == "accepted"
        and (p := parse_action(step.action)) is not None
        and p[0] == "go"
        and p[1][0] in RECEPTACLE_NAMES
    )
    order = sweep_order(priors)
    if found_rec not in order:
        return None
    nominal = order.index(found_rec) + 1
    return realized, nominal, found_rec
