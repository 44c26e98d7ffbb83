"""Belief state the rule-based executor rebuilds from an episode history.

The executor is a pure function of (instruction, history); this module turns
the observation/action text back into structured facts: where the agent is,
which receptacles were searched, where objects were last seen, what is being
carried, and which goal requirements are already met. Parsing is tied to the
micro-world's observation templates.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

from . import world as w


@dataclass(frozen=True)
class ParsedGoal:
    family: str
    klass: str
    count: int
    target: str | None
    requires: str | None


_GOAL_RES = (
    (re.compile(r"Put a clean (\w+) (?:in|on) the (\w+)\."), "clean_put", "clean", 1),
    (re.compile(r"Put a hot (\w+) (?:in|on) the (\w+)\."), "heat_put", "hot", 1),
    (re.compile(r"Put a cool (\w+) (?:in|on) the (\w+)\."), "cool_put", "cold", 1),
    (re.compile(r"Put two (\w+)s (?:in|on) the (\w+)\."), "put_two", None, 2),
    (re.compile(r"Put a (\w+) (?:in|on) the (\w+)\."), "put", None, 1),
    (re.compile(r"Examine a (\w+) under the desklamp\."), "examine", "examined", 1),
)


def parse_goal(instruction: str) -> ParsedGoal | None:
    for rx, family, requires, count in _GOAL_RES:
        m = rx.fullmatch(instruction.strip())
        if m:
            groups = m.groups()
            target = groups[1] if len(groups) > 1 else None
            return ParsedGoal(family=family, klass=groups[0], count=count, target=target, requires=requires)
    return None


_SEE_RX = re.compile(r"you see: (.+?)\.(?: |$)")
_ARRIVE_RX = re.compile(r"You arrive at the (\w+)\.")
_AT_RX = re.compile(r"You are at the (\w+)\.")
_WALK_RX = re.compile(r"You walk to the (\w+)\.")
_IN_ROOM_RX = re.compile(r"You are in the (\w+)\.")
_OPEN_RX = re.compile(r"You open the (\w+)\.")
_CLOSE_RX = re.compile(r"You close the (\w+)\.")
_CLOSED_RX = re.compile(r"The (\w+) is closed\.")
_TAKE_RX = re.compile(r"You take the (.+?) from the (\w+)\.")
_PUT_RX = re.compile(r"You put the (.+?) (?:in|on) the (\w+)\.")
_CLEAN_RX = re.compile(r"You clean the (.+?) at")
_HEAT_RX = re.compile(r"You heat the (.+?) in")
_COOL_RX = re.compile(r"You cool the (.+?) in")
_EXAMINE_RX = re.compile(r"You examine the (.+?) under")
_ANNOT_RX = re.compile(r"a (\w+) \((open|closed)\)")
_NOTHING_RX = re.compile(r"There is nothing (?:in|on) the (\w+)\.")
_INSIDE_NOTHING_RX = re.compile(r"Inside you see: nothing\.")


@dataclass
class Belief:
    goal: ParsedGoal | None = None
    room: str | None = None
    place: str | None = None
    carried: str | None = None
    open_state: dict[str, bool] = field(default_factory=dict)
    seen_at: dict[str, str] = field(default_factory=dict)  # object -> receptacle last seen in
    searched: set[str] = field(default_factory=set)
    clean: set[str] = field(default_factory=set)
    hot: set[str] = field(default_factory=set)
    cold: set[str] = field(default_factory=set)
    examined: set[str] = field(default_factory=set)
    delivered: set[str] = field(default_factory=set)

    # ------------------------------------------------------------------

    @staticmethod
    def from_history(instruction: str, history: Sequence[str]) -> "Belief":
        """Rebuild belief from the flat (o1, a1, ..., ot) history."""
        b = Belief(goal=parse_goal(instruction))
        for i, text in enumerate(history):
            if i % 2 == 0:
                b._absorb_observation(text)
        return b

    def _note_contents(self, rec: str, names: list[str]) -> None:
        for obj, loc in list(self.seen_at.items()):
            if loc == rec and obj not in names:
                del self.seen_at[obj]
        for name in names:
            self.seen_at[name] = rec
        self.searched.add(rec)
        self._refresh_delivered()

    def _refresh_delivered(self) -> None:
        if not self.goal or not self.goal.target:
            return
        self.delivered = {
            obj for obj in self.delivered if self.seen_at.get(obj) == self.goal.target
        }

    def _absorb_observation(self, obs: str) -> None:
        if obs.startswith("Nothing happens:"):
            return

        for m in _ANNOT_RX.finditer(obs):
            self.open_state[m.group(1)] = m.group(2) == "open"

        m = _ARRIVE_RX.search(obs) or _AT_RX.search(obs)
        if m:
            self.place = m.group(1)
            self.room = w.ROOM_OF.get(m.group(1), self.room)
        m = _WALK_RX.search(obs)
        if m:
            self.room = m.group(1)
            self.place = None
        m = _IN_ROOM_RX.search(obs)
        if m and m.group(1) in w.ROOMS:
            self.room = m.group(1)

        m = _CLOSED_RX.search(obs)
        if m:
            self.open_state[m.group(1)] = False
        m = _OPEN_RX.search(obs)
        if m:
            self.open_state[m.group(1)] = True
            if _INSIDE_NOTHING_RX.search(obs):
                self._note_contents(m.group(1), [])
        m = _CLOSE_RX.search(obs)
        if m:
            self.open_state[m.group(1)] = False

        m = _NOTHING_RX.search(obs)
        if m:
            self._note_contents(m.group(1), [])
        m = _SEE_RX.search(obs)
        if m and m.group(1) != "nothing":
            rec = self.place
            mo = _OPEN_RX.search(obs)
            if mo:
                rec = mo.group(1)
            names = [n.strip() for n in m.group(1).split(",")]
            # receptacle listings from room/reset descriptions are not contents
            if rec is not None and not any(n.startswith("a ") for n in names):
                self._note_contents(rec, names)

        m = _TAKE_RX.search(obs)
        if m:
            self.carried = m.group(1)
            self.seen_at.pop(m.group(1), None)
            self.delivered.discard(m.group(1))
        m = _PUT_RX.search(obs)
        if m:
            obj, rec = m.group(1), m.group(2)
            self.carried = None
            self.seen_at[obj] = rec
            if self.goal and self.goal.target == rec and self._meets_requirement(obj):
                self.delivered.add(obj)
        m = _CLEAN_RX.search(obs)
        if m:
            self.clean.add(m.group(1))
        m = _HEAT_RX.search(obs)
        if m:
            self.hot.add(m.group(1))
            self.cold.discard(m.group(1))
        m = _COOL_RX.search(obs)
        if m:
            self.cold.add(m.group(1))
            self.hot.discard(m.group(1))
        m = _EXAMINE_RX.search(obs)
        if m:
            self.examined.add(m.group(1))

    # -- goal-level queries --------------------------------------------------

    def _is_goal_instance(self, name: str) -> bool:
        return self.goal is not None and name.startswith(self.goal.klass + " ")

    def _meets_requirement(self, obj: str) -> bool:
        req = self.goal.requires if self.goal else None
        if req is None:
            return True
        return {
            "clean": obj in self.clean,
            "hot": obj in self.hot,
            "cold": obj in self.cold,
            "examined": obj in self.examined,
        }[req]

    def needs_more(self) -> bool:
        return self.goal is not None and len(self.delivered) < self.goal.count

    def holding_goal(self) -> str | None:
        if self.carried and self._is_goal_instance(self.carried) and self.carried not in self.delivered:
            return self.carried
        return None

    def known_candidates(self) -> list[tuple[str, str]]:
        """(object, receptacle) pairs for undelivered goal instances with a known spot."""
        out = []
        for obj, rec in self.seen_at.items():
            if self._is_goal_instance(obj) and obj not in self.delivered:
                out.append((obj, rec))
        out.sort()
        return out

    def visible_candidate_here(self) -> str | None:
        if self.place is None:
            return None
        if self.place in w.OPENABLE and not self.open_state.get(self.place, False):
            return None
        for obj, rec in self.known_candidates():
            if rec == self.place:
                return obj
        return None

    def unsearched(self, order: Sequence[str]) -> list[str]:
        return [r for r in order if r not in self.searched]
