"""Episode records: tasks, steps, finalized trajectories, and their line-delimited log format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Sequence

TRAJ_FORMAT = "traj/1"


class TrajectoryError(Exception):
    pass


class IndexOutOfRange(TrajectoryError, IndexError):
    pass


class MalformedRecord(TrajectoryError):
    pass


class TruncatedStream(TrajectoryError):
    pass


class ActionStatus(str, Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected_by_env"


@dataclass(frozen=True)
class EnvSpec:
    """Reference to the environment instance a task runs in."""

    env: str  # "microworld" or "external"
    family: str
    seed: int
    horizon: int = 30


@dataclass(frozen=True)
class Task:
    task_id: str
    instruction: str
    env_spec: EnvSpec

    def __post_init__(self):
        if not self.instruction.strip():
            raise ValueError("task instruction must be non-empty")


@dataclass(frozen=True)
class Step:
    index: int  # 1-based
    observation: str
    action: str
    status: ActionStatus


@dataclass(frozen=True)
class StepTrace:
    """Executor-side sidecar for one step: which rule applied, whether a lapse fired."""

    applied_rule_ids: tuple[str, ...] = ()
    lapse_flag: bool = False


@dataclass(frozen=True)
class SeedRecord:
    """Everything needed to re-execute the episode deterministically."""

    env_seed: int
    executor_seed: str
    episode_index: int = 0
    executor_config: dict | None = None


@dataclass(frozen=True)
class Trajectory:
    traj_id: str
    task: Task
    steps: tuple[Step, ...]
    outcome: int  # r in {0, 1}
    skill_version_used: int
    seed_record: SeedRecord
    sidecar: tuple[StepTrace, ...] | None = None

    @property
    def length(self) -> int:
        return len(self.steps)


class TrajectoryBuilder:
    """Mutable accumulator for an episode in progress; finalize() freezes it."""

    def __init__(self, traj_id: str, task: Task, skill_version_used: int, seed_record: SeedRecord,
                 record_sidecar: bool = True):
        self.traj_id = traj_id
        self.task = task
        self.skill_version_used = skill_version_used
        self.seed_record = seed_record
        self.steps: list[Step] = []
        self.traces: list[StepTrace] | None = [] if record_sidecar else None

    def add_step(self, observation: str, action: str, status: ActionStatus,
                 trace: StepTrace | None = None) -> None:
        self.steps.append(Step(index=len(self.steps) + 1, observation=observation, action=action, status=status))
        if self.traces is not None:
            self.traces.append(trace or StepTrace())

    def finalize(self, outcome: int) -> Trajectory:
        if outcome not in (0, 1):
            raise ValueError("outcome must be 0 or 1")
        if not self.steps:
            raise ValueError("cannot finalize an empty trajectory")
        horizon = self.task.env_spec.horizon
        if len(self.steps) > horizon:
            raise ValueError(f"trajectory length {len(self.steps)} exceeds horizon {horizon}")
        return Trajectory(
            traj_id=self.traj_id,
            task=self.task,
            steps=tuple(self.steps),
            outcome=outcome,
            skill_version_used=self.skill_version_used,
            seed_record=self.seed_record,
            sidecar=tuple(self.traces) if self.traces is not None else None,
        )


def history_at(traj: Trajectory | Sequence[Step], t: int) -> tuple[str, ...]:
    """Within-episode history up to and including observation t: (o1, a1, ..., ot)."""
    steps = traj.steps if isinstance(traj, Trajectory) else tuple(traj)
    if not 1 <= t <= len(steps):
        raise IndexOutOfRange(f"t={t} outside [1, {len(steps)}]")
    flat: list[str] = []
    for step in steps[: t - 1]:
        flat.append(step.observation)
        flat.append(step.action)
    flat.append(steps[t - 1].observation)
    return tuple(flat)


def _task_to_doc(task: Task) -> dict:
    return {
        "task_id": task.task_id,
        "instruction": task.instruction,
        "env_spec": {
            "env": task.env_spec.env,
            "family": task.env_spec.family,
            "seed": task.env_spec.seed,
            "horizon": task.env_spec.horizon,
        },
    }


def _task_from_doc(doc: dict) -> Task:
    spec = doc["env_spec"]
    return Task(
        task_id=doc["task_id"],
        instruction=doc["instruction"],
        env_spec=EnvSpec(env=spec["env"], family=spec["family"], seed=spec["seed"], horizon=spec["horizon"]),
    )


def serialize(traj: Trajectory) -> Iterator[str]:
    """Yield the trajectory as line-delimited JSON records: header, steps, footer."""
    yield json.dumps(
        {
            "kind": "header",
            "format": TRAJ_FORMAT,
            "traj_id": traj.traj_id,
            "task": _task_to_doc(traj.task),
            "skill_version_used": traj.skill_version_used,
            "seed_record": {
                "env_seed": traj.seed_record.env_seed,
                "executor_seed": traj.seed_record.executor_seed,
                "episode_index": traj.seed_record.episode_index,
                "executor_config": traj.seed_record.executor_config,
            },
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    for step in traj.steps:
        yield json.dumps(
            {
                "kind": "step",
                "index": step.index,
                "observation": step.observation,
                "action": step.action,
                "status": step.status.value,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
    sidecar = None
    if traj.sidecar is not None:
        sidecar = [{"applied_rule_ids": list(tr.applied_rule_ids), "lapse_flag": tr.lapse_flag} for tr in traj.sidecar]
    yield json.dumps(
        {"kind": "footer", "outcome": traj.outcome, "steps": traj.length, "sidecar": sidecar},
        sort_keys=True,
        ensure_ascii=False,
    )


def deserialize(lines: Iterable[str]) -> Trajectory:
    header = None
    steps: list[Step] = []
    footer = None
    for raw in lines:
        raw = raw.strip()
        if not raw:
            continue
        if footer is not None:
            raise MalformedRecord("records found after footer")
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"unparseable record: {exc}") from exc
        kind = rec.get("kind") if isinstance(rec, dict) else None
        if header is None:
            if kind != "header":
                raise MalformedRecord(f"expected header record first, got {kind!r}")
            if rec.get("format") != TRAJ_FORMAT:
                raise MalformedRecord(f"unknown trajectory format: {rec.get('format')}")
            header = rec
        elif kind == "step":
            try:
                step = Step(
                    index=rec["index"],
                    observation=rec["observation"],
                    action=rec["action"],
                    status=ActionStatus(rec["status"]),
                )
            except (KeyError, ValueError) as exc:
                raise MalformedRecord(f"bad step record: {exc}") from exc
            if step.index != len(steps) + 1:
                raise MalformedRecord(f"step index {step.index} out of order")
            steps.append(step)
        elif kind == "footer":
            footer = rec
        else:
            raise MalformedRecord(f"unknown record kind: {kind!r}")
    if header is None:
        raise TruncatedStream("empty stream")
    if footer is None:
        raise TruncatedStream("missing footer record")
    if footer.get("steps") != len(steps):
        raise MalformedRecord(f"footer claims {footer.get('steps')} steps, stream has {len(steps)}")
    sidecar = None
    if footer.get("sidecar") is not None:
        sidecar = tuple(
            StepTrace(applied_rule_ids=tuple(tr["applied_rule_ids"]), lapse_flag=tr["lapse_flag"])
            for tr in footer["sidecar"]
        )
        if len(sidecar) != len(steps):
            raise MalformedRecord("sidecar length does not match step count")
    seed = header["seed_record"]
    try:
        return Trajectory(
            traj_id=header["traj_id"],
            task=_task_from_doc(header["task"]),
            steps=tuple(steps),
            outcome=footer["outcome"],
            skill_version_used=header["skill_version_used"],
            seed_record=SeedRecord(
                env_seed=seed["env_seed"],
                executor_seed=seed["executor_seed"],
                episode_index=seed.get("episode_index", 0),
                executor_config=seed.get("executor_config"),
            ),
            sidecar=sidecar,
        )
    except KeyError as exc:
        raise MalformedRecord(f"missing field: {exc}") from exc


def write_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in serialize(traj):
            fh.write(line + "\n")


def read_trajectory(path) -> Trajectory:
    with open(path, encoding="utf-8") as fh:
        return deserialize(fh)
