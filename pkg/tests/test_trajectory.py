import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillloop.trajectory import (
    ActionStatus,
    EnvSpec,
    IndexOutOfRange,
    MalformedRecord,
    SeedRecord,
    Step,
    StepTrace,
    Task,
    Trajectory,
    TrajectoryBuilder,
    TruncatedStream,
    deserialize,
    history_at,
    serialize,
)


def make_task(horizon=30):
    return Task(
        task_id="put-1",
        instruction="Put a mug on the shelf.",
        env_spec=EnvSpec(env="microworld", family="put", seed=1, horizon=horizon),
    )


def build_traj(n_steps, outcome=1, sidecar=True):
    builder = TrajectoryBuilder(
        "traj-1", make_task(), 0, SeedRecord(env_seed=1, executor_seed="s", episode_index=3),
        record_sidecar=sidecar,
    )
    for t in range(n_steps):
        builder.add_step(f"obs {t + 1}", f"act {t + 1}", ActionStatus.ACCEPTED,
                         StepTrace(("r0001",), t % 2 == 0) if sidecar else None)
    return builder.finalize(outcome)


def test_task_requires_instruction():
    with pytest.raises(ValueError):
        Task(task_id="x", instruction="  ", env_spec=EnvSpec("microworld", "put", 0))


def test_builder_enforces_outcome_and_length():
    builder = TrajectoryBuilder("t", make_task(horizon=2), 0, SeedRecord(1, "s"))
    with pytest.raises(ValueError):
        builder.finalize(1)  # no steps yet
    builder.add_step("o", "a", ActionStatus.ACCEPTED)
    with pytest.raises(ValueError):
        builder.finalize(2)
    builder.add_step("o", "a", ActionStatus.ACCEPTED)
    builder.add_step("o", "a", ActionStatus.ACCEPTED)
    with pytest.raises(ValueError):
        builder.finalize(0)  # exceeds horizon


def test_history_boundaries():
    traj = build_traj(4)
    assert history_at(traj, 1) == ("obs 1",)
    full = history_at(traj, 4)
    assert len(full) == 7
    assert full[-1] == "obs 4"
    assert full.count("act 4") == 0  # a_T excluded
    with pytest.raises(IndexOutOfRange):
        history_at(traj, 0)
    with pytest.raises(IndexOutOfRange):
        history_at(traj, 5)


@given(st.integers(min_value=1, max_value=12), st.data())
@settings(max_examples=50)
def test_history_matches_flat_slice_oracle(n, data):
    traj = build_traj(n)
    t = data.draw(st.integers(min_value=1, max_value=n))
    # independent oracle: build the flat (o, a) sequence and slice it
    flat = []
    for step in traj.steps:
        flat.extend([step.observation, step.action])
    assert history_at(traj, t) == tuple(flat[: 2 * t - 1])


def test_one_step_trajectory_serializes_to_three_records():
    lines = list(serialize(build_traj(1)))
    assert len(lines) == 3
    assert '"header"' in lines[0]
    assert '"footer"' in lines[2]


@given(
    st.integers(min_value=1, max_value=10),
    st.integers(min_value=0, max_value=1),
    st.booleans(),
)
@settings(max_examples=50)
def test_serialize_round_trip(n, outcome, sidecar):
    traj = build_traj(n, outcome=outcome, sidecar=sidecar)
    assert deserialize(serialize(traj)) == traj


def test_missing_footer_is_truncated_stream():
    lines = list(serialize(build_traj(2)))
    with pytest.raises(TruncatedStream):
        deserialize(lines[:-1])


def test_malformed_records():
    lines = list(serialize(build_traj(1)))
    with pytest.raises(MalformedRecord):
        deserialize(["not json"] + lines)
    with pytest.raises(MalformedRecord):
        deserialize(lines[1:])  # step record before header
    twisted = [lines[0], lines[1].replace('"index": 1', '"index": 7'), lines[2]]
    with pytest.raises(MalformedRecord):
        deserialize(twisted)


def test_unicode_round_trip(tmp_path):
    from skillloop.trajectory import read_trajectory, write_trajectory

    builder = TrajectoryBuilder("t", make_task(), 2, SeedRecord(1, "s", executor_config={"k": 1}))
    builder.add_step("observación ñ", "acción", ActionStatus.REJECTED, StepTrace())
    traj = builder.finalize(0)
    path = tmp_path / "t.jsonl"
    write_trajectory(traj, path)
    assert read_trajectory(path) == traj
