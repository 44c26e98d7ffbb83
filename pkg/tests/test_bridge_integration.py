"""Engine-side interop with the external env bridge; skipped when the bridge is absent.

The primary suite stays fully green without the bridge package installed.
"""

import sys

import pytest

pytest.importorskip("alfworld_bridge")

from skillloop import world as w
from skillloop.evolution import run_episode
from skillloop.executor import ExecutorConfig, Provider
from skillloop.protocol import ExternalEnv, ProtocolClient, validate_response
from skillloop.skill import new_initial_skill
from skillloop.trajectory import EnvSpec, Task

BRIDGE_CMD = [sys.executable, "-m", "alfworld_bridge", "--backend", "scripted"]


def test_engine_runs_full_episode_through_bridge_subprocess():
    client = ProtocolClient(cmd=BRIDGE_CMD, timeout_s=30)
    try:
        env = ExternalEnv(client, "trial_9", 2, horizon=10)

        class FinishGateway:
            def complete_structured(self, template_id, variables, schema):
                return {"action": "finish"}

        task = Task(
            task_id="trial_9",
            instruction="Complete external task trial_9.",
            env_spec=EnvSpec(env="external", family="trial_9", seed=2, horizon=10),
        )
        skill = new_initial_skill(w.complete_skill_rules())
        config = ExecutorConfig(provider=Provider.REMOTE_MODEL)
        traj = run_episode(env, task, skill, config, "bridge", "bridge-ep", gateway=FinishGateway())
        assert traj.outcome == 1
        assert traj.length == 1
        assert traj.sidecar is None  # remote executor leaves no replay sidecar
    finally:
        client.close()


def test_bridge_rejection_text_maps_to_rejected_status():
    client = ProtocolClient(cmd=BRIDGE_CMD, timeout_s=30)
    try:
        env = ExternalEnv(client, "t", 0)
        env.reset()
        result = env.step("zorble the fridge")
        assert result.rejected is True
    finally:
        client.close()
