"""Bridge session: protocol state machine translating reset/step/close onto a backend.

At most one episode is active per session; step is only legal while one is.
The bridge is stateless across episodes beyond this session object; which
task to run always arrives from the engine side in the reset request.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

from .protocol import (
    ERROR_ENV,
    ERROR_ENV_INIT,
    ERROR_MALFORMED,
    ERROR_PROTOCOL,
    PROTO_VERSION,
    validate_request,
)

logger = logging.getLogger(__name__)


class EnvInitError(Exception):
    pass


# ALFWorld's native rejection text for infeasible or unparseable commands.
REJECTION_TEXT = "nothing happens"


@dataclass
class BridgeSession:
    state: str = "idle"  # idle | in_episode
    task_id: str = ""
    step_count: int = 0

    def begin(self, task_id: str) -> None:
        self.state = "in_episode"
        self.task_id = task_id
        self.step_count = 0

    def finish(self) -> None:
        self.state = "idle"
        self.task_id = ""
        self.step_count = 0


def serve(rfile, wfile, backend_factory, max_steps: int = 50) -> None:
    """Serve one connection: translate protocol requests into backend calls.

    ``backend_factory`` is called once, lazily, at the first reset; a failure
    is reported as an env_init protocol error and the bridge exits.
    """
    session = BridgeSession()
    backend = None

    def reply(obj: dict) -> None:
        obj["proto"] = PROTO_VERSION
        wfile.write((json.dumps(obj, ensure_ascii=False) + "\n").encode("utf-8"))
        wfile.flush()

    def error(code: str, message: str) -> None:
        reply({"error": {"code": code, "message": message}})

    for raw in iter(rfile.readline, b""):
        raw = raw.strip()
        if not raw:
            continue
        try:
            request = json.loads(raw.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            error(ERROR_MALFORMED, f"unparseable request: {exc}")
            continue
        problems = validate_request(request)
        if problems:
            code = ERROR_PROTOCOL if "unknown op" in "; ".join(problems) else ERROR_MALFORMED
            error(code, "; ".join(problems))
            continue
        op = request["op"]
        if op == "reset":
            if session.state == "in_episode":
                error(ERROR_PROTOCOL, "reset while an episode is active")
                continue
            if backend is None:
                try:
                    backend = backend_factory()
                except Exception as exc:
                    error(ERROR_ENV_INIT, f"environment failed to initialize: {exc}")
                    return
            try:
                observation = backend.reset(request["task_id"], request["seed"])
            except Exception as exc:
                error(ERROR_ENV, str(exc))
                continue
            session.begin(request["task_id"])
            reply({"observation": observation})
        elif op == "step":
            if session.state != "in_episode":
                error(ERROR_PROTOCOL, "step before reset")
                continue
            # unparseable actions are forwarded verbatim; the env rejects them natively
            observation, done, success = backend.step(request["action"])
            session.step_count += 1
            if session.step_count >= max_steps:
                done = True
            if done:
                session.finish()
            reply(
                {
                    "observation": observation,
                    "done": done,
                    "success": success,
                    "rejected": observation.strip().lower().startswith(REJECTION_TEXT),
                }
            )
        elif op == "close":
            reply({"ack": True})
            return


class ScriptedBackend:
    """Deterministic stand-in backend for conformance tests and offline demos.

    A three-step toy episode: any action echoes back; the action "finish"
    ends the episode successfully; unknown verbs are rejected the way the
    real environment rejects them.
    """

    VERBS = ("go", "take", "put", "open", "look", "finish")

    def __init__(self):
        self.task_id = ""
        self.steps = 0

    def reset(self, task_id: str, seed: int) -> str:
        self.task_id = task_id
        self.steps = 0
        return f"You are in a scripted room for task {task_id} (seed {seed}). Type finish to succeed."

    def step(self, action: str):
        self.steps += 1
        verb = action.split(" ", 1)[0] if action else ""
        if verb not in self.VERBS:
            return "Nothing happens.", False, False
        if verb == "finish":
            return "You finish the task.", True, True
        return f"You {action}.", False, False


class AlfworldBackend:
    """Adapter over the installed ALFWorld benchmark (TextWorld engine).

    Task selection comes from the engine: a reset's task_id is matched as a
    substring of the game file path; "next" (or empty) just takes the next
    game in the split's rotation. The goal-satisfaction flag ALFWorld reports
    maps onto the protocol's success field.
    """

    def __init__(self, split: str = "eval_out_of_distribution", config_path: str | None = None):
        try:
            import os

            import yaml
            import alfworld.agents.environment as environment
        except ImportError as exc:
            raise EnvInitError(f"ALFWorld runtime not importable: {exc}") from exc
        config_path = config_path or os.environ.get("ALFWORLD_CONFIG")
        if not config_path:
            raise EnvInitError("set ALFWORLD_CONFIG or pass --config with the benchmark YAML")
        try:
            with open(config_path) as fh:
                config = yaml.safe_load(fh)
            env_class = getattr(environment, config["env"]["type"])
            self._env = env_class(config, train_eval=split).init_env(batch_size=1)
        except Exception as exc:
            raise EnvInitError(f"ALFWorld environment failed to start: {exc}") from exc
        self._num_games = getattr(self._env, "num_games", None)
        self._gamefile = ""

    def _reset_once(self) -> str:
        obs, infos = self._env.reset()
        self._gamefile = (infos.get("extra.gamefile") or [""])[0]
        return obs[0]

    def reset(self, task_id: str, seed: int) -> str:
        observation = self._reset_once()
        if task_id in ("", "next") or task_id in self._gamefile:
            return observation
        # cycle at most one full pass looking for the requested game
        budget = self._num_games or 1
        for _ in range(budget):
            observation = self._reset_once()
            if task_id in self._gamefile:
                return observation
        raise RuntimeError(f"no game matching {task_id!r} in this split")

    def step(self, action: str):
        obs, _scores, dones, infos = self._env.step([action])
        won = infos.get("won", [False])
        return obs[0], bool(dones[0]), bool(won[0])
