"""JSON-lines wire protocol for environments: reset/step/close over stdio or TCP.

One JSON object per line, UTF-8, every message carrying ``"proto": 1``.
Requests: {op: "reset", task_id, seed} -> {observation}; {op: "step", action}
-> {observation, done, success}; {op: "close"} -> {ack}. One request in
flight at a time; unknown fields are ignored. The micro-world served over
this protocol must be indistinguishable from stepping it in process, and the
same framing lets external environments attach as subprocesses.
"""

from __future__ import annotations

import json
import os
import select
import socket
import subprocess
import sys
from typing import Callable

from .world import MicroWorldEnv, StepResult, UnknownFamily

PROTO_VERSION = 1


class ProtocolError(Exception):
    pass


class ProtocolViolation(ProtocolError):
    pass


class PeerClosed(ProtocolError):
    pass


class ProtocolTimeout(ProtocolError):
    pass


class RemoteEnvError(ProtocolError):
    pass


# ---------------------------------------------------------------------------
# message schema validation (shared by tests, the server, and external bridges)


def validate_request(obj) -> list[str]:
    errors: list[str] = []
    if not isinstance(obj, dict):
        return ["request is not an object"]
    if obj.get("proto") != PROTO_VERSION:
        errors.append(f"proto must be {PROTO_VERSION}")
    op = obj.get("op")
    if op == "reset":
        if not isinstance(obj.get("task_id"), str):
            errors.append("reset.task_id must be a string")
        if not isinstance(obj.get("seed"), int) or isinstance(obj.get("seed"), bool):
            errors.append("reset.seed must be an integer")
    elif op == "step":
        if not isinstance(obj.get("action"), str):
            errors.append("step.action must be a string")
    elif op == "close":
        pass
    else:
        errors.append(f"unknown op {op!r}")
    return errors


def validate_response(obj) -> list[str]:
    errors: list[str] = []
    if not isinstance(obj, dict):
        return ["response is not an object"]
    if obj.get("proto") != PROTO_VERSION:
        errors.append(f"proto must be {PROTO_VERSION}")
    if "error" in obj:
        err = obj["error"]
        if not isinstance(err, dict) or not isinstance(err.get("code"), str):
            errors.append("error.code must be a string")
        return errors
    if "ack" in obj:
        if obj["ack"] is not True:
            errors.append("ack must be true")
        return errors
    if not isinstance(obj.get("observation"), str):
        errors.append("observation must be a string")
    if "done" in obj and not isinstance(obj["done"], bool):
        errors.append("done must be a boolean")
    if "success" in obj and not isinstance(obj["success"], bool):
        errors.append("success must be a boolean")
    if "rejected" in obj and not isinstance(obj["rejected"], bool):
        errors.append("rejected must be a boolean")
    return errors


# ---------------------------------------------------------------------------
# server


def microworld_env_factory(task_id: str, seed: int, horizon: int = 30) -> MicroWorldEnv:
    return MicroWorldEnv.from_task(task_id, seed, horizon=horizon)


class EnvProtocolServer:
    """Serves one environment per connection; sequential episodes, one at a time."""

    def __init__(self, env_factory: Callable[[str, int, int], object] = microworld_env_factory,
                 default_horizon: int = 30):
        self.env_factory = env_factory
        self.default_horizon = default_horizon

    def serve(self, rfile, wfile) -> None:
        env = None
        in_episode = False

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
                error("malformed", f"unparseable request: {exc}")
                continue
            problems = validate_request(request)
            if problems:
                code = "protocol_violation" if "unknown op" in "; ".join(problems) else "malformed"
                error(code, "; ".join(problems))
                continue
            op = request["op"]
            if op == "reset":
                if in_episode:
                    error("protocol_violation", "reset while an episode is active")
                    continue
                try:
                    env = self.env_factory(
                        request["task_id"], request["seed"], request.get("horizon", self.default_horizon)
                    )
                    observation = env.reset()
                except UnknownFamily as exc:
                    error("env_error", f"unknown task family: {exc}")
                    continue
                in_episode = True
                reply({"observation": observation})
            elif op == "step":
                if not in_episode or env is None:
                    error("protocol_violation", "step before reset")
                    continue
                result: StepResult = env.step(request["action"])
                if result.done:
                    in_episode = False
                reply(
                    {
                        "observation": result.observation,
                        "done": result.done,
                        "success": result.success,
                        "rejected": result.rejected,
                    }
                )
            elif op == "close":
                reply({"ack": True})
                return


def serve_stdio(env_factory: Callable = microworld_env_factory, default_horizon: int = 30) -> None:
    server = EnvProtocolServer(env_factory, default_horizon)
    server.serve(sys.stdin.buffer, sys.stdout.buffer)


def serve_tcp(host: str, port: int, env_factory: Callable = microworld_env_factory,
              default_horizon: int = 30, max_connections: int | None = None) -> None:
    server = EnvProtocolServer(env_factory, default_horizon)
    with socket.create_server((host, port)) as listener:
        served = 0
        while max_connections is None or served < max_connections:
            conn, _ = listener.accept()
            with conn:
                rfile = conn.makefile("rb")
                wfile = conn.makefile("wb")
                server.serve(rfile, wfile)
            served += 1


# ---------------------------------------------------------------------------
# client


class _PipeLineReader:
    """Buffered line reader over a raw fd with a read timeout."""

    def __init__(self, fd: int, timeout_s: float):
        self.fd = fd
        self.timeout_s = timeout_s
        self.buffer = b""

    def readline(self) -> bytes:
        while b"\n" not in self.buffer:
            ready, _, _ = select.select([self.fd], [], [], self.timeout_s)
            if not ready:
                raise ProtocolTimeout(f"no response within {self.timeout_s}s")
            chunk = os.read(self.fd, 65536)
            if not chunk:
                raise PeerClosed("peer closed the stream")
            self.buffer += chunk
        line, self.buffer = self.buffer.split(b"\n", 1)
        return line


class ProtocolClient:
    """Engine-side endpoint: spawns or connects to a peer speaking the protocol."""

    def __init__(self, *, cmd: list[str] | None = None, address: tuple[str, int] | None = None,
                 timeout_s: float = 30.0):
        self.timeout_s = timeout_s
        self.proc = None
        self.sock = None
        if cmd is not None:
            self.proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
            self._reader = _PipeLineReader(self.proc.stdout.fileno(), timeout_s)
        elif address is not None:
            self.sock = socket.create_connection(address, timeout=timeout_s)
            self._reader = _PipeLineReader(self.sock.fileno(), timeout_s)
        else:
            raise ValueError("need either cmd or address")

    def _send(self, obj: dict) -> None:
        obj["proto"] = PROTO_VERSION
        data = (json.dumps(obj, ensure_ascii=False) + "\n").encode("utf-8")
        try:
            if self.proc is not None:
                self.proc.stdin.write(data)
                self.proc.stdin.flush()
            else:
                self.sock.sendall(data)
        except (BrokenPipeError, OSError) as exc:
            raise PeerClosed(str(exc)) from exc

    def request(self, obj: dict) -> dict:
        self._send(obj)
        line = self._reader.readline()
        try:
            response = json.loads(line.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ProtocolError(f"unparseable response: {exc}") from exc
        if "error" in response:
            code = response["error"].get("code", "")
            message = response["error"].get("message", "")
            if code == "protocol_violation":
                raise ProtocolViolation(message)
            raise RemoteEnvError(f"{code}: {message}")
        return response

    def close(self) -> None:
        try:
            self._send({"op": "close"})
            self._reader.readline()
        except ProtocolError:
            pass
        finally:
            if self.proc is not None:
                self.proc.stdin.close()
                self.proc.wait(timeout=10)
            if self.sock is not None:
                self.sock.close()


class ExternalEnv:
    """Env adapter over a ProtocolClient, presenting the in-process reset/step surface."""

    def __init__(self, client: ProtocolClient, task_id: str, seed: int, horizon: int = 30):
        self.client = client
        self.task_id = task_id
        self.seed = seed
        self.horizon = horizon

    def reset(self) -> str:
        response = self.client.request(
            {"op": "reset", "task_id": self.task_id, "seed": self.seed, "horizon": self.horizon}
        )
        return response["observation"]

    def step(self, action: str) -> StepResult:
        response = self.client.request({"op": "step", "action": action})
        return StepResult(
            observation=response["observation"],
            done=bool(response.get("done", False)),
            success=bool(response.get("success", False)),
            rejected=bool(response.get("rejected", False)),
        )

    def close(self) -> None:
        pass  # the client owns the connection; many episodes share it
