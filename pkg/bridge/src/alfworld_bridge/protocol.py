"""Wire protocol contract the bridge speaks, mirrored from the engine's documentation.

One JSON object per line, UTF-8, ``"proto": 1`` in every message.
Requests: {op: "reset", task_id, seed} / {op: "step", action} / {op: "close"}.
Responses: {observation} on reset; {observation, done, success, rejected} on
step; {ack: true} on close; {error: {code, message}} on any failure. Unknown
fields must be ignored by both sides.
"""

from __future__ import annotations

PROTO_VERSION = 1

ERROR_MALFORMED = "malformed"
ERROR_PROTOCOL = "protocol_violation"
ERROR_ENV_INIT = "env_init"
ERROR_ENV = "env_error"


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
    for key in ("done", "success", "rejected"):
        if key in obj and not isinstance(obj[key], bool):
            errors.append(f"{key} must be a boolean")
    return errors
