"""Single boundary to remote models: templated prompts, schema-checked output, retries, audit.

Every remote call site (executor actions, reflection, consolidation, body
revision) goes through ``Gateway.complete_structured``. Responses are parsed
and validated against a declared schema; failures trigger a retry with a
corrective instruction appended, up to the retry budget. Every attempt is
written to the audit sink, credentials never are.
"""

from __future__ import annotations

import json
import os
import string
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from pathlib import Path


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    pass


class GatewayTimeout(GatewayError):
    pass


class ExhaustedRetries(GatewayError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class TemplateError(GatewayError):
    pass


@dataclass(frozen=True)
class GatewayConfig:
    endpoint: str = ""
    model: str = ""
    timeout_s: float = 60.0
    retry_budget: int = 3
    max_output_tokens: int = 1024
    temperature: float = 0.0
    api_key_env: str = "MODEL_API_KEY"
    max_in_flight: int = 4

    def __post_init__(self):
        if self.retry_budget < 0:
            raise ValueError("retry budget must be >= 0")


# ---------------------------------------------------------------------------
# response schema validation (deliberately small: objects, arrays, scalars, enums)


def validate_value(schema: dict, value, path: str = "$") -> list[str]:
    errors: list[str] = []
    stype = schema.get("type")
    if value is None:
        if schema.get("nullable"):
            return []
        return [f"{path}: null not allowed"]
    if stype == "object":
        if not isinstance(value, dict):
            return [f"{path}: expected object, got {type(value).__name__}"]
        for key in schema.get("required", []):
            if key not in value:
                errors.append(f"{path}.{key}: missing required field")
        for key, sub in schema.get("fields", {}).items():
            if key in value:
                errors.extend(validate_value(sub, value[key], f"{path}.{key}"))
    elif stype == "array":
        if not isinstance(value, list):
            return [f"{path}: expected array, got {type(value).__name__}"]
        item_schema = schema.get("items")
        if item_schema:
            for i, item in enumerate(value):
                errors.extend(validate_value(item_schema, item, f"{path}[{i}]"))
    elif stype == "string":
        if not isinstance(value, str):
            return [f"{path}: expected string, got {type(value).__name__}"]
        enum = schema.get("enum")
        if enum and value not in enum:
            errors.append(f"{path}: {value!r} not in {enum}")
    elif stype == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            return [f"{path}: expected integer, got {type(value).__name__}"]
    elif stype == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return [f"{path}: expected number, got {type(value).__name__}"]
    elif stype == "boolean":
        if not isinstance(value, bool):
            return [f"{path}: expected boolean, got {type(value).__name__}"]
    else:
        errors.append(f"{path}: unknown schema type {stype!r}")
    return errors


def extract_json(text: str):
    """Pull the first JSON object out of a model response; raises ValueError."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    start = text.find("{")
    end = text.rfind("}")
    if start == -1 or end <= start:
        raise ValueError("no JSON object in response")
    return json.loads(text[start : end + 1])


# ---------------------------------------------------------------------------
# templates: versioned text assets with $slot syntax


def load_template(template_id: str) -> str:
    name = template_id.replace("/", "_") + ".txt"
    try:
        return resources.files("skillloop.templates").joinpath(name).read_text("utf-8")
    except (FileNotFoundError, ModuleNotFoundError) as exc:
        raise TemplateError(f"unknown template {template_id!r}") from exc


def render_template(template_id: str, variables: dict[str, str]) -> str:
    tpl = string.Template(load_template(template_id))
    try:
        return tpl.substitute(variables)
    except KeyError as exc:
        raise TemplateError(f"template {template_id!r} missing variable {exc}") from exc


# ---------------------------------------------------------------------------
# transports


class HttpTransport:
    """POSTs a chat-style JSON body to one HTTP endpoint; credentials come from the env."""

    def __init__(self, config: GatewayConfig):
        self.config = config

    def send(self, payload: dict, timeout_s: float) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        request = urllib.request.Request(
            self.config.endpoint,
            data=json.dumps(payload).encode("utf-8"),
            headers=headers,
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=timeout_s) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except TimeoutError as exc:
            raise GatewayTimeout(str(exc)) from exc
        except (urllib.error.URLError, urllib.error.HTTPError, OSError, ValueError) as exc:
            raise TransportError(str(exc)) from exc
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unrecognized endpoint response shape: {exc}") from exc


class AuditSink:
    """Line-delimited audit log; writes are serialized across threads."""

    def __init__(self, path: Path | str | None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self.entries: list[dict] = []

    def record(self, entry: dict) -> None:
        with self._lock:
            self.entries.append(entry)
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")


CORRECTIVE_SUFFIX = (
    "\n\nYour previous reply was not valid: {problems}. "
    "Respond again with a single JSON object matching the required schema and nothing else."
)


class Gateway:
    """Budgeted, audited structured-output calls against one endpoint."""

    def __init__(self, config: GatewayConfig, transport=None, audit: AuditSink | None = None):
        self.config = config
        self.transport = transport or HttpTransport(config)
        self.audit = audit or AuditSink(None)
        self._in_flight = threading.Semaphore(config.max_in_flight)

    def complete_structured(self, template_id: str, variables: dict[str, str], response_schema: dict):
        base_prompt = render_template(template_id, variables)
        prompt = base_prompt
        attempts = 0
        last_problems = ""
        while attempts <= self.config.retry_budget:
            attempts += 1
            payload = {
                "model": self.config.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": self.config.temperature,
                "max_tokens": self.config.max_output_tokens,
            }
            try:
                with self._in_flight:
                    raw = self.transport.send(payload, self.config.timeout_s)
            except GatewayError as exc:
                self.audit.record(
                    {"template": template_id, "attempt": attempts, "prompt": prompt,
                     "raw_response": None, "verdict": f"transport error: {exc}"}
                )
                raise
            problems: list[str] = []
            value = None
            try:
                value = extract_json(raw)
            except ValueError as exc:
                problems = [str(exc)]
            if value is not None:
                problems = validate_value(response_schema, value)
            self.audit.record(
                {"template": template_id, "attempt": attempts, "prompt": prompt,
                 "raw_response": raw, "verdict": "ok" if not problems else "; ".join(problems)}
            )
            if not problems:
                return value
            last_problems = "; ".join(problems)
            prompt = base_prompt + CORRECTIVE_SUFFIX.format(problems=last_problems)
        raise ExhaustedRetries(
            f"no valid response after {attempts} attempts: {last_problems}", attempts=attempts
        )
