import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillloop.gateway import (
    AuditSink,
    ExhaustedRetries,
    Gateway,
    GatewayConfig,
    TemplateError,
    TransportError,
    extract_json,
    render_template,
    validate_value,
)

SCHEMA = {
    "type": "object",
    "required": ["action"],
    "fields": {"action": {"type": "string"}},
}


class ScriptedTransport:
    """Test double: replays a fixed sequence of responses or exceptions."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = 0

    def send(self, payload, timeout_s):
        self.calls += 1
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def make_gateway(responses, budget=3, audit=None):
    config = GatewayConfig(endpoint="http://unused", model="test-model", retry_budget=budget)
    return Gateway(config, transport=ScriptedTransport(responses), audit=audit or AuditSink(None))


def test_valid_double_passes_through_unchanged():
    gw = make_gateway(['{"action": "go to fridge"}'])
    value = gw.complete_structured("executor_action_v1",
                                   {"instruction": "i", "skill": "s", "history": "h"}, SCHEMA)
    assert value == {"action": "go to fridge"}


def test_malformed_twice_then_valid_logs_three_attempts():
    audit = AuditSink(None)
    gw = make_gateway(["not json at all", '{"wrong": 1}', '{"action": "look"}'], audit=audit)
    value = gw.complete_structured("executor_action_v1",
                                   {"instruction": "i", "skill": "s", "history": "h"}, SCHEMA)
    assert value == {"action": "look"}
    assert len(audit.entries) == 3
    assert [e["verdict"] == "ok" for e in audit.entries] == [False, False, True]
    # retries carry a corrective instruction
    assert "not valid" in audit.entries[1]["prompt"]


def test_always_malformed_budget_three_exhausts_after_four_attempts():
    audit = AuditSink(None)
    gw = make_gateway(["junk"] * 10, budget=3, audit=audit)
    with pytest.raises(ExhaustedRetries) as exc:
        gw.complete_structured("executor_action_v1",
                               {"instruction": "i", "skill": "s", "history": "h"}, SCHEMA)
    assert exc.value.attempts == 4
    assert len(audit.entries) == 4


def test_transport_error_is_audited_and_raised():
    audit = AuditSink(None)
    gw = make_gateway([TransportError("connection refused")], audit=audit)
    with pytest.raises(TransportError):
        gw.complete_structured("executor_action_v1",
                               {"instruction": "i", "skill": "s", "history": "h"}, SCHEMA)
    assert len(audit.entries) == 1
    assert "transport error" in audit.entries[0]["verdict"]


def test_audit_entries_match_calls_made_exactly():
    audit = AuditSink(None)
    transport = ScriptedTransport(["junk", '{"action": "x"}'])
    gw = Gateway(GatewayConfig(endpoint="e", model="m"), transport=transport, audit=audit)
    gw.complete_structured("executor_action_v1", {"instruction": "i", "skill": "s", "history": "h"}, SCHEMA)
    assert transport.calls == len(audit.entries) == 2


def test_audit_file_sink(tmp_path):
    audit = AuditSink(tmp_path / "audit.jsonl")
    gw = make_gateway(['{"action": "x"}'], audit=audit)
    gw.complete_structured("executor_action_v1", {"instruction": "i", "skill": "s", "history": "h"}, SCHEMA)
    lines = (tmp_path / "audit.jsonl").read_text().strip().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["verdict"] == "ok"


def test_missing_template_variable():
    with pytest.raises(TemplateError):
        render_template("executor_action_v1", {"instruction": "only one"})


def test_unknown_template():
    with pytest.raises(TemplateError):
        render_template("no_such_template_v9", {})


def test_extract_json_from_prose_wrapper():
    assert extract_json('Sure! Here you go: {"action": "look"} hope that helps') == {"action": "look"}
    with pytest.raises(ValueError):
        extract_json("no braces here")


def test_validate_value_covers_nested_failures():
    schema = {
        "type": "object",
        "required": ["records"],
        "fields": {
            "records": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["type"],
                    "fields": {"type": {"type": "string", "enum": ["A", "B"]},
                               "n": {"type": "integer"}},
                },
            }
        },
    }
    assert validate_value(schema, {"records": []}) == []
    assert validate_value(schema, {"records": [{"type": "A", "n": 3}]}) == []
    errs = validate_value(schema, {"records": [{"type": "C", "n": "x"}, {}]})
    assert any("not in" in e for e in errs)
    assert any("expected integer" in e for e in errs)
    assert any("missing required" in e for e in errs)
    assert validate_value({"type": "string", "nullable": True}, None) == []
    assert validate_value({"type": "string"}, None) == ["$: null not allowed"]
    assert validate_value({"type": "integer"}, True)  # bool is not an integer here


@given(st.text(max_size=200))
@settings(max_examples=150)
def test_adversarial_responses_never_leak_invalid_values(raw):
    # any response: either a schema-valid value comes back or the call fails loudly
    gw = make_gateway([raw] * 2, budget=1)
    try:
        value = gw.complete_structured(
            "executor_action_v1", {"instruction": "i", "skill": "s", "history": "h"}, SCHEMA
        )
    except ExhaustedRetries:
        return
    assert validate_value(SCHEMA, value) == []


def test_in_flight_cap_is_respected_under_threads():
    import threading
    import time

    active = []
    peak = []
    lock = threading.Lock()

    class SlowTransport:
        def send(self, payload, timeout_s):
            with lock:
                active.append(1)
                peak.append(len(active))
            time.sleep(0.01)
            with lock:
                active.pop()
            return '{"action": "x"}'

    config = GatewayConfig(endpoint="e", model="m", max_in_flight=2)
    gw = Gateway(config, transport=SlowTransport())
    threads = [
        threading.Thread(
            target=lambda: gw.complete_structured(
                "executor_action_v1", {"instruction": "i", "skill": "s", "history": "h"}, SCHEMA
            )
        )
        for _ in range(8)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert max(peak) <= 2
