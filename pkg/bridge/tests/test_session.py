import io
import json
import subprocess
import sys

from alfworld_bridge.protocol import validate_request, validate_response
from alfworld_bridge.session import BridgeSession, ScriptedBackend, serve


def roundtrip(requests, backend_factory=ScriptedBackend, max_steps=50):
    raw = "".join(json.dumps(r) + "\n" for r in requests).encode()
    rfile = io.BytesIO(raw)
    wfile = io.BytesIO()
    serve(rfile, wfile, backend_factory, max_steps=max_steps)
    return [json.loads(line) for line in wfile.getvalue().decode().splitlines()]


GOLDEN_SCRIPT = [
    {"proto": 1, "op": "reset", "task_id": "trial_1", "seed": 3},
    {"proto": 1, "op": "step", "action": "look"},
    {"proto": 1, "op": "step", "action": "warp through wall"},
    {"proto": 1, "op": "step", "action": "finish"},
    {"proto": 1, "op": "reset", "task_id": "trial_2", "seed": 4},
    {"proto": 1, "op": "step", "action": "go north"},
    {"proto": 1, "op": "close"},
]


def test_golden_transcript_conformance():
    # every request and every emitted line must validate against the schema
    for request in GOLDEN_SCRIPT:
        assert validate_request(request) == []
    responses = roundtrip(GOLDEN_SCRIPT)
    assert len(responses) == len(GOLDEN_SCRIPT)
    for response in responses:
        assert validate_response(response) == [], response


def test_reset_returns_observation_and_success_maps_to_flag():
    responses = roundtrip(GOLDEN_SCRIPT)
    assert "trial_1" in responses[0]["observation"]
    assert responses[1] == {"proto": 1, "observation": "You look.", "done": False,
                            "success": False, "rejected": False}
    # unparseable action forwarded verbatim; the env rejects it natively
    assert responses[2]["rejected"] is True
    assert responses[2]["observation"] == "Nothing happens."
    assert responses[3]["done"] is True and responses[3]["success"] is True
    assert responses[-1]["ack"] is True


def test_step_before_reset_is_protocol_violation():
    responses = roundtrip([{"proto": 1, "op": "step", "action": "look"}])
    assert responses[0]["error"]["code"] == "protocol_violation"


def test_reset_while_episode_active_is_protocol_violation():
    responses = roundtrip(
        [
            {"proto": 1, "op": "reset", "task_id": "a", "seed": 1},
            {"proto": 1, "op": "reset", "task_id": "b", "seed": 2},
        ]
    )
    assert "observation" in responses[0]
    assert responses[1]["error"]["code"] == "protocol_violation"


def test_malformed_json_and_unknown_op():
    rfile = io.BytesIO(b'{{{\n{"proto": 1, "op": "teleport"}\n')
    wfile = io.BytesIO()
    serve(rfile, wfile, ScriptedBackend)
    responses = [json.loads(line) for line in wfile.getvalue().decode().splitlines()]
    assert responses[0]["error"]["code"] == "malformed"
    assert responses[1]["error"]["code"] == "protocol_violation"


def test_max_steps_forces_done():
    requests = [{"proto": 1, "op": "reset", "task_id": "a", "seed": 1}]
    requests += [{"proto": 1, "op": "step", "action": "look"}] * 3
    responses = roundtrip(requests, max_steps=2)
    assert responses[1]["done"] is False
    assert responses[2]["done"] is True
    assert responses[3]["error"]["code"] == "protocol_violation"  # episode over


def test_env_init_failure_reports_then_exits():
    def broken():
        raise RuntimeError("no benchmark data")

    responses = roundtrip(GOLDEN_SCRIPT, backend_factory=broken)
    assert len(responses) == 1
    assert responses[0]["error"]["code"] == "env_init"


def test_session_invariant_one_episode_at_a_time():
    session = BridgeSession()
    assert session.state == "idle"
    session.begin("t")
    assert session.state == "in_episode"
    session.finish()
    assert session.state == "idle"


def test_subprocess_stdio_episode():
    # the real deployment surface: spawned process, one JSON object per line
    proc = subprocess.Popen(
        [sys.executable, "-m", "alfworld_bridge", "--backend", "scripted"],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
    )
    try:
        for request in GOLDEN_SCRIPT:
            proc.stdin.write((json.dumps(request) + "\n").encode())
        proc.stdin.flush()
        out, _ = proc.communicate(timeout=30)
    finally:
        proc.kill()
    responses = [json.loads(line) for line in out.decode().splitlines()]
    assert len(responses) == len(GOLDEN_SCRIPT)
    for response in responses:
        assert validate_response(response) == []
    assert responses[3]["success"] is True
