from __future__ import annotations

import json

import httpx
import pytest

from larp.bridge import (
    BackendConfig,
    ChatRequest,
    ChatResponse,
    HttpBackend,
    LLMBridge,
    Message,
    ROLE_TAGS,
    TranscriptEntry,
    build_bridge,
    format_transcript,
    parse_transcript,
    scripted_bridge,
)
from larp.errors import (
    BackendRejected,
    BackendTimeout,
    BackendUnreachable,
    BridgeError,
    TranscriptExhausted,
)

SCRIPT = """#larp-transcript v1
{"role": "self_ask", "reply": "Q1: where is the well?"}
{"role": "intent", "match": "water", "reply": "fetch water"}
{"role": "intent", "reply": "chat", "times": 0}
"""


def test_scripted_reply_and_counts():
    bridge = scripted_bridge(SCRIPT)
    assert all(bridge.call_count(tag) == 0 for tag in ROLE_TAGS)
    assert bridge.ask("self_ask", "anything") == "Q1: where is the well?"
    assert bridge.call_count("self_ask") == 1 and bridge.call_count("codegen") == 0
    with pytest.raises(TranscriptExhausted):
        bridge.ask("self_ask", "again")


def test_match_filters_and_unlimited_entries():
    bridge = scripted_bridge(SCRIPT)
    assert bridge.ask("intent", "hello") == "chat"
    assert bridge.ask("intent", "we need water") == "fetch water"
    assert bridge.ask("intent", "we need water") == "chat"
    assert [bridge.ask("intent", "x") for _ in range(3)] == ["chat"] * 3


def test_match_looks_at_last_user_message_only():
    bridge = scripted_bridge(SCRIPT)
    req = ChatRequest("intent", (Message("system", "water"), Message("user", "hi")))
    assert bridge.complete(req).text == "chat"


def test_replay_is_deterministic():
    def run():
        b = scripted_bridge(SCRIPT)
        return [b.ask("intent", t) for t in ["a", "water", "water", "b"]]

    assert run() == run()


def test_transcript_format_round_trip_and_errors():
    entries = parse_transcript(SCRIPT)
    assert parse_transcript(format_transcript(entries)) == entries
    multi = [TranscriptEntry("format", "TASKS:\n1. fetch water\n2. \"rest\"")]
    assert parse_transcript(format_transcript(multi)) == multi
    for bad in [
        '{"role": "intent", "reply": "x"}\n',
        '#larp-transcript v1\n{"role": "nope", "reply": "x"}\n',
        '#larp-transcript v1\n{"role": "intent"}\n',
        '#larp-transcript v1\n{"role": "intent", "reply": "x", "extra": 1}\n',
        '#larp-transcript v1\n{"role": "intent", "reply": "x", "times": -1}\n',
        "#larp-transcript v1\nnot json\n",
    ]:
        with pytest.raises(BridgeError):
            parse_transcript(bad)


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("poetry", (Message("user", "x"),))
    with pytest.raises(ValueError):
        ChatRequest("intent", ())
    with pytest.raises(ValueError):
        ChatRequest("intent", (Message("user", "x"),), temperature=-1)
    with pytest.raises(ValueError):
        BackendConfig(kind="scripted")
    with pytest.raises(ValueError):
        BackendConfig(kind="http")


def test_state_resume(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text(SCRIPT)
    first = build_bridge(BackendConfig(transcript_path="t.jsonl"), base_dir=tmp_path)
    first.ask("intent", "water")
    second = build_bridge(BackendConfig(transcript_path=str(path)))
    second.backend.set_state(first.backend.get_state())
    assert second.ask("intent", "water") == "chat"


def test_role_routing():
    seen = []

    class Echo:
        def complete(self, request, model):
            seen.append(model)
            return ChatResponse("ok", "echo")

    cfg = BackendConfig(kind="http", endpoint="http://x", models={"codegen": "coder", "default": "base"})
    bridge = LLMBridge(Echo(), cfg)
    bridge.ask("codegen", "x")
    bridge.ask("intent", "x")
    assert seen == ["coder", "base"]


# -- HTTP client -------------------------------------------------------------


def http_backend(handler, retries=2):
    sleeps = []
    backend = HttpBackend(
        "http://llm.test/v1/chat/completions",
        auth_token="secret",
        max_retries=retries,
        transport=httpx.MockTransport(handler),
        sleep=sleeps.append,
    )
    return backend, sleeps


def ok_body(text="hi"):
    return {"choices": [{"message": {"role": "assistant", "content": text}}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}}


def req():
    return ChatRequest("intent", (Message("system", "s"), Message("user", "u")), seed=9, max_tokens=64)


def test_http_wire_format():
    captured = {}

    def handler(request: httpx.Request):
        captured["body"] = json.loads(request.content)
        captured["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json=ok_body("hello"))

    backend, _ = http_backend(handler)
    resp = backend.complete(req(), "m1")
    assert resp.text == "hello" and resp.prompt_tokens == 3 and resp.backend_id == "http:m1"
    assert captured["body"] == {
        "model": "m1",
        "messages": [{"role": "system", "content": "s"}, {"role": "user", "content": "u"}],
        "temperature": 0.0,
        "max_tokens": 64,
        "seed": 9,
    }
    assert captured["auth"] == "Bearer secret"


def test_http_retries_with_exponential_backoff():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503, text="busy")
        return httpx.Response(200, json=ok_body())

    backend, sleeps = http_backend(handler)
    assert backend.complete(req(), "m").text == "hi"
    assert sleeps == [0.5, 1.0]


def test_http_gives_up():
    backend, sleeps = http_backend(lambda r: httpx.Response(500, text="down"), retries=1)
    with pytest.raises(BackendRejected):
        backend.complete(req(), "m")
    assert len(sleeps) == 1

    def refuse(request):
        raise httpx.ConnectError("refused")

    backend, _ = http_backend(refuse, retries=0)
    with pytest.raises(BackendUnreachable):
        backend.complete(req(), "m")

    def slow(request):
        raise httpx.ReadTimeout("slow")

    backend, _ = http_backend(slow, retries=0)
    with pytest.raises(BackendTimeout):
        backend.complete(req(), "m")


def test_http_client_errors_are_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, text="no")

    backend, _ = http_backend(handler)
    with pytest.raises(BackendRejected):
        backend.complete(req(), "m")
    assert len(calls) == 1
    backend, _ = http_backend(lambda r: httpx.Response(200, json={"nope": 1}))
    with pytest.raises(BackendRejected):
        backend.complete(req(), "m")
