from __future__ import annotations

import json

import pytest

from conftest import FailingBackend, ScriptedBackend, make_gateway
from limgen.gateway import (
    BackendUnavailable,
    Budget,
    BudgetExceeded,
    ChatRequest,
    ChatResponse,
    FixtureBackend,
    Message,
    ResponseFormat,
    TransientBackendError,
    UnparseableAfterRepair,
    Usage,
    cache_key,
    extract_json_object,
)


def req(content="hi", purpose="", **kwargs):
    return ChatRequest(
        model_id="m", messages=(Message("user", content),), purpose=purpose, **kwargs
    )


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(model_id="m", messages=())
    with pytest.raises(ValueError):
        ChatRequest(model_id="m", messages=(Message("assistant", "x"),))
    with pytest.raises(ValueError):
        ChatRequest(model_id="m", messages=(Message("user", "x"),), temperature=-1)


def test_cache_key_ignores_purpose():
    assert cache_key(req(purpose="a")) == cache_key(req(purpose="b"))


def test_cache_key_sensitive_to_semantic_fields():
    base = cache_key(req())
    assert cache_key(req("other")) != base
    assert cache_key(req(max_tokens=9)) != base
    assert cache_key(req(temperature=0.5)) != base
    assert cache_key(req(response_format=ResponseFormat.JSON_OBJECT)) != base


def test_cache_key_sensitive_to_message_order():
    a = ChatRequest(model_id="m", messages=(Message("system", "s"), Message("user", "u")))
    b = ChatRequest(model_id="m", messages=(Message("user", "u"), Message("system", "s")))
    assert cache_key(a) != cache_key(b)


def test_cache_round_trip(tmp_path):
    backend = ScriptedBackend(default="hello")
    gateway = make_gateway(backend, cache_dir=tmp_path)
    first = gateway.complete(req())
    second = gateway.complete(req())
    assert first.content == second.content == "hello"
    assert len(backend.requests) == 1
    assert gateway.cache_hits == 1
    assert gateway.backend_calls == 1


def test_nonzero_temperature_is_not_cached(tmp_path):
    backend = ScriptedBackend(default="hello")
    gateway = make_gateway(backend, cache_dir=tmp_path)
    gateway.complete(req(temperature=0.7))
    gateway.complete(req(temperature=0.7))
    assert len(backend.requests) == 2


def test_retry_recovers_after_transient_failures():
    backend = FailingBackend(failures=2, then="ok")
    sleeps = []
    gateway = make_gateway(backend, sleep=sleeps.append)
    assert gateway.complete(req()).content == "ok"
    assert backend.calls == 3
    # exponential backoff: base, base*2
    assert sleeps == [0.2, 0.4]


def test_retry_exhaustion_raises_backend_unavailable():
    backend = FailingBackend(failures=10)
    gateway = make_gateway(backend)
    with pytest.raises(BackendUnavailable):
        gateway.complete(req())
    assert backend.calls == 3


def test_request_budget_enforced():
    gateway = make_gateway(ScriptedBackend(), budget=Budget(max_requests=2))
    gateway.complete(req("a"))
    gateway.complete(req("b"))
    with pytest.raises(BudgetExceeded):
        gateway.complete(req("c"))


def test_token_budget_enforced():
    def backend(_req):
        return ChatResponse(content="x", usage=Usage(prompt_tokens=50, completion_tokens=50))

    gateway = make_gateway(backend, budget=Budget(max_total_tokens=100))
    gateway.complete(req("a"))
    with pytest.raises(BudgetExceeded):
        gateway.complete(req("b"))


def test_calls_by_purpose_counts():
    gateway = make_gateway(ScriptedBackend())
    gateway.complete(req("a", purpose="pair"))
    gateway.complete(req("b", purpose="pair"))
    gateway.complete(req("c", purpose="judge"))
    assert gateway.calls_by_purpose == {"pair": 2, "judge": 1}


def test_call_log_only_when_recording():
    gateway = make_gateway(ScriptedBackend(), record_calls=True)
    gateway.complete(req("a"))
    assert [m.content for r in gateway.call_log for m in r.messages] == ["a"]
    quiet = make_gateway(ScriptedBackend())
    quiet.complete(req("a"))
    assert quiet.call_log == []


def test_complete_structured_repairs_once():
    backend = ScriptedBackend(default=None, by_purpose={"j": ["not json", '{"a": 1}']})
    gateway = make_gateway(backend)
    parsed, raw = gateway.complete_structured(
        req("q", purpose="j", response_format=ResponseFormat.JSON_OBJECT),
        extract_json_object,
    )
    assert parsed == {"a": 1}
    assert raw == '{"a": 1}'
    # the repair request carries the failed reply plus a corrective user turn
    repair_messages = backend.requests[1].messages
    assert repair_messages[1].role == "assistant"
    assert repair_messages[1].content == "not json"
    assert repair_messages[2].role == "user"


def test_complete_structured_fails_after_second_parse_error():
    backend = ScriptedBackend(by_purpose={"j": ["junk", "more junk"]})
    gateway = make_gateway(backend)
    with pytest.raises(UnparseableAfterRepair):
        gateway.complete_structured(
            req("q", purpose="j", response_format=ResponseFormat.JSON_OBJECT),
            extract_json_object,
        )


def test_complete_structured_requires_json_format():
    gateway = make_gateway(ScriptedBackend())
    with pytest.raises(ValueError):
        gateway.complete_structured(req("q"), extract_json_object)


def test_fixture_backend_serves_by_cache_key(tmp_path):
    request = req("fixture me")
    (tmp_path / f"{cache_key(request)}.txt").write_text("canned", encoding="utf-8")
    backend = FixtureBackend(tmp_path)
    assert backend(request).content == "canned"
    with pytest.raises(BackendUnavailable):
        backend(req("unknown"))


def test_extract_json_object_variants():
    assert extract_json_object('{"a": 1}') == {"a": 1}
    assert extract_json_object('```json\n{"a": 1}\n```') == {"a": 1}
    assert extract_json_object('Sure! Here it is: {"a": {"b": 2}} hope that helps') == {
        "a": {"b": 2}
    }
    with pytest.raises(ValueError):
        extract_json_object("no json here")
    with pytest.raises(ValueError):
        extract_json_object("[1, 2]")


def test_emit_log_payload():
    lines = []
    gateway = make_gateway(ScriptedBackend(), log=lines.append)
    gateway.complete(req("a", purpose="pair"))
    assert lines[0]["purpose"] == "pair"
    assert lines[0]["cache_hit"] is False
    json.dumps(lines[0])  # payload must be JSON-serializable
