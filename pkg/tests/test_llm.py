import json

import httpx
import pytest

from deepsearch_eval.errors import EndpointError
from deepsearch_eval.llm import ChatEndpoint, RetryPolicy, ScriptedEndpoint


def _ok(text="hi"):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}], "usage": {"total_tokens": 3}})


def _endpoint(handler, **kw):
    return ChatEndpoint("http://llm.test/v1/", "m1", transport=httpx.MockTransport(handler),
                        sleep=lambda s: None, api_key="", **kw)


def test_request_carries_defaults_and_overrides():
    bodies = []

    def handler(request):
        bodies.append(json.loads(request.content))
        assert request.url.path == "/v1/chat/completions"
        return _ok()

    ep = _endpoint(handler)
    ep.chat([{"role": "user", "content": "x"}])
    ep.chat([{"role": "user", "content": "x"}], temperature=0)
    assert bodies[0]["temperature"] == 0.6 and bodies[0]["top_p"] == 0.95
    assert bodies[1]["temperature"] == 0 and bodies[1]["model"] == "m1"
    assert ep.transcripts[1]["request"]["temperature"] == 0


def test_retries_after_timeouts():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] <= 2:
            raise httpx.ReadTimeout("slow", request=request)
        return _ok("done")

    c = _endpoint(handler).chat([])
    assert (c.text, c.retries, calls["n"]) == ("done", 2, 3)


def test_gives_up_after_policy_attempts():
    ep = _endpoint(lambda r: httpx.Response(503), retry=RetryPolicy(attempts=2))
    with pytest.raises(EndpointError):
        ep.chat([])


@pytest.mark.parametrize("status", [400, 401, 404, 422])
def test_client_errors_are_not_retried(status):
    calls = []
    ep = _endpoint(lambda r: calls.append(1) or httpx.Response(status))
    with pytest.raises(EndpointError):
        ep.chat([])
    assert len(calls) == 1


def test_rate_limit_is_retried():
    replies = iter([httpx.Response(429), _ok("ok")])
    assert _endpoint(lambda r: next(replies)).chat([]).retries == 1


def test_malformed_body_is_an_error():
    ep = _endpoint(lambda r: httpx.Response(200, json={"nope": 1}), retry=RetryPolicy(attempts=1))
    with pytest.raises(EndpointError):
        ep.chat([])


def test_config_is_stable():
    ep = _endpoint(lambda r: _ok(), max_tokens=64)
    assert ep.config() == ep.config()
    assert ep.config()["params"] == {"temperature": 0.6, "top_p": 0.95, "max_tokens": 64}
    assert ep.config()["base_url"] == "http://llm.test/v1"


def test_scripted_endpoint_exhausts():
    ep = ScriptedEndpoint(["a"])
    assert ep.chat([]).text == "a"
    with pytest.raises(EndpointError):
        ep.chat([])
