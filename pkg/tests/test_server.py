import json
import threading

import httpx
import pytest

from deepsearch_eval.agents.evidenceloop import LoopConfig, run_evidenceloop
from deepsearch_eval.agents.scripted import run_ground_truth
from deepsearch_eval.errors import SandboxError
from deepsearch_eval.mocks import make_endpoint
from deepsearch_eval.sandbox import FinalResponse, LocalSession, Sandbox
from deepsearch_eval.server import RemoteSession, start_server


@pytest.fixture
def server(tmp_path, kane_store, kane_record):
    srv = start_server(Sandbox(kane_store, [kane_record], trace_dir=tmp_path / "traces"))
    yield srv
    srv.close()


def test_health(server):
    data = httpx.get(server.url + "/health").json()
    assert (data["pages"], data["records"], data["episodes"]) == (4, 1, 0)


def test_remote_scripted_run_matches_local(server, kane_store, kane_record):
    remote = run_ground_truth(RemoteSession(server.url, kane_record.id), kane_record)
    local = run_ground_truth(LocalSession(Sandbox(kane_store, [kane_record]).start(kane_record.id)), kane_record)
    assert remote.status == "answered"
    assert [e.response_digest for e in remote.events] == [e.response_digest for e in local.events]


def test_concurrent_clients_are_isolated(server, kane_record):
    results = {}

    def client(name, targets):
        s = RemoteSession(server.url, kane_record.id)
        for t in targets:
            s.fetch(t)
        s.submit(FinalResponse("refuse"))
        results[name] = s.trace()

    a = threading.Thread(target=client, args=("a", ["kane", "chad"]))
    b = threading.Thread(target=client, args=("b", ["kane"]))
    a.start(), b.start()
    a.join(), b.join()
    assert results["a"].visited == ["kane", "chad"] and results["b"].visited == ["kane"]
    assert results["a"].episode_id != results["b"].episode_id


def test_error_codes(server, kane_record):
    eps = server.url + "/episodes"
    assert httpx.post(eps, json={"question_id": "nope"}).status_code == 404
    assert httpx.post(eps, content=b"{not json").status_code == 400
    assert httpx.post(server.url + "/episodes/zzz/search", json={"query": "x"}).status_code == 404
    assert httpx.get(server.url + "/nowhere").status_code == 404
    eid = httpx.post(eps, json={"question_id": kane_record.id}).json()["episode_id"]
    r = httpx.post(f"{eps}/{eid}/fetch", json={"target": "graham"})
    assert r.status_code == 404 and r.json()["error"]["code"] == "not_found"
    assert httpx.post(f"{eps}/{eid}/search", json={"query": 3}).status_code == 400
    assert httpx.get(f"{eps}/{eid}/trace").status_code == 409
    assert httpx.post(f"{eps}/{eid}/submit", json={"kind": "attempt", "answer_text": ""}).status_code == 400
    assert httpx.post(f"{eps}/{eid}/submit", json={"kind": "refuse"}).status_code == 200
    assert httpx.post(f"{eps}/{eid}/search", json={"query": "x"}).status_code == 409


def test_budget_exhaustion_over_http(tmp_path, kane_store, kane_record):
    srv = start_server(Sandbox(kane_store, [kane_record], budget=2))
    try:
        s = RemoteSession(srv.url, kane_record.id)
        s.search("Kane"), s.search("Kane")
        with pytest.raises(SandboxError) as err:
            s.search("Kane")
        assert err.value.code == "budget_exhausted" and s.budget_remaining() == 0
        s.submit(FinalResponse("attempt", "Graham Cornes"))
        assert s.trace().status == "answered"
    finally:
        srv.close()


def test_served_bytes_match_trace(server, kane_record):
    s = RemoteSession(server.url, kane_record.id)
    served = s.fetch("kane")
    s.submit(FinalResponse("refuse"))
    event = next(e for e in s.trace().events if e.kind == "fetch")
    assert event.response == served.content and event.seq == served.seq


def test_trace_of_open_episode_abandons_it(server, kane_record):
    s = RemoteSession(server.url, kane_record.id)
    s.search("Kane")
    assert s.trace().status == "abandoned"


def test_shutdown_flushes_open_episodes(tmp_path, kane_store, kane_record):
    srv = start_server(Sandbox(kane_store, [kane_record], trace_dir=tmp_path))
    s = RemoteSession(srv.url, kane_record.id)
    s.fetch("kane")
    flushed = srv.close()
    assert [t.status for t in flushed] == ["abandoned"]
    last = json.loads((tmp_path / f"{s.episode_id}.jsonl").read_text().splitlines()[-1])
    assert last["type"] == "final" and last["scored_as_refuse_without_submit"]


def test_evidenceloop_over_http(server, kane_record):
    s = RemoteSession(server.url, kane_record.id)
    run = run_evidenceloop(make_endpoint("mock:explore"), s, LoopConfig(n_solvers=2, max_rounds=1))
    kinds = [e.kind for e in run.trace.events]
    assert "marker" in kinds and kinds[-1] == "submit"
