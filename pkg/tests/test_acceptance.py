"""Acceptance criteria 1 to 11. Each test records one pass/fail line.

Run directly (``python tests/test_acceptance.py``) or under pytest; the
lines are printed in the terminal summary either way.
"""

from __future__ import annotations

import itertools
import json
import os
import random
import re
import time
from contextlib import contextmanager
from fractions import Fraction

import pytest

from conftest import ACCEPTANCE, KANE_SEED, _page, kane_pages
from deepsearch_eval.agents.actions import EID_TOKEN, render_action
from deepsearch_eval.agents.evidenceloop import LoopConfig, run_evidenceloop
from deepsearch_eval.agents.scripted import run_ground_truth, run_refuse_all
from deepsearch_eval.chainbuilder import (
    Chain,
    QuestionRecord,
    assemble_record,
    build_evidence_chain,
    build_question,
    find_alternative_chain,
    probe_for_hop,
    verify_question,
    write_records,
)
from deepsearch_eval.cli import main
from deepsearch_eval.corpus import dump_corpus, ingest_corpus
from deepsearch_eval.errors import EndpointError, SandboxError
from deepsearch_eval.llm import FunctionEndpoint
from deepsearch_eval.masking import is_fetchable
from deepsearch_eval.metrics import (
    ATTEMPT_CORRECT,
    ATTEMPT_WRONG,
    REFUSE,
    InstanceOutcome,
    aggregate_scores,
    degradation_analysis,
    outcome_from_trace,
    score_traces,
)
from deepsearch_eval.mocks import ChainFollowerOracle, RequiredEvidenceOracle, RoleRouter
from deepsearch_eval.sandbox import FinalResponse, LocalSession, Sandbox, digest
from synth import digraph_pages, random_digraph, synthetic_world


@contextmanager
def criterion(n: int, desc: str):
    try:
        yield
    except BaseException:
        ACCEPTANCE[n] = (False, desc)
        print(f"criterion {n}: FAIL  {desc}")
        raise
    ACCEPTANCE[n] = (True, desc)
    print(f"criterion {n}: PASS  {desc}")


def _world_records(seed=7):
    world = synthetic_world(seed)
    store, _ = ingest_corpus(world.pages)
    oracle = ChainFollowerOracle(store)
    records = []
    for s in world.seeds:
        out = build_question(store, s, oracle)
        assert out.status == "accepted", out.reason
        records.append(out.record)
    return store, records


# ------------------------------------------------------------------ 1

def _strings(obj):
    if isinstance(obj, str):
        yield obj
    elif isinstance(obj, dict):
        for v in obj.values():
            yield from _strings(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _strings(v)


def _leaks(content: str, record, store, visited: set[str]) -> list[str]:
    """Independent scan: aliases of chain entities whose predecessor page was not visited."""
    chain = record.chain.entities
    locked = [chain[i] for i in range(1, len(chain)) if chain[i - 1] not in visited]
    text = " ".join(re.sub(r"\s+", " ", s) for s in _strings(json.loads(content))).casefold()
    return [a for e in locked for a in store.page(e).aliases if a.casefold() in text]


def test_c01_masking_soundness_fuzz():
    desc = "masking soundness: >=1000 random action sequences, >=20 records, zero leaks, < 60 s"
    with criterion(1, desc):
        start = time.perf_counter()
        store, records = _world_records()
        assert len(records) >= 20
        rng = random.Random(1234)
        vocab = sorted({w for p in store.pages.values() for w in re.findall(r"\w+", p.body)})
        names = [a for p in store.pages.values() for a in p.aliases]
        sandbox = Sandbox(store, records, budget=40)
        leaks, served, sequences = [], 0, 1000
        for _ in range(sequences):
            record = rng.choice(records)
            ep = sandbox.start(record.id)
            chain = record.chain.entities
            visited: set[str] = set()
            for _ in range(rng.randint(1, 12)):
                roll = rng.random()
                try:
                    if roll < 0.35:
                        q = " ".join(rng.choice(vocab + names) for _ in range(rng.randint(1, 3)))
                        res = LocalSession(ep).search(q, rng.randint(1, 8))
                    else:
                        if roll < 0.7:
                            target = rng.choice(chain)  # frequently probe locked chain pages
                        elif roll < 0.85:
                            target = rng.choice(names)
                        else:
                            target = rng.choice(list(store.pages))
                        res = LocalSession(ep).fetch(target)
                        visited = set(ep.visited)
                    served += 1
                    found = _leaks(res.content, record, store, visited)
                    if found:
                        leaks.append((record.id, found))
                except SandboxError as exc:
                    assert exc.code in ("not_found", "budget_exhausted")
            ep_final = FinalResponse("refuse")
            LocalSession(ep).submit(ep_final)
        elapsed = time.perf_counter() - start
        print(f"  {sequences} sequences, {served} served responses, {len(leaks)} leaks, {elapsed:.1f}s")
        assert leaks == []
        assert elapsed < 60


# ------------------------------------------------------------------ 2

def test_c02_discoverability_completeness():
    desc = "discoverability: ground-truth agent unlocks v_i exactly after page(v_{i-1}); Pass@1 = 1, hops_used = n"
    with criterion(2, desc):
        store, records = _world_records()
        sandbox = Sandbox(store, records)
        traces = []
        for record in records:
            ep = sandbox.start(record.id)
            chain = record.chain.entities
            for i in range(1, len(chain)):
                # v_i is locked until page(v_{i-1}) has been fetched, then opens
                assert not is_fetchable(chain[i], ep.policy, ep.unlocked)
                LocalSession(ep).fetch(chain[i - 1])
                assert is_fetchable(chain[i], ep.policy, ep.unlocked)
                for j in range(i + 1, len(chain)):
                    assert not is_fetchable(chain[j], ep.policy, ep.unlocked)
            LocalSession(ep).submit(FinalResponse("attempt", record.answer_aliases[0]))
            traces.append(LocalSession(ep).trace())
            # the packaged scripted agent behaves the same
            scripted = run_ground_truth(LocalSession(sandbox.start(record.id)), record)
            assert scripted.visited == list(chain[:-1])
        report, outcomes, _ = score_traces(traces, {r.id: r for r in records})
        assert report.pass_at_1 == 1.0
        for o, r in zip(outcomes, records):
            assert o.hops_used == r.hop_count
            assert o.ks == 1


# ------------------------------------------------------------------ 3-5

STATES = [(ks, resp) for ks in (0, 1) for resp in (ATTEMPT_CORRECT, ATTEMPT_WRONG, REFUSE)]


def _outcome(i, ks, resp, searched, within, clean_ok):
    hops_gt = 3
    o = InstanceOutcome(f"q{i}", ks, searched, hops_gt if within else hops_gt + 1, hops_gt, resp)
    o.flags.append("clean_ok" if clean_ok else "clean_fail")
    return o


def brute_force(outcomes):
    """Count every set by a direct pass over the instances, with exact fractions."""
    n = len(outcomes)
    suff = insuff = refuse = attempt = correct = 0
    refuse_insuff = correct_suff = credit = s_star = forget = astray = 0
    for o in outcomes:
        if o.ks:
            suff += 1
        else:
            insuff += 1
        if o.response == REFUSE:
            refuse += 1
            if not o.ks:
                refuse_insuff += 1
        else:
            attempt += 1
        if o.response == ATTEMPT_CORRECT:
            correct += 1
            if o.ks:
                correct_suff += 1
            elif o.searched and o.hops_used <= o.hops_gt:
                credit += 1
        if o.ks and o.response != ATTEMPT_CORRECT:
            s_star += 1
            if "clean_fail" in o.flags:
                forget += 1
            else:
                astray += 1

    def div(a, b):
        return Fraction(a, b) if b else Fraction(0)

    def f1(p, r):
        return 2 * p * r / (p + r) if p + r else Fraction(0)

    ks = Fraction(suff, n)
    gr = f1(div(refuse_insuff, refuse), div(refuse_insuff, insuff))
    ku = f1(div(correct_suff, attempt), div(correct_suff, suff))
    return {
        "knowledge_score": ks,
        "search_score": ks + Fraction(credit, n),
        "gen_score": (gr + ku) / 2 * ks,
        "gr_f1": gr,
        "ku_f1": ku,
        "forget_rate": div(forget, s_star) if s_star else None,
        "lead_astray_rate": div(astray, s_star) if s_star else None,
        "pass_at_1": Fraction(correct, n),
    }


def _clean_lm(outcomes):
    """Stub LM for the degradation re-ask: the question text carries the instance id."""
    fail = {o.question_id for o in outcomes if "clean_fail" in o.flags}

    def reply(messages):
        qid = re.search(r"Question: (\S+)", messages[-1]["content"]).group(1)
        return "<answer>nobody</answer>" if qid in fail else "<answer>Answer</answer>"

    return FunctionEndpoint(reply)


def _dummy_records(outcomes):
    ev = ()
    return {
        o.question_id: QuestionRecord(o.question_id, o.question_id, "a", "z", ("Answer",), Chain(("a", "b", "z")), ev, ev)
        for o in outcomes
    }


def headline(outcomes):
    rep = aggregate_scores(outcomes)
    deg = degradation_analysis(outcomes, _dummy_records(outcomes), _clean_lm(outcomes))
    vals = {k: getattr(rep, k) for k in ("knowledge_score", "search_score", "gen_score", "gr_f1", "ku_f1", "pass_at_1")}
    vals["forget_rate"] = deg["forget_rate"]
    vals["lead_astray_rate"] = deg["lead_astray_rate"]
    return rep, vals


def outcome_sets():
    """Exhaustive (sufficiency x response) sets for N <= 4, full state space for N <= 2, then 10,000 random N <= 6."""
    rng = random.Random(99)
    for n in range(1, 5):
        for combo in itertools.product(STATES, repeat=n):
            yield [_outcome(i, ks, r, rng.random() < 0.5, rng.random() < 0.5, rng.random() < 0.5)
                   for i, (ks, r) in enumerate(combo)]
    full = [(ks, r, s, w, c) for ks, r in STATES for s in (0, 1) for w in (0, 1) for c in (0, 1)]
    for n in (1, 2):
        for combo in itertools.product(full, repeat=n):
            yield [_outcome(i, ks, r, bool(s), bool(w), bool(c)) for i, (ks, r, s, w, c) in enumerate(combo)]
    for _ in range(10_000):
        n = rng.randint(1, 6)
        yield [_outcome(i, rng.randint(0, 1), rng.choice(STATES)[1], rng.random() < 0.5, rng.random() < 0.5,
                        rng.random() < 0.5) for i in range(n)]


@pytest.fixture(scope="module")
def scored_sets():
    return [(outs, *headline(outs)) for outs in outcome_sets()]


def test_c03_metric_oracle_equivalence(scored_sets):
    desc = "metric oracle: exhaustive N<=4 plus 10,000 random N<=6 sets match brute force within 1e-9 (8 quantities)"
    with criterion(3, desc):
        mismatches = 0
        for outs, _rep, vals in scored_sets:
            expect = brute_force(outs)
            for key, want in expect.items():
                got = vals[key]
                if want is None or got is None:
                    ok = want is None and got is None
                else:
                    ok = abs(got - float(want)) <= 1e-9
                mismatches += not ok
        print(f"  {len(scored_sets)} outcome sets checked, {mismatches} mismatches")
        assert mismatches == 0


def test_c04_anti_gaming(scored_sets, kane_store, kane_record):
    desc = "anti-gaming: refuse-all never-search gives KU F1 = 0 and GenScore = 0 when KS = 0; GenScore <= KS everywhere"
    with criterion(4, desc):
        # end to end: refuse-all agent, prober that knows nothing
        sandbox = Sandbox(kane_store, [kane_record])
        traces = [run_refuse_all(LocalSession(sandbox.start(kane_record.id))) for _ in range(5)]
        know_nothing = FunctionEndpoint(lambda m: "no idea")
        report, outcomes, _ = score_traces(traces, {kane_record.id: kane_record}, prober=know_nothing)
        assert all(not o.searched and o.response == REFUSE for o in outcomes)
        assert report.knowledge_score == 0
        assert report.ku_f1 == 0 and report.gen_score == 0
        # refusing everything cannot earn generation credit on any fuzzed sufficiency pattern
        violations = 0
        for outs, rep, _ in scored_sets:
            violations += rep.gen_score > rep.knowledge_score + 1e-12
            refuse_all = [InstanceOutcome(o.question_id, o.ks, False, 0, o.hops_gt, REFUSE) for o in outs]
            r2 = aggregate_scores(refuse_all)
            violations += r2.ku_f1 != 0
            if r2.knowledge_score == 0:
                violations += r2.gen_score != 0
        assert violations == 0


def test_c05_bounds_and_partition(scored_sets):
    desc = "bounds: SearchScore >= KS, every score in [0,1], |A_c|+|A_w|+|N| = N on all fuzzed sets"
    with criterion(5, desc):
        violations = 0
        for outs, rep, vals in scored_sets:
            violations += rep.search_score < rep.knowledge_score
            for key in ("gr_precision", "gr_recall", "ku_precision", "ku_recall"):
                violations += not 0 <= getattr(rep, key) <= 1
            for v in vals.values():
                violations += v is not None and not 0 <= v <= 1
            c = rep.counts
            violations += c["A_c"] + c["A_w"] + c["N_refuse"] != len(outs)
        assert violations == 0


# ------------------------------------------------------------------ 6

def brute_shortest(adj, v0, vn):
    """Layered reachability over walks with edge (v0, vn) removed; first layer containing vn."""
    edges = {(u, w) for u, ws in adj.items() for w in ws if (u, w) != (v0, vn)}
    frontier, seen = {v0}, {v0}
    for length in range(1, len(adj) + 1):
        frontier = {w for (u, w) in edges if u in frontier}
        if vn in frontier:
            return length
        frontier -= seen
        seen |= frontier
        if not frontier:
            return None
    return None


def test_c06_bfs_correctness():
    desc = "BFS: 200 random digraphs <= 50 nodes, alternative-chain length equals brute force, < 10 s"
    with criterion(6, desc):
        rng = random.Random(6)
        start = time.perf_counter()
        reachable = 0
        for _ in range(200):
            nodes, adj = random_digraph(rng)
            store, _ = ingest_corpus(digraph_pages(nodes, adj))
            v0, vn = rng.sample(nodes, 2)
            want = brute_shortest(adj, v0, vn)
            chain = find_alternative_chain(store, v0, vn)
            got = chain.hop_count if chain else None
            assert got == want, (v0, vn, got, want)
            if chain:
                reachable += 1
                hops = list(zip(chain.entities, chain.entities[1:]))
                assert (v0, vn) not in hops
                assert all(w in adj[u] for u, w in hops)
        elapsed = time.perf_counter() - start
        print(f"  200 graphs, {reachable} with an alternative path, {elapsed:.2f}s")
        assert reachable > 20
        assert elapsed < 10


# ------------------------------------------------------------------ 7

def _redundant_corpus():
    """Chad's page already names Graham, so Nicole's hop adds nothing."""
    pages = kane_pages()
    pages[1] = _page("chad", "Chad Cornes", ["Chad Cornes", "Chad"], [
        "Chad Cornes is a former Australian rules footballer. ",
        "Chad Cornes has stepmother ", ("Nicole Cornes", "nicole"), ", the wife of ", ("Graham Cornes", "graham"), ". ",
        "He won two premierships.",
    ])
    return pages


def _manual_record(store, chain):
    chain = Chain(tuple(chain))
    evidence = build_evidence_chain(store, chain)
    probes = [probe_for_hop(store, e) for e in evidence]
    return assemble_record(KANE_SEED["question"], chain[0], chain[-1], chain, evidence, probes,
                           store.page(chain[-1]).aliases)


def test_c07_necessity_verification():
    desc = "necessity: stub oracle rejects a chain with one redundant hop and accepts the minimal chain"
    with criterion(7, desc):
        store, _ = ingest_corpus(_redundant_corpus())
        redundant = _manual_record(store, ["kane", "chad", "nicole", "graham"])
        minimal = find_alternative_chain(store, "kane", "graham")
        assert minimal.entities == ("kane", "chad", "graham")
        minimal_rec = _manual_record(store, minimal.entities)

        # stub that answers iff the facts of the minimal chain are all present
        stub = RequiredEvidenceOracle([e.text for e in minimal_rec.evidence], "Graham Cornes")
        rep = verify_question(stub, redundant)
        assert rep.parametric_inaccessible and rep.evidence_sufficient
        assert rep.necessity == [True, True, False] and not rep.accepted
        assert verify_question(stub, minimal_rec).accepted

        # the evidence-following oracle reaches the same verdicts
        follower = ChainFollowerOracle(store)
        rep = verify_question(follower, redundant)
        assert not rep.accepted and rep.necessity[2] is False
        assert verify_question(follower, minimal_rec).accepted
        assert build_question(store, KANE_SEED, follower).status == "accepted"


# ------------------------------------------------------------------ 8

def _eids(messages):
    """EIDs surfaced in observations, in order."""
    out = []
    for m in messages:
        if m["role"] == "user":
            hit = re.match(r"\[(EID-\d+)\]", m["content"])
            if hit:
                out.append(hit.group(1))
    return out


CLAIMS = [
    ("Kane Cornes has brother Chad Cornes", "Chad Cornes"),
    ("Chad Cornes has stepmother Nicole Cornes", "Nicole Cornes"),
    ("Nicole Cornes is married to Graham Cornes", "Graham Cornes"),
]


def _stub_verifier(messages):
    """Entailment: the claim's object must appear in the cited source. Other checks pass."""
    prompt = messages[-1]["content"]
    if "entail the claim" in prompt:
        source = prompt.split("\n\nClaim: ")[0]
        claim = prompt.split("\n\nClaim: ")[1].split("\n\n")[0]
        obj = next((o for c, o in CLAIMS if c == claim), None)
        return "YES\nsupported" if obj and obj in source else "NO\nnot in source"
    return "YES\nfine"


def _solver(propose_in_round: int | None):
    def reply(messages):
        user = messages[1]["content"]
        r = int(re.search(r"Round (\d+) of", user).group(1)) if "Round" in user and "of" in user else None
        turns = sum(1 for m in messages if m["role"] == "assistant")
        if r is None:  # synthesis-only fallback
            return render_action("finish", findings="nothing conclusive")
        if propose_in_round is not None and r == propose_in_round:
            if turns < 3:
                return render_action("fetch", target=["Kane Cornes", "Chad Cornes", "Nicole Cornes"][turns])
            eids = _eids(messages)
            claims = [(c, eids[i]) for i, (c, _) in enumerate(CLAIMS)]
            return render_action("answer", answer="Graham Cornes", claims=claims)
        if turns == 0:
            return render_action("search", query="Kane Cornes")
        eids = _eids(messages)
        return render_action("finish", findings=f"Kane Cornes page found [{eids[0]}]" if eids else "nothing")
    return reply


def _aggregator(messages):
    return "Context: " + " ".join(f"[{e}]" for e in sorted(set(EID_TOKEN.findall(messages[-1]["content"]))))


def _loop_endpoint(propose_in_round):
    return RoleRouter({
        "solver": _solver(propose_in_round),
        "synthesis": _solver(propose_in_round),
        "verifier": _stub_verifier,
        "extractor": _aggregator,
        "aggregator": _aggregator,
    })


def _tool_kinds(events):
    return [e.kind for e in events if e.kind in ("search", "fetch")]


def test_c08_evidenceloop_control_flow(kane_store, kane_record):
    desc = "EvidenceLoop: round-2 accept stops before round 3; fallback makes no tool calls; claim EIDs match trace digests"
    with criterion(8, desc):
        # (a) proposal verified in round 2
        sandbox = Sandbox(kane_store, [kane_record])
        run = run_evidenceloop(_loop_endpoint(2), LocalSession(sandbox.start(kane_record.id)), LoopConfig())
        trace = run.trace
        labels = [e.payload.get("label") for e in trace.events if e.kind == "marker"]
        assert labels.count("round_start") == 2 and run.rounds_run == 2
        assert "fallback_start" not in labels
        accepted_at = next(i for i, e in enumerate(trace.events) if e.kind == "marker" and e.payload["label"] == "accepted")
        assert _tool_kinds(trace.events[accepted_at:]) == []
        assert trace.final_response.kind == "attempt" and trace.final_response.answer_text == "Graham Cornes"
        assert outcome_from_trace(trace, kane_record).response == ATTEMPT_CORRECT

        # (c) every accepted claim's EID resolves to exactly what the sandbox served
        by_seq = {e.seq: e for e in trace.events}
        assert len(trace.final_response.claims) == 3
        for _text, eid in trace.final_response.claims:
            entry = run.memory.entry(eid)
            served = by_seq[entry.source["seq"]]
            assert served.response_digest == digest(entry.content) == entry.source["digest"]

        # (b) never-proposing endpoint falls back to synthesis without tool calls
        sandbox = Sandbox(kane_store, [kane_record])
        run = run_evidenceloop(_loop_endpoint(None), LocalSession(sandbox.start(kane_record.id)), LoopConfig())
        trace = run.trace
        labels = [e.payload.get("label") for e in trace.events if e.kind == "marker"]
        assert labels.count("round_start") == 3 and run.fallback_used
        fb = next(i for i, e in enumerate(trace.events) if e.kind == "marker" and e.payload["label"] == "fallback_start")
        assert _tool_kinds(trace.events[:fb]) and _tool_kinds(trace.events[fb:]) == []
        assert trace.final_response.kind == "refuse"


# ------------------------------------------------------------------ 9

def test_c09_budget_enforcement(kane_store, kane_record):
    desc = "budget: 41st tool call rejected with budget_exhausted; submit still honoured"
    with criterion(9, desc):
        sandbox = Sandbox(kane_store, [kane_record], budget=40)
        session = LocalSession(sandbox.start(kane_record.id))
        for i in range(40):
            (session.search if i % 2 else session.fetch)("Kane Cornes")
        with pytest.raises(SandboxError) as err:
            session.fetch("Kane Cornes")
        assert err.value.code == "budget_exhausted"
        session.submit(FinalResponse("attempt", "Graham Cornes"))
        trace = session.trace()
        assert trace.status == "answered" and trace.budget_used == 40 and trace.budget_exhausted
        assert trace.events[-2].code == "budget_exhausted"


# ------------------------------------------------------------------ 10

def test_c10_degradation_bookkeeping(kane_store):
    desc = "degradation: |S*| = 3 with 2 clean-evidence failures gives ForgetRate 2/3, LeadAstray 1/3"
    with criterion(10, desc):
        questions = [
            "Who is the father of Kane Cornes?",
            "Who is Kane Cornes's father?",
            "Name the father of Kane Cornes.",
            "Which man fathered Kane Cornes?",
            "Who was Kane Cornes's dad?",
        ]
        oracle = ChainFollowerOracle(kane_store)
        records = [build_question(kane_store, {**KANE_SEED, "question": q}, oracle).record for q in questions]
        sandbox = Sandbox(kane_store, records)
        traces = []
        # three sufficient-but-wrong, one correct, one insufficient refusal
        for rec, answer in zip(records[:3], ["Chad Cornes", "Nicole Cornes", None]):
            s = LocalSession(sandbox.start(rec.id))
            for e in rec.chain.entities[:-1]:
                s.fetch(e)
            s.submit(FinalResponse("attempt", answer) if answer else FinalResponse("refuse"))
            traces.append(s.trace())
        traces.append(run_ground_truth(LocalSession(sandbox.start(records[3].id)), records[3]))
        traces.append(run_refuse_all(LocalSession(sandbox.start(records[4].id))))

        fail_on = set(questions[:2])

        def clean_synthesis(messages):
            q = re.search(r"Question: (.*)", messages[-1]["content"]).group(1)
            if q in fail_on:
                return "<answer>Chad Cornes</answer>"
            return oracle.chat(messages).text

        report, outcomes, _ = score_traces(
            traces, {r.id: r for r in records}, prober=FunctionEndpoint(lambda m: "no idea"),
            degradation_lm=FunctionEndpoint(clean_synthesis),
        )
        assert report.counts["S_star"] == 3
        assert report.forget_rate == 2 / 3
        assert report.lead_astray_rate == 1 / 3
        assert report.degradation["unresolved"] == 0

        # an unresolved call stays out of both rates
        def flaky(messages):
            q = re.search(r"Question: (.*)", messages[-1]["content"]).group(1)
            if q == questions[2]:
                raise EndpointError("down")
            return clean_synthesis(messages)

        report, _, _ = score_traces(traces, {r.id: r for r in records}, degradation_lm=FunctionEndpoint(flaky))
        assert report.forget_rate == 2 / 3 and report.lead_astray_rate == 0
        assert report.degradation["unresolved"] == 1


# ------------------------------------------------------------------ 11

@pytest.mark.skipif(not os.getenv("DS_AGENT_ENDPOINT", "").startswith("http"), reason="no live chat endpoint configured")
def test_c11_live_smoke(tmp_path):
    """Optional: 20 synthetic questions through a real endpoint; only checks the report is complete."""
    desc = "live smoke (optional): 20-question ReAct run scores with every headline metric present"
    with criterion(11, desc):
        store, records = _world_records()
        corpus, recs = tmp_path / "corpus.jsonl", tmp_path / "records.jsonl"
        dump_corpus(store, corpus)
        write_records(records[:20], recs)
        assert main(["eval", "--store", str(corpus), "--records", str(recs), "--agent", "react",
                     "--out", str(tmp_path / "run"), "--parallel", "4"]) == 0
        endpoint = os.environ["DS_AGENT_ENDPOINT"]
        assert main(["score", "--traces", str(tmp_path / "run" / "traces"), "--records", str(recs),
                     "--prober-endpoint", endpoint, "--degradation-endpoint", endpoint,
                     "--model", os.getenv("DS_AGENT_MODEL", ""),
                     "--out", str(tmp_path / "scores.json")]) == 0
        doc = json.loads((tmp_path / "scores.json").read_text())
        for key in ("knowledge_score", "search_score", "gen_score", "gr_f1", "ku_f1", "pass_at_1"):
            assert doc["report"][key] is not None


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
