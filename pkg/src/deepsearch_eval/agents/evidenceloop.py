"""Iterative multi-solver controller with evidence memory and claim verification.

Each round runs ``n_solvers`` solvers against the shared episode. Every
search/fetch result lands in :class:`EvidenceMemory` under a fresh EID.
A solver may propose an answer backed by EID-cited claims; the verifier
checks it and the first accepted proposal ends the episode. Otherwise the
round's output is distilled (extraction) and folded into the next round's
context (aggregation). After the last round a synthesis-only solver gets
the consolidated context and may only retrieve from memory.
"""

from __future__ import annotations

import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from ..errors import EndpointError, SandboxError, UnknownEIDError
from ..sandbox import BUDGET_EXHAUSTED, FinalResponse, Trace
from .actions import EID_TOKEN, ActionParseError, grammar_help, parse_action
from .common import render_content
from .memory import EvidenceMemory

log = logging.getLogger(__name__)

SOLVER_ACTIONS = ("search", "fetch", "retrieve", "answer", "finish", "refuse")
SYNTHESIS_ACTIONS = ("retrieve", "answer", "finish", "refuse")
MAX_PARSE_FAILURES = 3

SOLVER_SYSTEM = """ROLE: solver
You explore a sandboxed encyclopedia to answer a question. Names hidden as
[UNKNOWN] appear once you visit the page that mentions them. Every search or
fetch result is stored under an evidence id shown as [EID-nnn]; retrieve
brings back the full stored content. To propose an answer, split it into
atomic claims, each citing the EID that supports it. If you cannot finish,
end with your findings, citing EIDs.

{grammar}"""

SYNTHESIS_SYSTEM = """ROLE: synthesis
No more searching is possible. Using only the context and stored evidence
(retrieve by EID), propose an answer backed by EID-cited claims, or finish
if the evidence does not determine the answer.

{grammar}"""

EXTRACT_SYSTEM = """ROLE: extractor
Distill the solver reports below into key findings, entity references and
promising paths. Keep every [EID-nnn] marker you rely on exactly as written.
Drop dead ends."""

AGGREGATE_SYSTEM = """ROLE: aggregator
Merge the previous context with the new findings into a concise refined
context for the next search round. Keep [EID-nnn] markers verbatim and
discard noise."""

VERIFY_SYSTEM = """ROLE: verifier
Answer YES or NO on the first line, then give a one-line reason."""


@dataclass(frozen=True)
class LoopConfig:
    n_solvers: int = 3
    max_rounds: int = 3
    action_budget: int | None = None
    episode_budget: int = 40
    concurrent: bool = True

    def __post_init__(self):
        if self.n_solvers < 1 or self.max_rounds < 1:
            raise ValueError("n_solvers and max_rounds must be >= 1")
        if self.action_budget is not None and self.action_budget < 1:
            raise ValueError("action_budget must be >= 1")
        if self.budget < 1:
            raise ValueError("episode budget too small for this breadth/iteration setting")

    @property
    def budget(self) -> int:
        """Per-solver action budget; defaults to an even split of the episode budget."""
        if self.action_budget is not None:
            return self.action_budget
        return self.episode_budget // (self.n_solvers * self.max_rounds)


@dataclass(frozen=True)
class Context:
    round: int = 0
    text: str = ""


@dataclass
class Verdict:
    accepted: bool
    feedback: str = ""
    check: str = ""
    claim_index: int | None = None
    transcript: list = field(default_factory=list)


@dataclass
class SolverResult:
    kind: str  # proposal | findings
    answer: str = ""
    claims: list[tuple[str, str]] = field(default_factory=list)
    findings: str = ""
    report: str = ""
    eids: list[str] = field(default_factory=list)
    accepted: bool = False
    error: str = ""


class _Stopped(Exception):
    pass


class _Controller:
    """Serializes tool actions across solvers and records the first accepted proposal."""

    def __init__(self):
        self.lock = threading.Lock()
        self.stopped = False
        self.winner: SolverResult | None = None

    def accept(self, result: SolverResult, session) -> bool:
        # The marker is written under the tool lock, so no search/fetch can land after it.
        with self.lock:
            if self.stopped:
                return False
            self.stopped = True
            self.winner = result
            session.mark("accepted", answer=result.answer)
            return True


def _yes(text: str) -> bool:
    first = text.strip().splitlines()[0] if text.strip() else ""
    return first.strip().strip("*").upper().startswith("YES")


def _reason(text: str) -> str:
    lines = text.strip().splitlines()
    return " ".join(l.strip() for l in lines[1:]) or (lines[0] if lines else "")


def verify_proposal(endpoint, memory: EvidenceMemory, question: str, answer: str, claims) -> Verdict:
    """Check claim entailment, claim-to-answer derivation and question fit, in that order."""
    transcript: list = []
    if not claims:
        return Verdict(False, "proposal has no claims", "claims")

    def ask(prompt: str) -> str:
        messages = [{"role": "system", "content": VERIFY_SYSTEM}, {"role": "user", "content": prompt}]
        reply = endpoint.chat(messages).text
        transcript.append({"prompt": prompt, "reply": reply})
        return reply

    try:
        for j, (text, eid) in enumerate(claims):
            try:
                source = render_content(memory.retrieve(eid))
            except UnknownEIDError:
                return Verdict(False, f"claim {j}: unknown EID {eid}", "entailment", j, transcript)
            reply = ask(f"Source [{eid}]:\n{source}\n\nClaim: {text}\n\nDoes the source entail the claim?")
            if not _yes(reply):
                return Verdict(False, f"claim {j} is not supported by {eid}: {_reason(reply)}", "entailment", j, transcript)
        listing = "\n".join(f"- {t} [{e}]" for t, e in claims)
        reply = ask(f"Claims:\n{listing}\n\nProposed answer: {answer}\n\nDo the claims together establish the answer?")
        if not _yes(reply):
            return Verdict(False, f"claims do not establish the answer: {_reason(reply)}", "derivation", None, transcript)
        reply = ask(f"Question: {question}\nProposed answer: {answer}\n\nDoes the answer directly address the question?")
        if not _yes(reply):
            return Verdict(False, f"answer does not address the question: {_reason(reply)}", "relevance", None, transcript)
    except EndpointError as exc:
        return Verdict(False, f"verification unavailable: {exc}", "transport", None, transcript)
    return Verdict(True, "", "", None, transcript)


def run_solver(
    endpoint,
    session,
    context: Context,
    memory: EvidenceMemory,
    budget: int,
    verifier=None,
    controller: _Controller | None = None,
    synthesis_only: bool = False,
    round_label: str = "",
) -> SolverResult:
    """Run one solver until it proposes an accepted answer, finishes, or runs out of budget."""
    verifier = verifier or endpoint
    controller = controller or _Controller()
    allowed = SYNTHESIS_ACTIONS if synthesis_only else SOLVER_ACTIONS
    system = (SYNTHESIS_SYSTEM if synthesis_only else SOLVER_SYSTEM).format(grammar=grammar_help(allowed))
    user = f"Question: {session.question}\n"
    if round_label:
        user += f"{round_label}\n"
    user += f"\nContext from earlier rounds:\n{context.text or '(none)'}\n\nYou may take up to {budget} actions."
    messages = [{"role": "system", "content": system}, {"role": "user", "content": user}]
    eids: list[str] = []
    used = 0
    failures = 0

    def report(extra: str = "") -> str:
        reasoning = [m["content"] for m in messages if m["role"] == "assistant"]
        seen = ", ".join(eids) or "none"
        return "\n".join(reasoning + [f"Evidence seen: {seen}", extra]).strip()

    def findings(text: str = "", error: str = "") -> SolverResult:
        return SolverResult("findings", findings=text, report=report(text), eids=list(eids), error=error)

    for _turn in range(budget + MAX_PARSE_FAILURES + 4):
        if controller.stopped:
            return findings(error="stopped")
        try:
            reply = endpoint.chat(messages).text
        except EndpointError as exc:
            return findings(error=f"endpoint failure: {exc}")
        messages.append({"role": "assistant", "content": reply})
        try:
            action = parse_action(reply, allowed)
        except ActionParseError as exc:
            failures += 1
            if failures >= MAX_PARSE_FAILURES:
                return findings(error=f"unparseable output: {exc}")
            messages.append({"role": "user", "content": f"Your reply could not be parsed ({exc}). "
                             "End with exactly one action block."})
            continue
        failures = 0

        if action.name == "finish":
            return findings(action.get("findings"))
        if action.name == "refuse":
            return findings(action.get("reason"))

        if action.name == "answer":
            answer = action.get("answer")
            verdict = verify_proposal(verifier, memory, session.question, answer, action.claims)
            session.mark("verification", accepted=verdict.accepted, check=verdict.check)
            if verdict.accepted:
                result = SolverResult("proposal", answer, list(action.claims), report=report(), eids=list(eids))
                result.accepted = controller.accept(result, session)
                if not result.accepted:
                    result.error = "another solver was accepted first"
                return result
            messages.append({"role": "user", "content": f"Verification rejected the proposal: {verdict.feedback}"})
            continue

        if used >= budget:
            return findings(error="action budget exhausted")
        used += 1

        if action.name == "retrieve":
            eid = action.get("eid").strip()
            try:
                content = memory.retrieve(eid)
            except UnknownEIDError as exc:
                obs = f"ERROR: {exc}"
            else:
                try:
                    session.record_retrieve(eid, content)
                except SandboxError:
                    pass
                obs = f"[{eid}] full content:\n{render_content(content)}"
            messages.append({"role": "user", "content": obs})
            continue

        try:
            with controller.lock:
                if controller.stopped:
                    raise _Stopped
                if action.name == "search":
                    res = session.search(action.get("query"), int(action.get("k", "5")))
                    payload = {"query": action.get("query")}
                else:
                    res = session.fetch(action.get("target"))
                    payload = {"target": action.get("target")}
        except _Stopped:
            return findings(error="stopped")
        except SandboxError as exc:
            if exc.code == BUDGET_EXHAUSTED:
                return findings(error="episode budget exhausted")
            messages.append({"role": "user", "content": f"ERROR {exc.code}: {exc}"})
            continue
        eid = memory.store(res.content, {"kind": action.name, **payload, "seq": res.seq, "digest": res.digest})
        eids.append(eid)
        messages.append({"role": "user", "content": f"[{eid}]\n{render_content(res.content)}"})

    return findings(error="turn limit reached")


def _scrub_eids(text: str, memory: EvidenceMemory) -> str:
    """Drop EID markers that do not resolve in memory."""
    text = re.sub(r"\s*\[(EID-\d+)\]", lambda m: m.group(0) if m.group(1) in memory else "", text)
    return EID_TOKEN.sub(lambda m: m.group(0) if m.group(0) in memory else "", text)


def extract_findings(endpoint, outputs: list[SolverResult]) -> tuple[str, bool]:
    """Distill one round's solver reports. Returns ``(findings, flagged)``."""
    reports = [o.report for o in outputs if o.report.strip()]
    if not reports:
        return "", True
    joined = "\n\n".join(f"Solver {i + 1}:\n{r}" for i, r in enumerate(reports))
    messages = [{"role": "system", "content": EXTRACT_SYSTEM}, {"role": "user", "content": joined}]
    try:
        return endpoint.chat(messages).text.strip(), False
    except EndpointError as exc:
        log.warning("extraction failed, passing reports through: %s", exc)
        return joined, True


def aggregate_context(endpoint, findings: str, previous: Context, memory: EvidenceMemory) -> tuple[Context, bool]:
    """Fold ``findings`` into ``previous``; unresolvable EID markers are removed."""
    prompt = f"Previous context:\n{previous.text or '(none)'}\n\nNew findings:\n{findings or '(none)'}"
    messages = [{"role": "system", "content": AGGREGATE_SYSTEM}, {"role": "user", "content": prompt}]
    flagged = False
    try:
        text = endpoint.chat(messages).text.strip()
    except EndpointError as exc:
        log.warning("aggregation failed, concatenating: %s", exc)
        text = "\n\n".join(t for t in (previous.text, findings) if t)
        flagged = True
    return Context(previous.round + 1, _scrub_eids(text, memory)), flagged


@dataclass
class LoopRun:
    trace: Trace
    rounds_run: int
    accepted: bool
    fallback_used: bool
    memory: EvidenceMemory
    contexts: list[Context]
    flags: list[str]


def run_evidenceloop(endpoint, session, config: LoopConfig = LoopConfig(), verifier=None) -> LoopRun:
    memory = EvidenceMemory()
    controller = _Controller()
    context = Context()
    contexts = [context]
    all_findings: list[str] = []
    flags: list[str] = []
    budget = config.budget
    rounds_run = 0

    for r in range(config.max_rounds):
        rounds_run = r + 1
        session.mark("round_start", round=r + 1)
        label = f"Round {r + 1} of {config.max_rounds}"

        def solve(_i, ctx=context, label=label):
            return run_solver(endpoint, session, ctx, memory, budget, verifier, controller, round_label=label)

        if config.concurrent and config.n_solvers > 1:
            with ThreadPoolExecutor(max_workers=config.n_solvers) as pool:
                outputs = list(pool.map(solve, range(config.n_solvers)))
        else:
            outputs = []
            for i in range(config.n_solvers):
                outputs.append(solve(i))
                if controller.stopped:
                    break
        session.mark("round_end", round=r + 1)

        if controller.winner is not None:
            win = controller.winner
            session.submit(FinalResponse("attempt", win.answer, tuple(win.claims)))
            return LoopRun(session.trace(), rounds_run, True, False, memory, contexts, flags)

        found, flagged = extract_findings(endpoint, outputs)
        if flagged:
            flags.append(f"round {r + 1}: extraction fallback")
        all_findings.append(found)
        context, flagged = aggregate_context(endpoint, found, context, memory)
        if flagged:
            flags.append(f"round {r + 1}: aggregation fallback")
        contexts.append(context)

    session.mark("fallback_start")
    merged = "\n\n".join(f"Round {i + 1}:\n{f}" for i, f in enumerate(all_findings) if f)
    final_ctx, flagged = aggregate_context(endpoint, merged, Context(config.max_rounds, ""), memory)
    if flagged:
        flags.append("final aggregation fallback")
    contexts.append(final_ctx)
    result = run_solver(
        endpoint, session, final_ctx, memory, budget, verifier, controller, synthesis_only=True,
        round_label="Final synthesis",
    )
    if result.kind == "proposal" and result.accepted:
        session.submit(FinalResponse("attempt", result.answer, tuple(result.claims)))
        accepted = True
    else:
        session.submit(FinalResponse("refuse"))
        accepted = False
    return LoopRun(session.trace(), rounds_run, accepted, True, memory, contexts, flags)
