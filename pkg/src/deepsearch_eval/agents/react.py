"""ReAct baseline: one model, one transcript, tool calls until answer or refusal."""

from __future__ import annotations

import logging
from typing import Callable

from ..errors import EndpointError, SandboxError
from ..sandbox import BUDGET_EXHAUSTED, FinalResponse, Trace
from .actions import ActionParseError, grammar_help, parse_action
from .common import approx_tokens, fit_context, render_content

log = logging.getLogger(__name__)

ALLOWED = ("search", "fetch", "answer", "refuse")
MAX_PARSE_FAILURES = 3
DEFAULT_CONTEXT_TOKENS = 32_000

SYSTEM = """ROLE: react
You are a research agent answering a question with a sandboxed encyclopedia.
Search for pages, fetch them, follow the links you discover, and answer only
when the evidence supports it. Some names are hidden as [UNKNOWN] until you
visit the page that mentions them. If the evidence is insufficient, refuse.

{grammar}"""


def run_react(
    endpoint,
    session,
    max_calls: int = 40,
    context_tokens: int = DEFAULT_CONTEXT_TOKENS,
    count_tokens: Callable[[str], int] = approx_tokens,
    diagnostics: list | None = None,
) -> Trace:
    """Drive one episode to completion and return its trace.

    The episode always ends with a submit: a refusal is forced after three
    consecutive unparseable turns, on endpoint failure, or when the turn
    cap (``max_calls`` plus a small grace for answering) runs out.
    """
    notes = diagnostics if diagnostics is not None else []
    messages = [
        {"role": "system", "content": SYSTEM.format(grammar=grammar_help(ALLOWED))},
        {"role": "user", "content": f"Question: {session.question}"},
    ]
    observations: list[int] = []
    failures = 0
    final: FinalResponse | None = None

    for _turn in range(max_calls + MAX_PARSE_FAILURES + 5):
        fit_context(messages, observations, context_tokens, count_tokens)
        try:
            reply = endpoint.chat(messages).text
        except EndpointError as exc:
            notes.append(f"endpoint failure: {exc}")
            final = FinalResponse("refuse")
            break
        messages.append({"role": "assistant", "content": reply})
        try:
            action = parse_action(reply, ALLOWED)
        except ActionParseError as exc:
            failures += 1
            if failures >= MAX_PARSE_FAILURES:
                notes.append(f"forced refuse after {failures} unparseable turns: {exc}")
                final = FinalResponse("refuse")
                break
            messages.append({"role": "user", "content": f"Your reply could not be parsed ({exc}). "
                             "Reply again and end with exactly one action block."})
            continue
        failures = 0

        if action.name == "answer":
            final = FinalResponse("attempt", action.get("answer"))
            break
        if action.name == "refuse":
            final = FinalResponse("refuse")
            break

        try:
            if action.name == "search":
                result = session.search(action.get("query"), int(action.get("k", "5")))
            else:
                result = session.fetch(action.get("target"))
            obs = render_content(result.content)
        except SandboxError as exc:
            obs = f"ERROR {exc.code}: {exc}"
            if exc.code == BUDGET_EXHAUSTED:
                obs += "\nNo tool calls remain. Reply with an answer or refuse action now."
        messages.append({"role": "user", "content": f"Observation:\n{obs}"})
        observations.append(len(messages) - 1)
    else:
        notes.append("forced refuse: turn limit reached without a final action")
        final = FinalResponse("refuse")

    session.submit(final)
    return session.trace()
