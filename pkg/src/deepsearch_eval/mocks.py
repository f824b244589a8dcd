"""Deterministic stand-in endpoints for offline builds, CI and the test suite.

``make_endpoint`` understands ``mock:<name>`` specs; anything else is
treated as the base URL of an OpenAI-compatible server.
"""

from __future__ import annotations

import re
from typing import Callable, Iterable, Mapping

from .agents.actions import EID_TOKEN, render_action
from .corpus import CorpusStore
from .errors import EndpointError
from .llm import ChatEndpoint, FunctionEndpoint
from .text import normalize

_ROLE = re.compile(r"^ROLE: (\w+)", re.MULTILINE)
_EVIDENCE_LINE = re.compile(r"^\d+\. (.*)$", re.MULTILINE)


def role_of(messages) -> str:
    system = next((m["content"] for m in messages if m["role"] == "system"), "")
    m = _ROLE.search(system)
    return m.group(1) if m else ""


def _user_text(messages) -> str:
    return next((m["content"] for m in messages if m["role"] == "user"), "")


def _question(messages) -> str:
    text = _user_text(messages)
    m = re.search(r"^Question: (.*)$", text, re.MULTILINE)
    return m.group(1).strip() if m else ""


class RoleRouter(FunctionEndpoint):
    """Dispatch on the ``ROLE: name`` marker of the system prompt."""

    def __init__(self, handlers: Mapping[str, Callable[[list[dict]], str]], default=None, name: str = "router"):
        self.handlers = dict(handlers)
        self.default = default
        super().__init__(self._route, name)

    def _route(self, messages):
        handler = self.handlers.get(role_of(messages), self.default)
        if handler is None:
            raise EndpointError(f"{self.name}: no handler for role {role_of(messages)!r}")
        return handler(messages)


class ChainFollowerOracle(FunctionEndpoint):
    """Oracle that can only answer by following the supplied evidence.

    It starts from the entity named in the question, repeatedly takes the
    evidence sentence found on the current page and moves along its link,
    and answers with wherever the walk ends. With no evidence, or when the
    walk cannot leave the start, it answers ``unknown``; so a chain of
    necessary hops is answered correctly only with every sentence present.
    """

    def __init__(self, store: CorpusStore, name: str = "mock:chain"):
        self.store = store
        self._by_text: dict[str, list[tuple[str, list[str]]]] = {}
        for src, page in store.pages.items():
            for start, end in store.sentence_spans(src):
                targets = [l.target_id for l in page.links if start <= l.char_start and l.char_end <= end]
                self._by_text.setdefault(page.body[start:end], []).append((src, targets))
        super().__init__(self._answer, name)

    def _start(self, question: str) -> str | None:
        q = normalize(question)
        best, best_len = None, 0
        for form, eid in self.store.alias_index.items():
            if len(form) > best_len and re.search(rf"(?<!\w){re.escape(form)}(?!\w)", q):
                best, best_len = eid, len(form)
        return best

    def _answer(self, messages) -> str:
        text = _user_text(messages)
        evidence = _EVIDENCE_LINE.findall(text.split("Evidence:", 1)[1]) if "Evidence:" in text else []
        current = self._start(_question(messages))
        if current is None or not evidence:
            return "<answer>unknown</answer>"
        steps = {}
        for sentence in evidence:
            for src, targets in self._by_text.get(sentence.strip(), []):
                if targets:
                    steps.setdefault(src, targets)
        seen = {current}
        moved = False
        while current in steps:
            fresh = [t for t in steps[current] if t not in seen]
            # prefer a link that the evidence lets us continue from
            nxt = next((t for t in fresh if t in steps), fresh[-1] if fresh else None)
            if nxt is None:
                break
            seen.add(nxt)
            current, moved = nxt, True
        if not moved:
            return "<answer>unknown</answer>"
        return f"<answer>{self.store.page(current).title}</answer>"


class RequiredEvidenceOracle(FunctionEndpoint):
    """Answers ``answer`` exactly when every sentence in ``required`` is among the evidence."""

    def __init__(self, required: Iterable[str], answer: str, name: str = "stub:required"):
        self.required = {s.strip() for s in required}
        self.answer = answer
        super().__init__(self._reply, name)

    def _reply(self, messages) -> str:
        text = _user_text(messages)
        given = {s.strip() for s in _EVIDENCE_LINE.findall(text)}
        return f"<answer>{self.answer}</answer>" if self.required <= given else "<answer>unknown</answer>"


def _refuse(messages) -> str:
    role = role_of(messages)
    if role == "verifier":
        return "NO\nmock verifier rejects everything"
    if role in ("extractor", "aggregator"):
        return ""
    return render_action("refuse", reason="mock agent always refuses")


def _explore(messages) -> str:
    """Search for the question once, then give up citing whatever evidence ids it saw."""
    role = role_of(messages)
    if role == "verifier":
        return "NO\nmock verifier rejects everything"
    if role in ("extractor", "aggregator"):
        body = "\n".join(m["content"] for m in messages if m["role"] == "user")
        eids = sorted(set(EID_TOKEN.findall(body)))
        return "Findings: " + (" ".join(f"[{e}]" for e in eids) or "none")
    turns = sum(1 for m in messages if m["role"] == "assistant")
    if turns == 0 and role in ("react", "solver"):
        return render_action("search", query=_question(messages) or "unknown")
    if role == "react":
        return render_action("refuse", reason="exploration found nothing conclusive")
    seen = sorted(set(EID_TOKEN.findall("\n".join(m["content"] for m in messages if m["role"] == "user"))))
    return render_action("finish", findings="searched the question " + " ".join(f"[{e}]" for e in seen))


MOCKS = ("mock:chain", "mock:refuse", "mock:explore")


def make_endpoint(spec: str, model: str = "", store: CorpusStore | None = None, **params):
    """Endpoint from a CLI spec: ``mock:chain``, ``mock:refuse``, ``mock:explore`` or an http(s) URL."""
    if spec == "mock:chain":
        if store is None:
            raise ValueError("mock:chain needs a corpus store")
        return ChainFollowerOracle(store)
    if spec == "mock:refuse":
        return FunctionEndpoint(_refuse, spec)
    if spec == "mock:explore":
        return FunctionEndpoint(_explore, spec)
    if spec.startswith("mock:"):
        raise ValueError(f"unknown mock endpoint {spec!r}; choose from {', '.join(MOCKS)}")
    if not spec.startswith(("http://", "https://")):
        raise ValueError(f"endpoint must be an http(s) URL or one of {', '.join(MOCKS)}: {spec!r}")
    return ChatEndpoint(spec, model or "default", **params)
