"""Episode lifecycle and the agent-facing tool API (search, fetch, submit)."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .chainbuilder import QuestionRecord
from .corpus import CorpusStore, resolve_entity
from .errors import SandboxError
from .masking import (
    PLACEHOLDER,
    MaskPolicy,
    build_policy,
    is_fetchable,
    mask_text,
    unlocked_entities,
    visible_links,
)
from .text import tokenize

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_BUDGET = 40
TOOL_KINDS = ("search", "fetch")
SNIPPET_CHARS = 240

BUDGET_EXHAUSTED = "budget_exhausted"
NOT_FOUND = "not_found"
CLOSED = "closed"


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def digest(content: str) -> str:
    return hashlib.sha256(content.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class FinalResponse:
    kind: str  # attempt | refuse
    answer_text: str = ""
    claims: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.kind not in ("attempt", "refuse"):
            raise ValueError(f"unknown response kind {self.kind!r}")
        if self.kind == "attempt" and not self.answer_text.strip():
            raise ValueError("an attempt needs a non-empty answer")
        object.__setattr__(self, "claims", tuple(tuple(c) for c in self.claims))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "answer_text": self.answer_text, "claims": [list(c) for c in self.claims]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FinalResponse":
        return cls(d["kind"], d.get("answer_text", "") or "", tuple(tuple(c) for c in d.get("claims", ())))


@dataclass(frozen=True)
class ActionEvent:
    seq: int
    kind: str  # search | fetch | submit | retrieve | marker
    payload: dict
    ok: bool
    code: str | None
    response: str
    response_digest: str

    @property
    def timestamp(self) -> int:
        return self.seq

    @property
    def counts_against_budget(self) -> bool:
        return self.kind in TOOL_KINDS and self.code != BUDGET_EXHAUSTED

    def to_dict(self) -> dict:
        return {
            "type": "event",
            "seq": self.seq,
            "timestamp": self.seq,
            "kind": self.kind,
            "payload": self.payload,
            "ok": self.ok,
            "code": self.code,
            "response": self.response,
            "response_digest": self.response_digest,
            "response_chars": len(self.response),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ActionEvent":
        return cls(d["seq"], d["kind"], d["payload"], d["ok"], d["code"], d["response"], d["response_digest"])


@dataclass(frozen=True)
class ToolResult:
    content: str
    digest: str
    seq: int

    @property
    def data(self) -> dict:
        return json.loads(self.content)


@dataclass
class Trace:
    episode_id: str
    question_id: str
    budget: int
    events: list[ActionEvent]
    visited: list[str]
    status: str
    final_response: FinalResponse | None
    format_version: int = FORMAT_VERSION

    @property
    def tool_events(self) -> list[ActionEvent]:
        return [e for e in self.events if e.counts_against_budget]

    @property
    def budget_used(self) -> int:
        return len(self.tool_events)

    @property
    def budget_exhausted(self) -> bool:
        return any(e.code == BUDGET_EXHAUSTED for e in self.events)

    @property
    def submitted(self) -> bool:
        return self.final_response is not None

    def header(self) -> dict:
        return {
            "type": "header",
            "format_version": self.format_version,
            "episode_id": self.episode_id,
            "question_id": self.question_id,
            "budget": self.budget,
        }

    def footer(self) -> dict:
        return {
            "type": "final",
            "status": self.status,
            "visited": self.visited,
            "final_response": self.final_response.to_dict() if self.final_response else None,
            "budget_used": self.budget_used,
            "budget_remaining": self.budget - self.budget_used,
            "budget_exhausted": self.budget_exhausted,
            "scored_as_refuse_without_submit": self.final_response is None,
        }

    def to_jsonl(self) -> str:
        rows = [self.header()] + [e.to_dict() for e in self.events] + [self.footer()]
        return "".join(canonical_json(r) + "\n" for r in rows)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        head = next(r for r in rows if r["type"] == "header")
        foot = next((r for r in rows if r["type"] == "final"), None)
        events = [ActionEvent.from_dict(r) for r in rows if r["type"] == "event"]
        for ev in events:
            if digest(ev.response) != ev.response_digest:
                raise ValueError(f"event {ev.seq}: digest does not match stored response")
        final = foot and foot.get("final_response")
        return cls(
            episode_id=head["episode_id"],
            question_id=head["question_id"],
            budget=head["budget"],
            events=events,
            visited=list(foot["visited"]) if foot else [],
            status=foot["status"] if foot else "open",
            final_response=FinalResponse.from_dict(final) if final else None,
            format_version=head.get("format_version", FORMAT_VERSION),
        )

    @classmethod
    def read(cls, path: str | Path) -> "Trace":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


@dataclass
class Episode:
    episode_id: str
    record: QuestionRecord
    store: CorpusStore
    policy: MaskPolicy
    budget: int = DEFAULT_BUDGET
    visited: list[str] = field(default_factory=list)
    unlocked: set[str] = field(default_factory=set)
    actions: list[ActionEvent] = field(default_factory=list)
    status: str = "open"  # open | exhausted | answered | refused | abandoned
    final: FinalResponse | None = None
    sink: Path | None = None
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    @property
    def budget_remaining(self) -> int:
        return self.budget - sum(1 for a in self.actions if a.counts_against_budget)

    @property
    def closed(self) -> bool:
        return self.status in ("answered", "refused", "abandoned")

    def _log(self, kind: str, payload: dict, response: dict, ok: bool = True, code: str | None = None) -> ActionEvent:
        content = canonical_json({"format_version": FORMAT_VERSION, **response})
        ev = ActionEvent(len(self.actions) + 1, kind, payload, ok, code, content, digest(content))
        self.actions.append(ev)
        if self.sink is not None:
            with open(self.sink, "a", encoding="utf-8") as fh:
                fh.write(canonical_json(ev.to_dict()) + "\n")
        return ev

    def _fail(self, kind: str, payload: dict, code: str, message: str) -> SandboxError:
        self._log(kind, payload, {"error": {"code": code, "message": message}}, ok=False, code=code)
        return SandboxError(code, message)

    def _admit_tool(self, kind: str, payload: dict) -> None:
        if self.closed:
            raise SandboxError(CLOSED, "episode is closed")
        if self.budget_remaining <= 0:
            self.status = "exhausted"
            raise self._fail(kind, payload, BUDGET_EXHAUSTED, "tool budget exhausted; submit remains available")

    def trace(self) -> Trace:
        return Trace(
            episode_id=self.episode_id,
            question_id=self.record.id,
            budget=self.budget,
            events=list(self.actions),
            visited=list(self.visited),
            status=self.status,
            final_response=self.final,
        )


_episode_counter = itertools.count(1)


def start_episode(
    store: CorpusStore,
    record: QuestionRecord,
    budget: int = DEFAULT_BUDGET,
    allow_unverified: bool = False,
    episode_id: str | None = None,
    trace_path: str | Path | None = None,
) -> Episode:
    if not record.verified and not allow_unverified:
        raise SandboxError("unverified", f"record {record.id} has not passed verification")
    if budget < 1:
        raise ValueError("budget must be positive")
    policy = build_policy(store, record.chain)
    ep = Episode(
        episode_id=episode_id or f"{record.id}-ep{next(_episode_counter)}",
        record=record,
        store=store,
        policy=policy,
        budget=budget,
        unlocked=unlocked_entities(policy, set()),
        sink=Path(trace_path) if trace_path else None,
    )
    if ep.sink is not None:
        ep.sink.write_text(canonical_json(ep.trace().header()) + "\n", encoding="utf-8")
    return ep


def _snippet(masked: str, query_tokens: set[str]) -> str:
    lowered = masked.casefold()
    hit = None
    for m in re.finditer(r"\w+", lowered):
        if m.group() in query_tokens:
            hit = m.start()
            break
    if hit is None:
        return masked[:SNIPPET_CHARS]
    start = max(0, hit - SNIPPET_CHARS // 3)
    end = min(len(masked), start + SNIPPET_CHARS)
    # widen so no placeholder is cut in half
    for p in range(max(0, start - len(PLACEHOLDER)), start):
        if masked.startswith(PLACEHOLDER, p) and p + len(PLACEHOLDER) > start:
            start = p
    for p in range(max(0, end - len(PLACEHOLDER)), end):
        if masked.startswith(PLACEHOLDER, p) and p + len(PLACEHOLDER) > end:
            end = p + len(PLACEHOLDER)
    return masked[start:end].strip()


def search(episode: Episode, query: str, k: int = 5) -> ToolResult:
    """BM25 search over the corpus as seen from inside the episode.

    Locked chain pages never appear, snippets are masked without the
    reveal-page exception, and a page whose query matches all sit inside
    masked spans is dropped.
    """
    with episode.lock:
        payload = {"query": query, "k": k}
        episode._admit_tool("search", payload)
        store, policy, unlocked = episode.store, episode.policy, episode.unlocked
        q = tokenize(query)
        qset = set(q)
        scored = []
        for doc_id in store.index.candidates(q):
            if doc_id in policy.masked_entities and doc_id not in unlocked:
                continue
            masked = mask_text(store.page(doc_id).body, policy, unlocked)
            toks = tokenize(masked.replace(PLACEHOLDER, " "))
            tf: dict[str, int] = {}
            for t in toks:
                if t in qset:
                    tf[t] = tf.get(t, 0) + 1
            if not tf:
                continue
            score = store.index.score_counts(q, tf, len(toks))
            scored.append((-score, doc_id, masked))
        scored.sort()
        results = [
            {
                "title": mask_text(store.page(doc_id).title, policy, unlocked),
                "snippet": _snippet(masked, qset),
                "handle": doc_id,
            }
            for _, doc_id, masked in scored[: max(0, k)]
        ]
        ev = episode._log("search", payload, {"results": results})
        return ToolResult(ev.response, ev.response_digest, ev.seq)


def _resolve_target(episode: Episode, target: str) -> str | None:
    if target in episode.store:
        return target
    return resolve_entity(episode.store, target)


def fetch(episode: Episode, target: str) -> ToolResult:
    """Serve a masked page view. Locked and unknown targets are both ``not_found``."""
    with episode.lock:
        payload = {"target": target}
        episode._admit_tool("fetch", payload)
        eid = _resolve_target(episode, target)
        if eid is None or not is_fetchable(eid, episode.policy, episode.unlocked):
            raise episode._fail("fetch", payload, NOT_FOUND, "page not found")
        if eid not in episode.visited:
            episode.visited.append(eid)
        episode.unlocked = unlocked_entities(episode.policy, set(episode.visited))
        page = episode.store.page(eid)
        policy, unlocked = episode.policy, episode.unlocked
        view = {
            "handle": eid,
            "title": mask_text(page.title, policy, unlocked, context_page=eid),
            "text": mask_text(page.body, policy, unlocked, context_page=eid),
            "links": visible_links(page, policy, unlocked, episode.store, context_page=eid),
        }
        ev = episode._log("fetch", payload, view)
        return ToolResult(ev.response, ev.response_digest, ev.seq)


def record_retrieve(
    episode: Episode, eid: str, content: str | None = None, content_digest: str | None = None
) -> ActionEvent:
    """Log an agent-side memory retrieval; it does not consume tool budget.

    Remote clients send only the digest of what they retrieved.
    """
    if content_digest is None:
        if content is None:
            raise ValueError("record_retrieve needs content or content_digest")
        content_digest = digest(content)
    with episode.lock:
        if episode.closed:
            raise SandboxError(CLOSED, "episode is closed")
        return episode._log("retrieve", {"eid": eid}, {"eid": eid, "content_digest": content_digest})


def mark(episode: Episode, label: str, **info: Any) -> ActionEvent:
    """Append a non-tool marker event (e.g. controller round boundaries)."""
    with episode.lock:
        if episode.closed:
            raise SandboxError(CLOSED, "episode is closed")
        return episode._log("marker", {"label": label, **info}, {"marker": label})


def submit(episode: Episode, response: FinalResponse) -> Episode:
    with episode.lock:
        if episode.closed:
            raise SandboxError(CLOSED, "episode already submitted")
        episode.final = response
        episode.status = "answered" if response.kind == "attempt" else "refused"
        episode._log("submit", {"response": response.to_dict()}, {"status": episode.status})
        _flush_footer(episode)
        return episode


def abandon(episode: Episode) -> Episode:
    """Close an episode that never submitted; scoring treats it as a refusal."""
    with episode.lock:
        if not episode.closed:
            episode.status = "abandoned"
            _flush_footer(episode)
        return episode


def _flush_footer(episode: Episode) -> None:
    if episode.sink is not None:
        with open(episode.sink, "a", encoding="utf-8") as fh:
            fh.write(canonical_json(episode.trace().footer()) + "\n")


def export_trace(episode: Episode) -> Trace:
    with episode.lock:
        if not episode.closed:
            raise SandboxError("open", "episode is still open")
        return episode.trace()


def replay_trace(trace: Trace, store: CorpusStore, record: QuestionRecord) -> Trace:
    """Re-run a trace's tool actions against ``store`` and return the new trace."""
    ep = start_episode(store, record, budget=trace.budget, allow_unverified=True, episode_id=trace.episode_id)
    for ev in trace.events:
        try:
            if ev.kind == "search":
                search(ep, ev.payload["query"], ev.payload["k"])
            elif ev.kind == "fetch":
                fetch(ep, ev.payload["target"])
            elif ev.kind == "marker":
                info = {k: v for k, v in ev.payload.items() if k != "label"}
                mark(ep, ev.payload["label"], **info)
            elif ev.kind == "retrieve":
                resp = json.loads(ev.response)
                resp.pop("format_version", None)
                with ep.lock:
                    ep._log("retrieve", ev.payload, resp)
        except SandboxError:
            pass
    if trace.final_response is not None:
        submit(ep, trace.final_response)
    else:
        abandon(ep)
    return ep.trace()


class Sandbox:
    """Registry of concurrent episodes over one corpus and record set."""

    def __init__(
        self,
        store: CorpusStore,
        records: Iterable[QuestionRecord],
        budget: int = DEFAULT_BUDGET,
        allow_unverified: bool = False,
        trace_dir: str | Path | None = None,
    ):
        self.store = store
        self.records = {r.id: r for r in records}
        self.budget = budget
        self.allow_unverified = allow_unverified
        self.trace_dir = Path(trace_dir) if trace_dir else None
        if self.trace_dir is not None:
            self.trace_dir.mkdir(parents=True, exist_ok=True)
        self.episodes: dict[str, Episode] = {}
        self._per_record: dict[str, int] = {}
        self._lock = threading.Lock()

    def start(self, question_id: str, budget: int | None = None) -> Episode:
        record = self.records.get(question_id)
        if record is None:
            raise SandboxError("unknown_question", f"no record {question_id!r}")
        with self._lock:
            n = self._per_record.get(question_id, 0) + 1
            self._per_record[question_id] = n
            episode_id = f"{question_id}-ep{n}"
        path = self.trace_dir / f"{episode_id}.jsonl" if self.trace_dir else None
        ep = start_episode(
            self.store, record, budget or self.budget, self.allow_unverified, episode_id, path
        )
        with self._lock:
            self.episodes[episode_id] = ep
        return ep

    def get(self, episode_id: str) -> Episode:
        try:
            return self.episodes[episode_id]
        except KeyError:
            raise SandboxError("unknown_episode", f"no episode {episode_id!r}") from None

    def shutdown(self) -> list[Trace]:
        """Close every open episode as abandoned and return their traces."""
        out = []
        for ep in list(self.episodes.values()):
            if not ep.closed:
                abandon(ep)
                out.append(ep.trace())
        return out


class LocalSession:
    """In-process handle on one episode; agents talk to this or to ``RemoteSession``."""

    def __init__(self, episode: Episode):
        self.episode = episode

    @property
    def question(self) -> str:
        return self.episode.record.question

    def search(self, query: str, k: int = 5) -> ToolResult:
        return search(self.episode, query, k)

    def fetch(self, target: str) -> ToolResult:
        return fetch(self.episode, target)

    def submit(self, response: FinalResponse) -> None:
        submit(self.episode, response)

    def record_retrieve(self, eid: str, content: str) -> None:
        record_retrieve(self.episode, eid, content)

    def mark(self, label: str, **info: Any) -> None:
        mark(self.episode, label, **info)

    def budget_remaining(self) -> int:
        return self.episode.budget_remaining

    def trace(self) -> Trace:
        if not self.episode.closed:
            abandon(self.episode)
        return export_trace(self.episode)
