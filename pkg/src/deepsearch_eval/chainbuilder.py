"""Turn (start entity, question, answer) seeds into verified multi-hop records."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean
from typing import Any, Iterable, Mapping, Sequence

from .corpus import CorpusStore, EvidenceSentence, evidence_sentence, resolve_entity
from .errors import (
    ChainError,
    DegenerateProbeError,
    DegenerateQueryError,
    EndpointError,
    InvalidRecordError,
    NoLinkingSentenceError,
    UnknownEntityError,
    VerificationIncomplete,
)
from .text import matches_answer, normalize, tokenize

log = logging.getLogger(__name__)

BLANK = "____"

ORACLE_SYSTEM = (
    "Answer the question with the name of a single entity inside <answer></answer> tags. "
    "If you cannot determine the answer, reply <answer>unknown</answer>."
)


@dataclass(frozen=True)
class Chain:
    entities: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        if len(self.entities) < 3:
            raise ValueError("a chain needs at least two hops")
        if len(set(self.entities)) != len(self.entities):
            raise ValueError("chain entities must not repeat")

    @property
    def hop_count(self) -> int:
        return len(self.entities) - 1

    def __getitem__(self, i):
        return self.entities[i]

    def __len__(self):
        return len(self.entities)

    def __iter__(self):
        return iter(self.entities)


@dataclass(frozen=True)
class ProbeQuery:
    prompt: str
    expected_entity: str
    expected_aliases: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "expected_entity": self.expected_entity,
            "expected_aliases": list(self.expected_aliases),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ProbeQuery":
        return cls(d["prompt"], d["expected_entity"], tuple(d["expected_aliases"]))


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    question: str
    start_entity: str
    answer_entity: str
    answer_aliases: tuple[str, ...]
    chain: Chain
    evidence: tuple[EvidenceSentence, ...]
    probes: tuple[ProbeQuery, ...]
    verified: bool = False

    @property
    def hop_count(self) -> int:
        return self.chain.hop_count

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "id": self.id,
            "question": self.question,
            "start_entity": self.start_entity,
            "answer_entity": self.answer_entity,
            "answer_aliases": list(self.answer_aliases),
            "chain": list(self.chain.entities),
            "hop_count": self.hop_count,
            "evidence": [e.to_dict() for e in self.evidence],
            "probes": [p.to_dict() for p in self.probes],
            "verified": self.verified,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "QuestionRecord":
        return cls(
            id=d["id"],
            question=d["question"],
            start_entity=d["start_entity"],
            answer_entity=d["answer_entity"],
            answer_aliases=tuple(d["answer_aliases"]),
            chain=Chain(tuple(d["chain"])),
            evidence=tuple(EvidenceSentence.from_dict(e) for e in d["evidence"]),
            probes=tuple(ProbeQuery.from_dict(p) for p in d["probes"]),
            verified=bool(d.get("verified", False)),
        )


@dataclass
class VerificationReport:
    parametric_inaccessible: bool
    evidence_sufficient: bool
    necessity: list[bool]
    transcripts: list[dict] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return self.parametric_inaccessible and self.evidence_sufficient and all(self.necessity)

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "parametric_inaccessible": self.parametric_inaccessible,
            "evidence_sufficient": self.evidence_sufficient,
            "necessity": self.necessity,
            "accepted": self.accepted,
            "transcripts": self.transcripts,
        }


def shortest_alternative_path(
    adjacency: Mapping[str, Sequence[str]], v0: str, vn: str, max_hops: int | None = None
) -> list[str] | None:
    """BFS from ``v0`` to ``vn`` with the direct edge ``(v0, vn)`` removed.

    Neighbours are expanded in sorted order, so among equal-length paths the
    lexicographically smallest sequence wins.
    """
    if v0 == vn:
        raise DegenerateQueryError("degenerate query: start equals answer")
    parent: dict[str, str | None] = {v0: None}
    depth = {v0: 0}
    queue = deque([v0])
    while queue:
        u = queue.popleft()
        if max_hops is not None and depth[u] >= max_hops:
            continue
        for w in sorted(adjacency.get(u, ())):
            if u == v0 and w == vn:
                continue
            if w in parent:
                continue
            parent[w] = u
            depth[w] = depth[u] + 1
            if w == vn:
                path = [w]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])
                return path[::-1]
            queue.append(w)
    return None


def find_alternative_chain(
    store: CorpusStore, v0: str, vn: str, max_hops: int | None = None
) -> Chain | None:
    for v in (v0, vn):
        if v not in store:
            raise UnknownEntityError(v)
    path = shortest_alternative_path(store.link_graph, v0, vn, max_hops)
    return Chain(tuple(path)) if path else None


def build_evidence_chain(store: CorpusStore, chain: Chain | Sequence[str]) -> list[EvidenceSentence]:
    """One linking sentence per hop. Also accepts a bare entity sequence (a single hop is fine there)."""
    entities = chain.entities if isinstance(chain, Chain) else tuple(chain)
    out = []
    for i in range(len(entities) - 1):
        try:
            out.append(evidence_sentence(store, entities[i], entities[i + 1]))
        except (NoLinkingSentenceError, UnknownEntityError) as exc:
            raise ChainError(f"hop {i}: {exc}", hop=i) from None
    return out


def alias_pattern(aliases: Iterable[str]) -> re.Pattern | None:
    """Case-insensitive alternation, longest alias first, whitespace-tolerant."""
    forms = sorted({a.strip() for a in aliases if a.strip()}, key=lambda a: (-len(a), a))
    if not forms:
        return None
    parts = [r"\s+".join(re.escape(w) for w in f.split()) for f in forms]
    return re.compile("|".join(parts), re.IGNORECASE)


def make_probe(
    evidence: EvidenceSentence, target_aliases: Sequence[str], expected_aliases: Sequence[str] | None = None
) -> ProbeQuery:
    """Blank every mention of the hop target to form a cloze prompt.

    ``target_aliases`` are the surface forms to blank (aliases plus anchor
    texts); ``expected_aliases`` default to the same list.
    """
    expected = tuple(expected_aliases if expected_aliases is not None else target_aliases)
    pattern = alias_pattern(list(target_aliases) + list(expected))
    if pattern is None:
        raise DegenerateProbeError("degenerate probe: no target aliases")
    prompt, count = pattern.subn(BLANK, evidence.text)
    if count == 0:
        raise DegenerateProbeError("degenerate probe: target not mentioned in evidence")
    prompt = prompt.rstrip().rstrip(".!?").rstrip()
    if not tokenize(prompt.replace(BLANK, " ")):
        raise DegenerateProbeError("degenerate probe: no content words left")
    return ProbeQuery(prompt, evidence.target_id, expected)


def probe_for_hop(store: CorpusStore, evidence: EvidenceSentence) -> ProbeQuery:
    page = store.page(evidence.source_id)
    s, e = evidence.sentence_span
    anchors = [
        l.anchor_text for l in page.links
        if l.target_id == evidence.target_id and s <= l.char_start < e
    ]
    aliases = store.page(evidence.target_id).aliases
    return make_probe(evidence, list(aliases) + anchors, aliases)


def record_id(question: str, v0: str, vn: str, chain: Chain) -> str:
    blob = json.dumps([question, v0, vn, list(chain.entities)], ensure_ascii=False)
    return "q-" + hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def assemble_record(
    question: str,
    v0: str,
    vn: str,
    chain: Chain,
    evidence: Sequence[EvidenceSentence],
    probes: Sequence[ProbeQuery],
    aliases: Sequence[str],
    verified: bool = False,
) -> QuestionRecord:
    if not question.strip():
        raise InvalidRecordError("question", "empty question")
    if chain[0] != v0:
        raise InvalidRecordError("start_entity", "chain does not start at v0")
    if chain[-1] != vn:
        raise InvalidRecordError("answer_entity", "chain does not end at vn")
    if not any(normalize(a) for a in aliases):
        raise InvalidRecordError("answer_aliases", "no usable alias")
    n = chain.hop_count
    if len(evidence) != n:
        raise InvalidRecordError("evidence", f"length {len(evidence)} != hop_count {n}")
    if len(probes) != n:
        raise InvalidRecordError("probes", f"length {len(probes)} != hop_count {n}")
    for i, ev in enumerate(evidence):
        if (ev.source_id, ev.target_id) != (chain[i], chain[i + 1]):
            raise InvalidRecordError(f"evidence[{i}]", "does not link chain[i] -> chain[i+1]")
    for i, pr in enumerate(probes):
        if pr.expected_entity != evidence[i].target_id:
            raise InvalidRecordError(f"probes[{i}]", "does not correspond to evidence[i]")
        low = normalize(pr.prompt)
        if any(normalize(a) and normalize(a) in low for a in pr.expected_aliases):
            raise InvalidRecordError(f"probes[{i}]", "prompt leaks an expected alias")
    return QuestionRecord(
        id=record_id(question, v0, vn, chain),
        question=question,
        start_entity=v0,
        answer_entity=vn,
        answer_aliases=tuple(aliases),
        chain=chain,
        evidence=tuple(evidence),
        probes=tuple(probes),
        verified=verified,
    )


def oracle_messages(question: str, evidence: Sequence[str] = ()) -> list[dict]:
    user = f"Question: {question}"
    if evidence:
        user += "\n\nEvidence:\n" + "\n".join(f"{i}. {e}" for i, e in enumerate(evidence, 1))
    return [{"role": "system", "content": ORACLE_SYSTEM}, {"role": "user", "content": user}]


def verify_question(oracle, record: QuestionRecord) -> VerificationReport:
    """Run the three oracle checks: no parametric shortcut, sufficiency, per-hop necessity.

    Transport failures (after the endpoint's own retry policy) raise
    :class:`VerificationIncomplete`; a partially checked record is never
    reported as accepted.
    """
    transcripts: list[dict] = []
    texts = [e.text for e in record.evidence]

    def ask(check: str, evidence: Sequence[str], hop: int | None = None) -> bool:
        messages = oracle_messages(record.question, evidence)
        try:
            completion = oracle.chat(messages)
        except EndpointError as exc:
            raise VerificationIncomplete(f"verification incomplete ({check}): {exc}") from exc
        text = completion.text
        transcripts.append({"check": check, "hop": hop, "messages": messages, "completion": text})
        return matches_answer(text, record.answer_aliases)

    parametric_inaccessible = not ask("parametric_inaccessibility", [])
    sufficient = ask("evidence_sufficiency", texts)
    necessity = [
        not ask("evidence_necessity", texts[:i] + texts[i + 1:], hop=i)
        for i in range(len(texts))
    ]
    return VerificationReport(parametric_inaccessible, sufficient, necessity, transcripts)


@dataclass
class BuildOutcome:
    seed: dict
    status: str  # accepted | rejected | incomplete | disconnected | error
    reason: str = ""
    record: QuestionRecord | None = None
    report: VerificationReport | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "status": self.status,
            "reason": self.reason,
            "record_id": self.record.id if self.record else None,
            "verification": self.report.to_dict() if self.report else None,
        }


def _entity(store: CorpusStore, ref: str) -> str | None:
    if ref in store:
        return ref
    return resolve_entity(store, ref)


def build_question(
    store: CorpusStore, seed: Mapping[str, str], oracle=None, max_hops: int | None = None
) -> BuildOutcome:
    """Build and (when ``oracle`` is given) verify one record from a seed triple."""
    seed = dict(seed)
    v0, vn = _entity(store, seed.get("v0", "")), _entity(store, seed.get("vn", ""))
    if v0 is None or vn is None:
        return BuildOutcome(seed, "error", "unknown entity")
    try:
        chain = find_alternative_chain(store, v0, vn, max_hops)
    except DegenerateQueryError as exc:
        return BuildOutcome(seed, "error", str(exc))
    if chain is None:
        return BuildOutcome(seed, "disconnected", "disconnected")
    try:
        evidence = build_evidence_chain(store, chain)
        probes = [probe_for_hop(store, e) for e in evidence]
        record = assemble_record(
            seed["question"], v0, vn, chain, evidence, probes, store.page(vn).aliases
        )
    except (ChainError, DegenerateProbeError, InvalidRecordError) as exc:
        return BuildOutcome(seed, "error", str(exc))
    if oracle is None:
        return BuildOutcome(seed, "unverified", "no oracle configured", record)
    try:
        report = verify_question(oracle, record)
    except VerificationIncomplete as exc:
        return BuildOutcome(seed, "incomplete", str(exc), record)
    if not report.accepted:
        failed = []
        if not report.parametric_inaccessible:
            failed.append("parametric_inaccessibility")
        if not report.evidence_sufficient:
            failed.append("evidence_sufficiency")
        failed += [f"necessity[{i}]" for i, ok in enumerate(report.necessity) if not ok]
        return BuildOutcome(seed, "rejected", ", ".join(failed), record, report)
    accepted = QuestionRecord(**{**record.__dict__, "verified": True})
    return BuildOutcome(seed, "accepted", "", accepted, report)


def dataset_stats(records: Sequence[QuestionRecord]) -> dict:
    """Hop histogram, entity counts and question/answer lengths for a record set."""
    if not records:
        return {"format_version": 1, "questions": 0}
    hops = [r.hop_count for r in records]
    entities = [len(r.chain) for r in records]
    hist = Counter(hops)
    return {
        "format_version": 1,
        "questions": len(records),
        "hop_histogram": {str(k): hist[k] for k in sorted(hist)},
        "hop_share": {str(k): hist[k] / len(records) for k in sorted(hist)},
        "mean_hops": mean(hops),
        "entities_min": min(entities),
        "entities_max": max(entities),
        "mean_entities": mean(entities),
        "mean_question_chars": mean(len(r.question) for r in records),
        "mean_answer_chars": mean(len(r.answer_aliases[0]) for r in records),
    }


def format_stats(stats: dict) -> str:
    if not stats.get("questions"):
        return "0 questions\n"
    lines = [
        f"questions: {stats['questions']}",
        f"hops: {min(map(int, stats['hop_histogram']))} to {max(map(int, stats['hop_histogram']))} "
        f"(mean: {stats['mean_hops']:.2f} hops)",
    ]
    for k, v in stats["hop_histogram"].items():
        lines.append(f"  {k}-hop: {v} ({100 * stats['hop_share'][k]:.0f}%)")
    lines += [
        f"entities per question: {stats['entities_min']} to {stats['entities_max']} "
        f"(mean: {stats['mean_entities']:.2f})",
        f"question length: mean {stats['mean_question_chars']:.1f} chars",
        f"answer length: mean {stats['mean_answer_chars']:.1f} chars",
    ]
    return "\n".join(lines) + "\n"


def write_records(records: Iterable[QuestionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def read_records(path: str | Path) -> list[QuestionRecord]:
    with open(path, encoding="utf-8") as fh:
        return [QuestionRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
