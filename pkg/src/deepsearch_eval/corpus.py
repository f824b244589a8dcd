"""Wiki-style corpus store: pages, aliases, hyperlink graph and a BM25 index."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .errors import NoLinkingSentenceError, UnknownEntityError
from .text import normalize, segment_sentences, tokenize

log = logging.getLogger(__name__)

BM25_K1 = 1.2
BM25_B = 0.75


@dataclass(frozen=True)
class LinkSpan:
    target_id: str
    anchor_text: str
    char_start: int
    char_end: int


@dataclass(frozen=True)
class PageRecord:
    entity_id: str
    title: str
    aliases: tuple[str, ...]
    body: str
    links: tuple[LinkSpan, ...]

    def to_dict(self) -> dict:
        return {
            "id": self.entity_id,
            "title": self.title,
            "aliases": list(self.aliases),
            "text": self.body,
            "links": [
                {"target": l.target_id, "anchor": l.anchor_text, "start": l.char_start, "end": l.char_end}
                for l in self.links
            ],
        }


@dataclass(frozen=True)
class EvidenceSentence:
    source_id: str
    target_id: str
    text: str
    sentence_span: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "target_id": self.target_id,
            "text": self.text,
            "sentence_span": list(self.sentence_span),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvidenceSentence":
        return cls(d["source_id"], d["target_id"], d["text"], tuple(d["sentence_span"]))


@dataclass
class IngestReport:
    ingested: int = 0
    duplicates: list[str] = field(default_factory=list)
    malformed: list[dict] = field(default_factory=list)
    dangling: list[dict] = field(default_factory=list)
    alias_collisions: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "ingested": self.ingested,
            "duplicates": self.duplicates,
            "malformed": self.malformed,
            "dangling": self.dangling,
            "alias_collisions": self.alias_collisions,
        }

    def summary(self) -> str:
        return f"{self.ingested} pages, {len(self.dangling)} dangling"

    def to_text(self) -> str:
        lines = [
            f"{self.ingested} ingested",
            self.summary(),
            f"duplicate ids rejected: {len(self.duplicates)}",
            f"malformed records skipped: {len(self.malformed)}",
            f"alias collisions: {len(self.alias_collisions)}",
        ]
        lines += [f"  duplicate id {d!r}" for d in self.duplicates]
        lines += [f"  malformed record {m['line']}: {m['reason']}" for m in self.malformed]
        lines += [f"  dangling link {d['source']} -> {d['target']}" for d in self.dangling]
        lines += [
            f"  alias {c['alias']!r}: kept {c['kept']}, ignored for {c['ignored']}"
            for c in self.alias_collisions
        ]
        return "\n".join(lines) + "\n"


class BM25Index:
    """Inverted index with Okapi BM25 scoring (k1=1.2, b=0.75)."""

    def __init__(self, docs: Mapping[str, str], k1: float = BM25_K1, b: float = BM25_B):
        self.k1 = k1
        self.b = b
        self.postings: dict[str, dict[str, int]] = {}
        self.doc_len: dict[str, int] = {}
        for doc_id, text in docs.items():
            toks = tokenize(text)
            self.doc_len[doc_id] = len(toks)
            for tok, tf in Counter(toks).items():
                self.postings.setdefault(tok, {})[doc_id] = tf
        self.n_docs = len(self.doc_len)
        self.avgdl = sum(self.doc_len.values()) / self.n_docs if self.n_docs else 0.0

    def idf(self, token: str) -> float:
        df = len(self.postings.get(token, ()))
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def score_counts(self, query_tokens: Iterable[str], tf: Mapping[str, int], dl: int) -> float:
        """BM25 of a document given its term counts and length, using corpus statistics."""
        if not self.avgdl:
            return 0.0
        norm = self.k1 * (1 - self.b + self.b * dl / self.avgdl)
        score = 0.0
        for tok in query_tokens:
            f = tf.get(tok, 0)
            if f:
                score += self.idf(tok) * f * (self.k1 + 1) / (f + norm)
        return score

    def candidates(self, query_tokens: Iterable[str]) -> set[str]:
        out: set[str] = set()
        for tok in query_tokens:
            out.update(self.postings.get(tok, ()))
        return out

    def search(self, query: str, k: int = 10) -> list[tuple[str, float]]:
        q = tokenize(query)
        scored = []
        for doc_id in self.candidates(q):
            tf = {t: self.postings[t].get(doc_id, 0) for t in q if t in self.postings}
            scored.append((doc_id, self.score_counts(q, tf, self.doc_len[doc_id])))
        scored.sort(key=lambda x: (-x[1], x[0]))
        return scored[:k]


class CorpusStore:
    """Immutable view over ingested pages. Build it with :func:`ingest_corpus`."""

    def __init__(self, pages: dict[str, PageRecord], alias_index: dict[str, str]):
        self.pages = pages
        self.alias_index = alias_index
        self.link_graph: dict[str, list[str]] = {}
        self._sentences: dict[str, list[tuple[int, int]]] = {}
        for pid, page in pages.items():
            seen: list[str] = []
            for link in sorted(page.links, key=lambda l: (l.char_start, l.char_end)):
                if link.target_id in pages and link.target_id not in seen:
                    seen.append(link.target_id)
            self.link_graph[pid] = seen
            protected = [(l.char_start, l.char_end) for l in page.links]
            self._sentences[pid] = segment_sentences(page.body, protected)
        self.index = BM25Index({pid: p.body for pid, p in pages.items()})

    def __len__(self) -> int:
        return len(self.pages)

    def __contains__(self, entity_id: object) -> bool:
        return entity_id in self.pages

    def page(self, entity_id: str) -> PageRecord:
        try:
            return self.pages[entity_id]
        except KeyError:
            raise UnknownEntityError(entity_id) from None

    def edges(self) -> set[tuple[str, str]]:
        return {(u, w) for u, ws in self.link_graph.items() for w in ws}

    def sentence_spans(self, entity_id: str) -> list[tuple[int, int]]:
        self.page(entity_id)
        return list(self._sentences[entity_id])

    def surface_forms(self, entity_id: str) -> list[str]:
        """Aliases plus every anchor text in the corpus that links to ``entity_id``."""
        forms = list(self.page(entity_id).aliases)
        for page in self.pages.values():
            for link in page.links:
                if link.target_id == entity_id and link.anchor_text not in forms:
                    forms.append(link.anchor_text)
        return forms


def _parse_record(raw: Any) -> PageRecord:
    if isinstance(raw, (str, bytes)):
        raw = json.loads(raw)
    if not isinstance(raw, dict):
        raise ValueError("record is not an object")
    pid, title, text = raw.get("id"), raw.get("title"), raw.get("text")
    if not isinstance(pid, str) or not pid:
        raise ValueError("missing or empty 'id'")
    if not isinstance(title, str) or not title.strip():
        raise ValueError("missing or empty 'title'")
    if not isinstance(text, str):
        raise ValueError("missing 'text'")
    aliases = raw.get("aliases", [])
    if not isinstance(aliases, list) or not all(isinstance(a, str) for a in aliases):
        raise ValueError("'aliases' must be a list of strings")
    aliases = [title] + [a for a in aliases if a != title and a.strip()]
    links = []
    for i, l in enumerate(raw.get("links", [])):
        try:
            target, anchor, start, end = l["target"], l["anchor"], l["start"], l["end"]
        except (KeyError, TypeError):
            raise ValueError(f"link {i}: missing field") from None
        if not isinstance(start, int) or not isinstance(end, int) or not isinstance(target, str):
            raise ValueError(f"link {i}: bad types")
        if not 0 <= start < end <= len(text):
            raise ValueError(f"link {i}: span {start}..{end} out of bounds")
        if text[start:end] != anchor:
            raise ValueError(f"link {i}: anchor text does not match body")
        links.append(LinkSpan(target, anchor, start, end))
    return PageRecord(pid, title, tuple(dict.fromkeys(aliases)), text, tuple(links))


def ingest_corpus(source: Iterable[Any]) -> tuple[CorpusStore, IngestReport]:
    """Ingest page records (dicts or JSON lines) into a :class:`CorpusStore`.

    Duplicate ids and malformed records are skipped and listed in the
    report; links to ids that never appear are kept on the page but flagged
    dangling and left out of the link graph.
    """
    report = IngestReport()
    pages: dict[str, PageRecord] = {}
    for lineno, raw in enumerate(source, start=1):
        if isinstance(raw, (str, bytes)) and not raw.strip():
            continue
        try:
            page = _parse_record(raw)
        except (ValueError, json.JSONDecodeError) as exc:
            report.malformed.append({"line": lineno, "reason": str(exc)})
            log.warning("skipping malformed record %d: %s", lineno, exc)
            continue
        if page.entity_id in pages:
            report.duplicates.append(page.entity_id)
            log.warning("rejecting duplicate id %r", page.entity_id)
            continue
        pages[page.entity_id] = page

    alias_index: dict[str, str] = {}
    for pid, page in pages.items():
        for alias in page.aliases:
            key = normalize(alias)
            if not key:
                continue
            owner = alias_index.setdefault(key, pid)
            if owner != pid:
                report.alias_collisions.append({"alias": alias, "kept": owner, "ignored": pid})
        for link in page.links:
            if link.target_id not in pages:
                report.dangling.append({"source": pid, "target": link.target_id, "anchor": link.anchor_text})
    report.ingested = len(pages)
    return CorpusStore(pages, alias_index), report


def iter_jsonl(path: str | Path) -> Iterator[str]:
    with open(path, encoding="utf-8") as fh:
        yield from fh


def load_corpus(path: str | Path) -> tuple[CorpusStore, IngestReport]:
    return ingest_corpus(iter_jsonl(path))


def dump_corpus(store: CorpusStore, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for page in store.pages.values():
            fh.write(json.dumps(page.to_dict(), ensure_ascii=False) + "\n")


def resolve_entity(store: CorpusStore, name: str) -> str | None:
    """Entity id whose alias set contains ``normalize(name)``, else ``None``."""
    return store.alias_index.get(normalize(name))


def link_neighbors(store: CorpusStore, entity: str) -> list[str]:
    if entity not in store.pages:
        raise UnknownEntityError(entity)
    return list(store.link_graph[entity])


def evidence_sentence(store: CorpusStore, src: str, dst: str) -> EvidenceSentence:
    page = store.page(src)
    hits = sorted(
        (l for l in page.links if l.target_id == dst and dst in store.pages),
        key=lambda l: l.char_start,
    )
    if not hits:
        raise NoLinkingSentenceError(f"no linking sentence: {src} -> {dst}")
    first = hits[0]
    for s, e in store.sentence_spans(src):
        if s <= first.char_start < e:
            return EvidenceSentence(src, dst, page.body[s:e], (s, e))
    raise NoLinkingSentenceError(f"no linking sentence: {src} -> {dst}")
