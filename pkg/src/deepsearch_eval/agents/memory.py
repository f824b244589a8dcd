from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from types import MappingProxyType
from typing import Any, Mapping

from ..errors import UnknownEIDError
from ..sandbox import digest


@dataclass(frozen=True)
class MemoryEntry:
    eid: str
    content: str
    source: Mapping[str, Any]
    created_at: int

    @property
    def digest(self) -> str:
        return digest(self.content)


class EvidenceMemory:
    """Append-only evidence store. EIDs are ``EID-001``, ``EID-002``, ... and widen past 999."""

    def __init__(self):
        self._entries: dict[str, MemoryEntry] = {}
        self._counter = itertools.count(1)
        self._lock = threading.Lock()

    def store(self, content: str, source: Mapping[str, Any] | None = None) -> str:
        with self._lock:
            n = next(self._counter)
            eid = f"EID-{n:03d}"
            self._entries[eid] = MemoryEntry(eid, content, MappingProxyType(dict(source or {})), n)
        return eid

    def retrieve(self, eid: str) -> str:
        return self.entry(eid).content

    def entry(self, eid: str) -> MemoryEntry:
        try:
            return self._entries[eid]
        except KeyError:
            raise UnknownEIDError(eid) from None

    def __contains__(self, eid: object) -> bool:
        return eid in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def eids(self) -> list[str]:
        with self._lock:
            return list(self._entries)

    def to_dict(self) -> dict:
        return {
            eid: {"digest": e.digest, "source": dict(e.source), "created_at": e.created_at}
            for eid, e in list(self._entries.items())
        }


def memory_store(memory: EvidenceMemory, content: str, source: Mapping[str, Any] | None = None) -> str:
    return memory.store(content, source)


def memory_retrieve(memory: EvidenceMemory, eid: str) -> str:
    return memory.retrieve(eid)
