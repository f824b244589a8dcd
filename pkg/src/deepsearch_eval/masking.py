"""Selective entity masking for one reasoning chain.

Chain entity ``v_i`` (i >= 1) stays hidden until the episode has visited
``page(v_{i-1})``; until then every surface form of it renders as
``[UNKNOWN]`` and its page cannot be fetched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import AbstractSet, Iterable, Mapping

from .chainbuilder import Chain, alias_pattern
from .corpus import CorpusStore, PageRecord
from .errors import UnknownEntityError

PLACEHOLDER = "[UNKNOWN]"


@dataclass(frozen=True)
class MaskPolicy:
    chain: Chain
    surface_forms: Mapping[str, tuple[str, ...]]
    aliases: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    known_entities: frozenset | None = None

    @property
    def start(self) -> str:
        return self.chain[0]

    @property
    def masked_entities(self) -> frozenset:
        return frozenset(self.chain.entities[1:])

    @property
    def reveal_page(self) -> dict[str, str]:
        return {self.chain[i]: self.chain[i - 1] for i in range(1, len(self.chain))}

    def hidden(self, unlocked: AbstractSet[str], context_page: str | None = None) -> list[str]:
        reveal = self.reveal_page
        return [
            e for e in self.chain.entities[1:]
            if e not in unlocked and reveal[e] != context_page
        ]

    def pattern(self, hidden: Iterable[str]) -> re.Pattern | None:
        return _pattern(tuple(sorted({f for e in hidden for f in self.surface_forms.get(e, ())})))


@lru_cache(maxsize=4096)
def _pattern(forms: tuple[str, ...]) -> re.Pattern | None:
    return alias_pattern(forms)


def build_policy(store: CorpusStore, chain: Chain) -> MaskPolicy:
    forms = {e: tuple(store.surface_forms(e)) for e in chain.entities[1:]}
    aliases = {e: tuple(store.page(e).aliases) for e in chain.entities}
    return MaskPolicy(chain, forms, aliases, frozenset(store.pages))


def unlocked_entities(policy: MaskPolicy, visited: AbstractSet[str]) -> set[str]:
    reveal = policy.reveal_page
    return {policy.start} | {e for e, page in reveal.items() if page in visited}


def mask_text(
    text: str, policy: MaskPolicy, unlocked: AbstractSet[str], context_page: str | None = None
) -> str:
    """Replace mentions of locked entities with the placeholder.

    An entity stays visible on its own reveal page (``context_page``);
    callers rendering search snippets pass ``context_page=None``.
    """
    pat = policy.pattern(policy.hidden(unlocked, context_page))
    return pat.sub(PLACEHOLDER, text) if pat else text


def is_fetchable(entity: str, policy: MaskPolicy, unlocked: AbstractSet[str]) -> bool:
    if policy.known_entities is not None and entity not in policy.known_entities:
        raise UnknownEntityError(entity)
    return entity not in policy.masked_entities or entity in unlocked


def visible_links(
    page: PageRecord,
    policy: MaskPolicy,
    unlocked: AbstractSet[str],
    store: CorpusStore,
    context_page: str | None = None,
) -> list[dict]:
    """Outgoing links of ``page`` minus those pointing at still-masked entities."""
    hidden = set(policy.hidden(unlocked, context_page))
    out, seen = [], set()
    for link in sorted(page.links, key=lambda l: l.char_start):
        target = link.target_id
        if target in hidden or target not in store or target in seen:
            continue
        if target in policy.masked_entities and target not in unlocked:
            continue
        seen.add(target)
        out.append({
            "anchor": mask_text(link.anchor_text, policy, unlocked, context_page),
            "title": mask_text(store.page(target).title, policy, unlocked, context_page),
            "handle": target,
        })
    return out


def leaked_aliases(text: str, policy: MaskPolicy, unlocked: AbstractSet[str]) -> list[str]:
    """Aliases of locked chain entities that occur in ``text`` (casefolded scan)."""
    low = text.casefold()
    return [
        a for e in policy.masked_entities - set(unlocked)
        for a in policy.aliases.get(e, ())
        if a.casefold() in low
    ]
