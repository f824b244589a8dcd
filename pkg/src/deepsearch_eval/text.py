"""Text helpers shared by the corpus, masking and scoring code."""

from __future__ import annotations

import re
import unicodedata
from typing import Iterable, Sequence

_WS = re.compile(r"\s+")
_TOKEN = re.compile(r"\w+")
_ANSWER_TAG = re.compile(r"<answer>(.*?)</answer>", re.IGNORECASE | re.DOTALL)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def normalize(text: str) -> str:
    """Casefold, trim, collapse whitespace and strip punctuation at both ends.

    >>> normalize("  Kane   Cornes. ")
    'kane cornes'
    """
    s = _WS.sub(" ", unicodedata.normalize("NFC", text).casefold()).strip()
    start, end = 0, len(s)
    while start < end and (_is_punct(s[start]) or s[start].isspace()):
        start += 1
    while end > start and (_is_punct(s[end - 1]) or s[end - 1].isspace()):
        end -= 1
    return s[start:end]


def tokenize(text: str) -> list[str]:
    """Unigram index tokens: casefolded word characters, punctuation dropped."""
    return _TOKEN.findall(text.casefold())


def extract_answer(text: str) -> str:
    """Pull the content of the last ``<answer>`` tag, or return the text unchanged."""
    found = _ANSWER_TAG.findall(text)
    return found[-1] if found else text


def matches_answer(text: str, aliases: Iterable[str]) -> bool:
    """Normalized equality of an answer against any accepted alias."""
    got = normalize(extract_answer(text))
    if not got:
        return False
    return any(got == normalize(a) for a in aliases if normalize(a))


def contains_alias(text: str, aliases: Iterable[str]) -> bool:
    """Normalized containment, used for cloze-style probe completions."""
    hay = normalize(extract_answer(text))
    return any(normalize(a) and normalize(a) in hay for a in aliases)


def segment_sentences(
    body: str, protected: Sequence[tuple[int, int]] = ()
) -> list[tuple[int, int]]:
    """Split ``body`` into sentence spans ``(start, end)``.

    A boundary is a ``.``, ``!`` or ``?`` followed by whitespace and then an
    uppercase letter. Terminators that fall inside a protected span (link
    anchors) never split. Returned spans exclude surrounding whitespace, so
    ``body[start:end]`` is the sentence text.
    """
    def guarded(i: int) -> bool:
        return any(s <= i < e for s, e in protected)

    cuts: list[int] = []
    n = len(body)
    for i, ch in enumerate(body):
        if ch not in ".!?" or guarded(i):
            continue
        j = i + 1
        if j >= n or not body[j].isspace():
            continue
        while j < n and body[j].isspace():
            j += 1
        if j < n and body[j].isupper():
            cuts.append(i + 1)

    spans = []
    prev = 0
    for cut in cuts + [n]:
        s, e = prev, cut
        while s < e and body[s].isspace():
            s += 1
        while e > s and body[e - 1].isspace():
            e -= 1
        if e > s:
            spans.append((s, e))
        prev = cut
    return spans
