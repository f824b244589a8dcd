from __future__ import annotations

import json
from typing import Callable, Sequence


def approx_tokens(text: str) -> int:
    """Rough model-agnostic token estimate (4 chars per token)."""
    return (len(text) + 3) // 4


def render_content(content: str) -> str:
    """Human-readable view of a served sandbox response (canonical JSON)."""
    try:
        data = json.loads(content)
    except ValueError:
        return content
    if "results" in data:
        if not data["results"]:
            return "No results."
        lines = []
        for i, r in enumerate(data["results"], 1):
            lines.append(f"{i}. {r['title']} (handle: {r['handle']})\n   {r['snippet']}")
        return "\n".join(lines)
    if "text" in data:
        links = ", ".join(f"{l['title']} (handle: {l['handle']})" for l in data.get("links", []))
        return f"Title: {data['title']}\n\n{data['text']}\n\nLinks: {links or 'none'}"
    if "error" in data:
        err = data["error"]
        return f"ERROR {err['code']}: {err['message']}"
    return content


TRUNCATED = "[observation truncated to fit the context window]"


def fit_context(
    messages: list[dict],
    observation_idx: Sequence[int],
    ceiling: int,
    count: Callable[[str], int] = approx_tokens,
) -> int:
    """Blank the oldest observations until the transcript fits ``ceiling`` tokens.

    Returns the number of observations truncated by this call.
    """
    total = sum(count(m["content"]) for m in messages)
    dropped = 0
    for i in observation_idx:
        if total <= ceiling:
            break
        if messages[i]["content"] == TRUNCATED:
            continue
        total -= count(messages[i]["content"]) - count(TRUNCATED)
        messages[i] = {**messages[i], "content": TRUNCATED}
        dropped += 1
    return dropped
