"""Line-oriented action grammar shared by the reference agents.

A model turn must end with exactly one fenced block::

    ```action
    ACTION search
    query: Kane Cornes
    ```

Fields are ``name: value`` lines; a line without a field prefix continues
the previous field. ``claim:`` may repeat and carries a trailing
``[EID-nnn]`` reference.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

_BLOCK = re.compile(r"```action[ \t]*\n(.*?)```", re.DOTALL)
_FIELD = re.compile(r"^([a-z_]+):\s?(.*)$")
_CLAIM_EID = re.compile(r"^(.*?)\s*\[(EID-\d+)\]\s*$")
EID_TOKEN = re.compile(r"EID-\d{3,}")

REQUIRED = {
    "search": ("query",),
    "fetch": ("target",),
    "retrieve": ("eid",),
    "answer": ("answer",),
    "refuse": (),
    "finish": ("findings",),
}

HELP = {
    "search": "ACTION search\nquery: <search terms>\nk: <optional result count>",
    "fetch": "ACTION fetch\ntarget: <page title or handle>",
    "retrieve": "ACTION retrieve\neid: <EID-nnn>",
    "answer": "ACTION answer\nanswer: <entity name>\nclaim: <atomic fact> [EID-nnn]   (repeat per claim)",
    "refuse": "ACTION refuse\nreason: <why the answer cannot be determined>",
    "finish": "ACTION finish\nfindings: <what you learned, citing [EID-nnn] markers>",
}


class ActionParseError(ValueError):
    pass


@dataclass
class Action:
    name: str
    fields: dict[str, str] = field(default_factory=dict)
    claims: list[tuple[str, str]] = field(default_factory=list)

    def get(self, key: str, default: str = "") -> str:
        return self.fields.get(key, default)


def grammar_help(allowed) -> str:
    blocks = "\n\n".join(f"```action\n{HELP[a]}\n```" for a in allowed)
    return (
        "End every reply with exactly one fenced action block, one of:\n\n" + blocks
    )


def parse_action(text: str, allowed=tuple(REQUIRED)) -> Action:
    blocks = _BLOCK.findall(text)
    if not blocks:
        raise ActionParseError("no ```action block found")
    if len(blocks) > 1:
        raise ActionParseError("more than one ```action block")
    lines = [l.rstrip() for l in blocks[0].strip().splitlines()]
    lines = [l for l in lines if l.strip()]
    if not lines or not lines[0].startswith("ACTION "):
        raise ActionParseError("block must start with 'ACTION <name>'")
    name = lines[0][len("ACTION "):].strip().lower()
    if name not in allowed:
        raise ActionParseError(f"action {name!r} not allowed here; use one of {', '.join(allowed)}")
    action = Action(name)
    last: str | None = None
    for line in lines[1:]:
        m = _FIELD.match(line.strip())
        if m:
            key, value = m.group(1), m.group(2).strip()
            if key == "claim":
                cm = _CLAIM_EID.match(value)
                if not cm:
                    raise ActionParseError(f"claim without [EID-nnn] reference: {value!r}")
                action.claims.append((cm.group(1).strip(), cm.group(2)))
                last = None
                continue
            action.fields[key] = value
            last = key
        elif last is not None:
            action.fields[last] += "\n" + line.strip()
        else:
            raise ActionParseError(f"unexpected line: {line!r}")
    for key in REQUIRED[name]:
        if not action.fields.get(key, "").strip():
            raise ActionParseError(f"action {name!r} requires field {key!r}")
    if "k" in action.fields:
        try:
            int(action.fields["k"])
        except ValueError:
            raise ActionParseError("k must be an integer") from None
    return action


def render_action(name: str, **fields: str) -> str:
    """Build an action block (used by mocks and scripted agents)."""
    claims = fields.pop("claims", ())
    body = [f"ACTION {name}"] + [f"{k}: {v}" for k, v in fields.items()]
    body += [f"claim: {text} [{eid}]" for text, eid in claims]
    return "```action\n" + "\n".join(body) + "\n```"
