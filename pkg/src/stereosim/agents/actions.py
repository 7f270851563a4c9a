"""Agent observations, actions, and the directive mini-grammar.

An agent reply is free text.  Lines of the form::

    THOUGHT: <reasoning>
    SEND_TO <person>[ {tone target role}]: <body>
    SEND_GROUP <person>,<person>[,...][ {tone target role}]: <body>
    SEND_ALL[ {tone target role}]: <body>

are recognised; any other non-blank line is treated as part of the thought.
``<person>`` is ``person_<k>`` or a display name.  The optional braces carry
the structured sentiment tag used by scripted runs, e.g.
``{praise person_2 manager}``.  Bodies escape newlines as ``\\n``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Optional

from ..core import (
    MESSAGE_BUDGET,
    Channel,
    ChannelKind,
    Event,
    Outcome,
    Sentiment,
    TaskRecord,
    neutral_name,
)


class FcParseError(ValueError):
    """The reply contained nothing that could be read as an action."""


@dataclass(frozen=True)
class Observation:
    agent: int
    episode: int
    visible_events: tuple[Event, ...]
    own_assignment: str
    own_outcome: Outcome

    def __post_init__(self):
        object.__setattr__(self, "visible_events", tuple(self.visible_events))

    def current_records(self) -> list[TaskRecord]:
        return [
            e.payload
            for e in self.visible_events
            if isinstance(e.payload, TaskRecord) and e.episode == self.episode
        ]


@dataclass(frozen=True)
class Outgoing:
    channel: Channel
    body: str
    sentiment: Optional[Sentiment] = None


@dataclass(frozen=True)
class AgentAction:
    thought: str = ""
    messages: tuple[Outgoing, ...] = ()
    rejected: tuple[str, ...] = field(default=(), compare=False)
    error: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "rejected", tuple(self.rejected))
        if len(self.messages) > MESSAGE_BUDGET:
            raise ValueError(f"at most {MESSAGE_BUDGET} messages per action")

    @classmethod
    def silent(cls, thought: str = "", error: Optional[str] = None) -> "AgentAction":
        return cls(thought=thought, error=error)

    def checked(self, sender: int, n_agents: int) -> "AgentAction":
        """Drop messages whose channel is invalid for this sender and run size."""
        keep, rejected = [], list(self.rejected)
        for m in self.messages:
            problem = m.channel.problem(sender, n_agents)
            if problem:
                rejected.append(problem)
            else:
                keep.append(m)
        return AgentAction(self.thought, tuple(keep), tuple(rejected), self.error)


_DIRECTIVE = re.compile(
    r"^\s*(?P<verb>SEND_TO|SEND_GROUP|SEND_ALL)\b(?P<target>[^{:]*?)\s*"
    r"(?:\{(?P<tag>[^}]*)\})?\s*:\s?(?P<body>.*)$"
)
_PERSON = re.compile(r"^person_(\d+)$")


def _escape(body: str) -> str:
    return body.replace("\\", "\\\\").replace("\n", "\\n")


def _unescape(body: str) -> str:
    return re.sub(r"\\(.)", lambda m: "\n" if m.group(1) == "n" else m.group(1), body)


def render_action(action: AgentAction, sender: Optional[int] = None) -> str:
    """Render an action in the directive grammar; inverse of :func:`fc_parse`."""
    lines = []
    if action.thought:
        lines += [f"THOUGHT: {part}" for part in action.thought.split("\n")]
    for m in action.messages:
        ch = m.channel
        if ch.kind is ChannelKind.BILATERAL:
            head = f"SEND_TO {neutral_name(ch.recipient)}"
        elif ch.kind is ChannelKind.GROUP:
            head = "SEND_GROUP " + ",".join(neutral_name(p) for p in sorted(ch.participants))
        else:
            head = "SEND_ALL"
        if m.sentiment is not None:
            s = m.sentiment
            head += f" {{{s.tone} {neutral_name(s.target)} {s.role}}}"
        lines.append(f"{head}: {_escape(m.body)}")
    return "\n".join(lines)


def _resolve(token: str, names: Mapping[str, int]) -> Optional[int]:
    token = token.strip()
    m = _PERSON.match(token)
    if m:
        return int(m.group(1))
    return names.get(token.casefold())


def fc_parse(
    raw: str,
    *,
    sender: Optional[int] = None,
    n_agents: Optional[int] = None,
    names: Optional[Mapping[int, str]] = None,
) -> AgentAction:
    """Rule-based interpreter turning a free-text reply into an :class:`AgentAction`.

    Messages that violate channel rules (group size, self-addressing) are
    dropped and listed in ``rejected``; the rest are kept.  Raises
    :class:`FcParseError` for blank input or when every directive line is
    malformed.
    """
    if raw is None or not raw.strip():
        raise FcParseError("empty reply")
    lookup = {v.casefold(): k for k, v in (names or {}).items()}
    thought: list[str] = []
    messages: list[Outgoing] = []
    rejected: list[str] = []
    directive_lines = 0
    malformed = 0
    for line in raw.split("\n"):
        if line.startswith("THOUGHT:"):
            part = line[len("THOUGHT:"):]
            thought.append(part[1:] if part.startswith(" ") else part)
            continue
        if not line.lstrip().startswith("SEND_"):
            if line.strip():
                thought.append(line.strip())
            continue
        directive_lines += 1
        m = _DIRECTIVE.match(line)
        if not m:
            malformed += 1
            rejected.append(f"malformed directive: {line.strip()!r}")
            continue
        verb, target = m.group("verb"), m.group("target").strip()
        if verb == "SEND_TO":
            who = _resolve(target, lookup) if target else None
            if who is None:
                malformed += 1
                rejected.append(f"unknown recipient {target!r}")
                continue
            channel = Channel.bilateral(who)
        elif verb == "SEND_GROUP":
            members = [_resolve(tok, lookup) for tok in target.split(",") if tok.strip()]
            if not members or any(x is None for x in members):
                malformed += 1
                rejected.append(f"malformed participant set {target!r}")
                continue
            if sender is not None:
                members.append(sender)
            channel = Channel.group(members)
        else:
            if target:
                malformed += 1
                rejected.append(f"SEND_ALL takes no target: {target!r}")
                continue
            channel = Channel.everyone()
        sentiment = None
        if m.group("tag") is not None:
            parts = m.group("tag").split()
            target_idx = _resolve(parts[1], lookup) if len(parts) == 3 else None
            if len(parts) != 3 or parts[0] not in ("praise", "criticism") or target_idx is None:
                malformed += 1
                rejected.append(f"malformed sentiment tag {m.group('tag')!r}")
                continue
            sentiment = Sentiment(parts[0], target_idx, parts[2])
        if sender is not None and n_agents is not None:
            problem = channel.problem(sender, n_agents)
            if problem:
                rejected.append(problem)
                continue
        elif n_agents is not None and channel.kind is ChannelKind.GROUP:
            if not 2 <= len(channel.participants) < n_agents:
                rejected.append(f"group size {len(channel.participants)} outside 2 ≤ k < {n_agents}")
                continue
        if len(messages) >= MESSAGE_BUDGET:
            rejected.append("message budget exceeded")
            continue
        messages.append(Outgoing(channel, _unescape(m.group("body")), sentiment))
    if directive_lines and malformed == directive_lines and not thought:
        raise FcParseError("; ".join(rejected))
    return AgentAction("\n".join(thought), tuple(messages), tuple(rejected))


@dataclass(frozen=True)
class AssessmentRequest:
    """What an evaluator is given when asked to assess one peer."""

    evaluator: int
    subject: int
    episode: int
    visible_events: tuple[Event, ...]
    prompt: str = ""

    def __post_init__(self):
        object.__setattr__(self, "visible_events", tuple(self.visible_events))
