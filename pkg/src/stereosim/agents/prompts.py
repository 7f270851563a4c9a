"""Versioned prompt templates and the demographic blocklist."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from string import Template
from typing import Iterable

from ..core import (
    MESSAGE_BUDGET,
    AgentProfile,
    Event,
    EventKind,
    ChannelKind,
    ProfileMode,
    SimConfig,
)

TEMPLATE_NAMES = (
    "agent_system_neutral_v1",
    "agent_system_demographic_v1",
    "agent_turn_v1",
    "assessment_v1",
    "boss_v1",
    "fc_caller_v1",
    "parser_v1",
    "eval_report_v1",
    "eval_flags_v1",
)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def render(self, **values) -> str:
        return Template(self.text).substitute(**values)


@lru_cache(maxsize=None)
def template(name: str) -> PromptTemplate:
    path = resources.files("stereosim.assets").joinpath("prompts").joinpath(f"{name}.txt")
    return PromptTemplate(name, path.read_text(encoding="utf-8"))


def template_hashes() -> dict[str, str]:
    return {name: template(name).sha256 for name in TEMPLATE_NAMES}


@lru_cache(maxsize=None)
def blocklist() -> tuple[str, ...]:
    text = resources.files("stereosim.assets").joinpath("demographic_blocklist.txt").read_text("utf-8")
    return tuple(
        line.strip().lower() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


def blocklist_hits(text: str, words: Iterable[str] | None = None) -> list[str]:
    """Blocklisted tokens present in ``text`` as whole words (case-insensitive)."""
    hits = []
    lowered = text.lower()
    for word in words if words is not None else blocklist():
        if re.search(rf"(?<![\w-]){re.escape(word)}(?![\w-])", lowered):
            hits.append(word)
    return hits


def roster(config: SimConfig) -> str:
    if config.profile_mode is ProfileMode.DEMOGRAPHIC:
        return "; ".join(
            f"{p.agent.display_name} ({p.age}, {p.gender}, {p.appearance})"
            for p in config.agent_profiles()
        )
    return ", ".join(a.display_name for a in config.agents)


def task_list(config: SimConfig) -> str:
    return ", ".join(t.id for t in config.tasks)


def build_system_prompt(profile: AgentProfile, config: SimConfig) -> str:
    common = dict(
        name=profile.agent.display_name,
        n_agents=config.n_agents,
        task_list=task_list(config),
        budget=MESSAGE_BUDGET,
        roster=roster(config),
    )
    if profile.mode is ProfileMode.DEMOGRAPHIC:
        return template("agent_system_demographic_v1").render(
            age=profile.age, gender=profile.gender, appearance=profile.appearance, **common
        )
    return template("agent_system_neutral_v1").render(**common)


_PERSON_TOKEN = re.compile(r"\bperson_(\d+)\b")


def render_events(events: Iterable[Event], names: dict[int, str]) -> str:
    """Readable event lines; logged ``person_k`` identifiers become display names."""

    def name(i: int) -> str:
        return names.get(i, f"person_{i}")

    def named(text: str) -> str:
        return _PERSON_TOKEN.sub(lambda m: name(int(m.group(1))), text)

    lines = []
    for e in events:
        p = e.payload
        if e.kind is EventKind.TD:
            lines.append(f"[round {e.episode}] {name(p.agent)} worked as {p.task}: {p.outcome.value}")
        elif e.kind is EventKind.SN:
            lines.append(f"[round {e.episode}] notice: {named(p.text)}")
        else:
            ch = p.channel
            if ch.kind is ChannelKind.GLOBAL:
                to = "everyone"
            elif ch.kind is ChannelKind.BILATERAL:
                to = name(ch.recipient)
            else:
                to = "group " + ", ".join(name(x) for x in sorted(ch.participants))
            lines.append(f"[round {e.episode}] {name(p.sender)} to {to}: {named(p.body)}")
    return "\n".join(lines) if lines else "(nothing yet)"
