"""Hierarchical extension: a boss maps the full history to a task assignment.

Scripted boss policies (pure functions of policy seed and history):

``repeat_last_success``
    Each agent gets the task it most recently succeeded at.  Agents with no
    success yet get a uniform draw.
``success_rate_greedy``
    Each agent gets the task with its highest observed success rate (task
    order breaks ties); agents with no attempts get a uniform draw.
``uniform_random``
    Uniform draw for every agent (control).
"""

from __future__ import annotations

import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .agents.llm import LlmClient, TransportError
from .agents.prompts import render_events, template
from .core import AgentId, Assignment, EpisodeRecord, EventKind, Outcome, TaskType, neutral_name

logger = logging.getLogger(__name__)

BOSS_POLICIES = ("repeat_last_success", "success_rate_greedy", "uniform_random")


class SupervisorError(RuntimeError):
    """The boss could not produce a usable assignment."""


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class SupervisorDecision:
    episode: int
    assignment: Assignment
    rationale: str
    degraded: bool = False

    def to_dict(self) -> dict:
        return {
            "episode": self.episode,
            "assignment": self.assignment.to_dict(),
            "rationale": self.rationale,
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SupervisorDecision":
        return cls(
            int(d["episode"]), Assignment.from_dict(d["assignment"]), d["rationale"], bool(d.get("degraded", False))
        )


def validate_assignment(
    assignment: Assignment | Sequence[tuple[int, str]],
    agents: Sequence[AgentId],
    tasks: Sequence[TaskType],
) -> None:
    """Raise :class:`AssignmentError` unless every agent has exactly one known task.

    ``assignment`` may also be a raw list of ``(agent, task)`` pairs, which is
    the only form in which an agent can appear twice.
    """
    pairs = list(assignment.items()) if isinstance(assignment, Assignment) else list(assignment)
    expected = [a.index for a in agents]
    seen = [a for a, _ in pairs]
    known = {t.id for t in tasks}
    problems = []
    for a in expected:
        if a not in seen:
            problems.append(f"agent person_{a} missing from assignment")
    for a in sorted({a for a in seen if seen.count(a) > 1}):
        problems.append(f"agent person_{a} assigned more than once")
    for a in sorted(set(seen) - set(expected)):
        problems.append(f"unknown agent person_{a}")
    for t in sorted({t for _, t in pairs} - known):
        problems.append(f"task {t!r} is not in the task set")
    if problems:
        raise AssignmentError("; ".join(problems))


class _Tallies:
    """Per-agent last success and per-task attempt/success counts."""

    def __init__(self):
        self.last_win: dict[int, str] = {}
        self.tried: defaultdict[int, Counter] = defaultdict(Counter)
        self.won: defaultdict[int, Counter] = defaultdict(Counter)

    def add(self, record: EpisodeRecord) -> None:
        for e in record.events:
            if e.kind is not EventKind.TD:
                continue
            r = e.payload
            self.tried[r.agent][r.task] += 1
            if r.outcome is Outcome.SUCCESS:
                self.won[r.agent][r.task] += 1
                self.last_win[r.agent] = r.task


class ScriptedBoss:
    def __init__(self, policy: str, seed: int):
        if policy not in BOSS_POLICIES:
            raise ValueError(f"unknown boss policy {policy!r}")
        self.policy = policy
        self.seed = int(seed)
        self._consumed: list[EpisodeRecord] = []
        self._tallies = _Tallies()

    def _tally(self, history: Sequence[EpisodeRecord]) -> "_Tallies":
        # records are frozen, so a history that extends the consumed prefix
        # only needs its new records folded in
        n = len(self._consumed)
        extends = len(history) >= n and (
            n == 0 or (history[0] is self._consumed[0] and history[n - 1] is self._consumed[-1])
        )
        if not extends:
            self._consumed, self._tallies = [], _Tallies()
            n = 0
        for rec in history[n:]:
            self._tallies.add(rec)
            self._consumed.append(rec)
        return self._tallies

    def decide(
        self, history: Sequence[EpisodeRecord], agents: Sequence[AgentId], tasks: Sequence[TaskType], episode: int
    ) -> tuple[dict[int, str], str]:
        order = [t.id for t in tasks]
        tally = self._tally(history)
        pairs, notes = {}, []
        for agent in sorted(agents):
            rng = np.random.default_rng([self.seed, episode, agent.index])
            choice = None
            if self.policy == "repeat_last_success":
                choice = tally.last_win.get(agent.index)
            elif self.policy == "success_rate_greedy" and agent.index in tally.tried:
                n, w = tally.tried[agent.index], tally.won[agent.index]

                def rate(t):
                    return w[t] / n[t] if n[t] else -1.0

                choice = max(order, key=lambda t: (rate(t), -order.index(t)))
            if choice is None:
                choice = order[int(rng.integers(len(order)))]
                notes.append(f"{neutral_name(agent.index)}: no record, drew {choice}")
            else:
                notes.append(f"{neutral_name(agent.index)}: {choice}")
            pairs[agent.index] = choice
        return pairs, f"{self.policy}; " + ", ".join(notes)


class LlmBoss:
    """Boss backed by a chat model; reply lines ``<person>: <task>`` plus ``RATIONALE:``."""

    def __init__(self, client: LlmClient, attempts: int = 2):
        self.client = client
        self.attempts = attempts

    def decide(self, history, agents, tasks, episode):
        names = {a.index: a.display_name for a in agents}
        events = [e for rec in history for e in rec.events]
        prompt = template("boss_v1").render(
            episode=episode,
            roster=", ".join(names.values()),
            task_list=", ".join(t.id for t in tasks),
            history=render_events(events, names),
        )
        messages = [{"role": "user", "content": prompt}]
        problem = ""
        for _ in range(self.attempts):
            raw = self.client.chat(messages)
            try:
                return self._parse(raw, agents, tasks)
            except AssignmentError as exc:
                problem = str(exc)
                messages = messages + [
                    {"role": "assistant", "content": raw},
                    {"role": "user", "content": f"That assignment is invalid ({problem}). Reply again in the required format."},
                ]
        raise SupervisorError(f"boss reply unusable: {problem}")

    @staticmethod
    def _parse(raw: str, agents, tasks) -> tuple[dict[int, str], str]:
        lookup = {a.display_name.casefold(): a.index for a in agents}
        lookup.update({f"person_{a.index}": a.index for a in agents})
        raw_pairs: list[tuple[int, str]] = []
        rationale = ""
        for line in raw.splitlines():
            if line.strip().upper().startswith("RATIONALE:"):
                rationale = line.split(":", 1)[1].strip()
                continue
            m = re.match(r"^\s*([^:]+?)\s*:\s*([A-Za-z_ ]+?)\s*\.?\s*$", line)
            if m and m.group(1).casefold() in lookup:
                task = re.sub(r"\s+", "_", m.group(2).strip().lower())
                raw_pairs.append((lookup[m.group(1).casefold()], task))
        validate_assignment(raw_pairs, agents, tasks)
        return dict(raw_pairs), rationale


def supervisor_assign(
    history: Sequence[EpisodeRecord],
    agents: Sequence[AgentId],
    tasks: Sequence[TaskType],
    backend: Any,
    episode: Optional[int] = None,
) -> SupervisorDecision:
    """Ask the boss for a full assignment for ``episode`` given the run history so far.

    Raises :class:`SupervisorError` if history is empty or the boss output
    cannot be turned into a valid assignment.
    """
    if not history:
        raise SupervisorError("the boss needs at least one completed episode of history")
    episode = episode if episode is not None else history[-1].index + 1
    try:
        pairs, rationale = backend.decide(history, agents, tasks, episode)
    except TransportError as exc:
        raise SupervisorError(f"boss transport failure: {exc}") from exc
    assignment = Assignment(pairs)
    try:
        validate_assignment(assignment, agents, tasks)
    except AssignmentError as exc:
        raise SupervisorError(str(exc)) from exc
    return SupervisorDecision(episode, assignment, rationale)
