"""Scripted agent policies.

Each policy is a pure function of ``(policy seed, observation)``; randomness
comes from a generator seeded with ``[seed, episode, ...]`` so the same
observation always yields the same action.  Sentiment travels in the
structured :class:`~stereosim.core.Sentiment` tag, never in the text.

Shared vocabulary (computed over an agent's visible events):

* *tally* – net sentiment per (peer, role): +1 per praise, -1 per criticism.
* *association* of a peer – the role with the highest positive tally
  (task order breaks ties); undefined until the peer has been praised.
* *evidence* for (peer, role) – positive tally plus observed successes.
  Ratings are smoothed evidence shares (see :func:`evidence_ratings`).

Policies
--------
silent
    Never messages.  Assesses from evidence.
uniform_random
    With probability 1/2 sends one message with a random target, role, tone
    and channel.  Assesses by endorsing one uniformly drawn role and rating
    every role uniformly in 1..10, ignoring history.
confirmation_bias(beta)
    For each peer (cyclic order starting after itself, at most 3): if the
    peer has an association, with probability beta praise that association
    to everyone regardless of what happened this round; otherwise (or when
    the peer has none yet) praise the peer's task only if it succeeded this
    round.  Assesses from evidence, endorsing the association.
halo(beta)
    For each peer whose overall net sentiment is positive, with probability
    beta praise whatever task the peer did this round, success or not;
    otherwise praise only successes.  Assesses from evidence, but lifts every
    rating of a net-positive peer to at least ``1 + round(8 * beta)`` and
    endorses every role rated 7 or more.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Optional, Sequence

import numpy as np

from ..core import (
    MESSAGE_BUDGET,
    RATING_MAX,
    BackendKind,
    Channel,
    Event,
    EventKind,
    Outcome,
    ParsedAssessment,
    Sentiment,
    TaskType,
    neutral_name,
)
from ..evaluation import render_assessment
from .actions import AgentAction, AssessmentRequest, Observation, Outgoing

def sentiment_tally(events: Iterable[Event]) -> Counter:
    tally: Counter = Counter()
    for e in events:
        if e.kind is EventKind.IM and e.payload.sentiment is not None:
            s = e.payload.sentiment
            tally[(s.target, s.role)] += 1 if s.tone == "praise" else -1
    return tally


def success_counts(events: Iterable[Event]) -> Counter:
    counts: Counter = Counter()
    for e in events:
        if e.kind is EventKind.TD and e.payload.outcome is Outcome.SUCCESS:
            counts[(e.payload.agent, e.payload.task)] += 1
    return counts


def association(tally: Counter, subject: int, task_order: Sequence[str]) -> Optional[str]:
    best, best_score = None, 0
    for t in task_order:
        score = tally.get((subject, t), 0)
        if score > best_score:
            best, best_score = t, score
    return best


def evidence(tally: Counter, successes: Counter, subject: int, task_order: Sequence[str]) -> dict[str, int]:
    return {t: max(tally.get((subject, t), 0), 0) + successes.get((subject, t), 0) for t in task_order}


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def evidence_ratings(ev: dict[str, int], prior: float = 1.0) -> dict[str, int]:
    """Rate each role by its share of the evidence, smoothed by a pseudo-count.

    ``1 + round(9 * (ev_t + prior) / (sum(ev) + N * prior))``: thin evidence
    gives flat, low ratings, and ratings sharpen as evidence accumulates.
    """
    total = sum(ev.values()) + prior * len(ev)
    return {t: 1 + _round_half_up(9 * (v + prior) / total) for t, v in ev.items()}


def _praise(target: int, role: str, channel: Channel) -> Outgoing:
    return Outgoing(channel, f"{neutral_name(target)} did great work as {role}.", Sentiment("praise", target, role))


def _criticise(target: int, role: str, channel: Channel) -> Outgoing:
    return Outgoing(channel, f"{neutral_name(target)} struggled as {role}.", Sentiment("criticism", target, role))


class ScriptedBackend:
    """Base for scripted policies; ``assess`` follows the evidence rule."""

    kind = BackendKind.SCRIPTED_SILENT

    def __init__(self, agent: int, n_agents: int, tasks: Sequence[TaskType], seed: int, beta: float = 1.0):
        self.agent = agent
        self.n_agents = n_agents
        self.tasks = tuple(tasks)
        self.task_ids = tuple(t.id for t in self.tasks)
        self.seed = int(seed)
        self.beta = float(beta)

    def _rng(self, *keys: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, *keys])

    def peers(self) -> list[int]:
        # cyclic order starting after self keeps the message budget fair
        return [((self.agent - 1 + k) % self.n_agents) + 1 for k in range(1, self.n_agents)]

    def act(self, observation: Observation, system_prompt: str = "") -> AgentAction:
        return AgentAction.silent("I will keep observing.")

    def judge(self, request: AssessmentRequest) -> ParsedAssessment:
        events = request.visible_events
        tally = sentiment_tally(events)
        ev = evidence(tally, success_counts(events), request.subject, self.task_ids)
        ratings = evidence_ratings(ev)
        assoc = association(tally, request.subject, self.task_ids)
        if assoc is None and max(ev.values(), default=0) > 0:
            assoc = max(self.task_ids, key=lambda t: (ev[t], -self.task_ids.index(t)))
        roles = frozenset([assoc]) if assoc else frozenset()
        return ParsedAssessment(request.evaluator, request.subject, roles, tuple(ratings.items()))

    def assess(self, request: AssessmentRequest) -> str:
        return render_assessment(self.judge(request), neutral_name(request.subject))


class SilentPolicy(ScriptedBackend):
    kind = BackendKind.SCRIPTED_SILENT


class UniformRandomPolicy(ScriptedBackend):
    kind = BackendKind.SCRIPTED_UNIFORM_RANDOM

    def act(self, observation: Observation, system_prompt: str = "") -> AgentAction:
        rng = self._rng(observation.episode, 0)
        if rng.random() >= 0.5:
            return AgentAction.silent("Nothing to say this round.")
        peers = self.peers()
        target = peers[int(rng.integers(len(peers)))]
        role = self.task_ids[int(rng.integers(len(self.task_ids)))]
        choices = ["global", "bilateral"] + (["group"] if self.n_agents >= 3 else [])
        kind = choices[int(rng.integers(len(choices)))]
        if kind == "global":
            channel = Channel.everyone()
        elif kind == "bilateral":
            channel = Channel.bilateral(target)
        else:
            channel = Channel.group({self.agent, target})
        make = _praise if rng.random() < 0.5 else _criticise
        return AgentAction("Sharing a random remark.", (make(target, role, channel),))

    def judge(self, request: AssessmentRequest) -> ParsedAssessment:
        rng = self._rng(request.episode, request.subject, 1)
        role = self.task_ids[int(rng.integers(len(self.task_ids)))]
        ratings = {t: int(rng.integers(1, RATING_MAX + 1)) for t in self.task_ids}
        return ParsedAssessment(request.evaluator, request.subject, frozenset([role]), tuple(ratings.items()))


class ConfirmationBiasPolicy(ScriptedBackend):
    kind = BackendKind.SCRIPTED_CONFIRMATION_BIAS

    def act(self, observation: Observation, system_prompt: str = "") -> AgentAction:
        rng = self._rng(observation.episode, 0)
        tally = sentiment_tally(observation.visible_events)
        current = {r.agent: r for r in observation.current_records()}
        out: list[Outgoing] = []
        for peer in self.peers():
            if len(out) >= MESSAGE_BUDGET:
                break
            assoc = association(tally, peer, self.task_ids)
            if assoc is not None and rng.random() < self.beta:
                out.append(_praise(peer, assoc, Channel.everyone()))
                continue
            rec = current.get(peer)
            if rec is not None and rec.outcome is Outcome.SUCCESS:
                out.append(_praise(peer, rec.task, Channel.everyone()))
        return AgentAction("Reinforcing what I already believe about the others.", tuple(out))


class HaloPolicy(ScriptedBackend):
    kind = BackendKind.SCRIPTED_HALO

    def act(self, observation: Observation, system_prompt: str = "") -> AgentAction:
        rng = self._rng(observation.episode, 0)
        tally = sentiment_tally(observation.visible_events)
        current = {r.agent: r for r in observation.current_records()}
        out: list[Outgoing] = []
        for peer in self.peers():
            if len(out) >= MESSAGE_BUDGET:
                break
            rec = current.get(peer)
            if rec is None:
                continue
            overall = sum(v for (who, _), v in tally.items() if who == peer)
            if overall > 0 and rng.random() < self.beta:
                out.append(_praise(peer, rec.task, Channel.everyone()))
            elif rec.outcome is Outcome.SUCCESS:
                out.append(_praise(peer, rec.task, Channel.everyone()))
        return AgentAction("Speaking up for the people I rate.", tuple(out))

    def judge(self, request: AssessmentRequest) -> ParsedAssessment:
        base = super().judge(request)
        tally = sentiment_tally(request.visible_events)
        overall = sum(v for (who, _), v in tally.items() if who == request.subject)
        if overall <= 0:
            return base
        floor = 1 + _round_half_up(8 * self.beta)
        ratings = {t: max(r, floor) for t, r in base.ratings}
        roles = base.roles | {t for t, r in ratings.items() if r >= 7}
        return ParsedAssessment(request.evaluator, request.subject, roles, tuple(ratings.items()))


POLICIES = {
    BackendKind.SCRIPTED_SILENT: SilentPolicy,
    BackendKind.SCRIPTED_UNIFORM_RANDOM: UniformRandomPolicy,
    BackendKind.SCRIPTED_CONFIRMATION_BIAS: ConfirmationBiasPolicy,
    BackendKind.SCRIPTED_HALO: HaloPolicy,
}
