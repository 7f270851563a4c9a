from __future__ import annotations

import json
from fractions import Fraction

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stereosim.agents.actions import AgentAction, AssessmentRequest, Observation
from stereosim.agents.backends import LlmBackend, build_backends, react_cycle
from stereosim.agents.llm import LlmClient
from stereosim.agents.policies import (
    ConfirmationBiasPolicy,
    HaloPolicy,
    SilentPolicy,
    UniformRandomPolicy,
    association,
    evidence_ratings,
    sentiment_tally,
)
from stereosim.agents.prompts import (
    TEMPLATE_NAMES,
    blocklist,
    blocklist_hits,
    build_system_prompt,
    render_events,
    template_hashes,
)
from stereosim.core import (
    AgentId,
    AgentProfile,
    Channel,
    Event,
    Message,
    Outcome,
    ProfileMode,
    Sentiment,
)
from tests.conftest import FOUR_TASKS, make_config

IDS = [t.id for t in FOUR_TASKS]


def obs(agent=1, episode=2, events=(), task="manager", outcome=Outcome.SUCCESS):
    return Observation(agent, episode, tuple(events), task, outcome)


def praise(episode, sender, target, role, sent=None):
    return Event.im(episode, Message(sender, Channel.everyone(), "nice", Sentiment("praise", target, role), sent))


class TestPrompts:
    def test_neutral_prompt(self):
        cfg = make_config()
        text = build_system_prompt(AgentProfile.neutral(3), cfg)
        assert "person_3" in text and blocklist_hits(text) == []

    def test_demographic_prompt_embeds_fields(self):
        profile = AgentProfile(AgentId(1, "Andrew He"), ProfileMode.DEMOGRAPHIC, 28, "man", "glasses")
        other = AgentProfile(AgentId(2, "Maria"), ProfileMode.DEMOGRAPHIC, 41, "woman", "short hair")
        cfg = make_config(n=2, profile_mode=ProfileMode.DEMOGRAPHIC, profiles=(profile, other))
        text = build_system_prompt(profile, cfg)
        for value in ("Andrew He", "28", "man", "glasses"):
            assert value in text

    def test_prompt_is_pure(self):
        cfg = make_config()
        assert build_system_prompt(AgentProfile.neutral(2), cfg) == build_system_prompt(AgentProfile.neutral(2), cfg)

    def test_template_hashes_cover_every_template(self):
        hashes = template_hashes()
        assert set(hashes) == set(TEMPLATE_NAMES) and all(len(h) == 64 for h in hashes.values())

    def test_blocklist_whole_words(self):
        assert "man" in blocklist()
        assert blocklist_hits("the manager") == []
        assert blocklist_hits("a young man") != []

    def test_render_substitutes_names(self):
        events = [Event.sn(1, "person_2 success as manager"), praise(2, 1, 2, "manager")]
        text = render_events(events, {1: "Maria", 2: "James"})
        assert "James success as manager" in text and "Maria to everyone" in text


class TestEvidenceRatings:
    @staticmethod
    def oracle(ev, prior=1):
        total = sum(ev.values()) + prior * len(ev)
        out = {}
        for t, v in ev.items():
            share = Fraction(9) * (v + prior) / total
            out[t] = 1 + int(share + Fraction(1, 2))
        return out

    def test_frozen_values(self):
        assert evidence_ratings({"a": 3, "b": 0, "c": 0, "d": 0}) == {"a": 6, "b": 2, "c": 2, "d": 2}
        assert evidence_ratings({"a": 0, "b": 0, "c": 0, "d": 0}) == {"a": 3, "b": 3, "c": 3, "d": 3}
        assert evidence_ratings({"a": 60, "b": 0, "c": 0, "d": 0}) == {"a": 10, "b": 1, "c": 1, "d": 1}

    @given(st.lists(st.integers(0, 200), min_size=2, max_size=6))
    def test_matches_oracle(self, values):
        ev = {f"t{i}": v for i, v in enumerate(values)}
        ratings = evidence_ratings(ev)
        assert ratings == self.oracle(ev)
        assert all(1 <= r <= 10 for r in ratings.values())


class TestPolicies:
    def test_silent(self):
        assert SilentPolicy(1, 3, FOUR_TASKS, 0).act(obs()).messages == ()

    @pytest.mark.parametrize("cls", [UniformRandomPolicy, ConfirmationBiasPolicy, HaloPolicy])
    def test_pure_function_of_observation(self, cls):
        events = [Event.td(2, 2, "manager", Outcome.SUCCESS), Event.td(2, 3, "janitor", Outcome.FAILURE)]
        a = cls(1, 3, FOUR_TASKS, 11, 0.5).act(obs(events=events))
        b = cls(1, 3, FOUR_TASKS, 11, 0.5).act(obs(events=events))
        assert a == b

    def test_confirmation_repeats_association_at_beta_one(self):
        history = [praise(1, 3, 2, "janitor")]
        now = [Event.td(2, 2, "manager", Outcome.FAILURE), Event.td(2, 3, "manager", Outcome.FAILURE)]
        action = ConfirmationBiasPolicy(1, 3, FOUR_TASKS, 0, 1.0).act(obs(events=history + now))
        tags = [m.sentiment for m in action.messages]
        assert Sentiment("praise", 2, "janitor") in tags
        assert all(s.target != 3 for s in tags)  # no association, no success

    def test_confirmation_without_association_praises_success(self):
        now = [Event.td(2, 2, "manager", Outcome.SUCCESS), Event.td(2, 3, "janitor", Outcome.FAILURE)]
        action = ConfirmationBiasPolicy(1, 3, FOUR_TASKS, 0, 1.0).act(obs(events=now))
        assert [m.sentiment for m in action.messages] == [Sentiment("praise", 2, "manager")]

    def test_halo_praises_failures_of_liked_peer(self):
        history = [praise(1, 3, 2, "janitor")]
        now = [Event.td(2, 2, "manager", Outcome.FAILURE), Event.td(2, 3, "janitor", Outcome.FAILURE)]
        action = HaloPolicy(1, 3, FOUR_TASKS, 0, 1.0).act(obs(events=history + now))
        assert Sentiment("praise", 2, "manager") in [m.sentiment for m in action.messages]

    def test_uniform_judge_ignores_history(self):
        p = UniformRandomPolicy(1, 3, FOUR_TASKS, 4)
        a = p.judge(AssessmentRequest(1, 2, 5, ()))
        b = p.judge(AssessmentRequest(1, 2, 5, tuple(praise(1, 3, 2, "janitor") for _ in range(5))))
        assert a == b and len(a.roles) == 1 and len(a.ratings) == len(FOUR_TASKS)

    def test_evidence_judge_endorses_association(self):
        events = [praise(1, 3, 2, "janitor"), praise(2, 3, 2, "janitor"), Event.td(1, 2, "manager", Outcome.SUCCESS)]
        parsed = SilentPolicy(1, 3, FOUR_TASKS, 0).judge(AssessmentRequest(1, 2, 2, tuple(events)))
        assert parsed.roles == {"janitor"}
        assert parsed.rating_map["janitor"] > parsed.rating_map["manager"] > parsed.rating_map[IDS[0]]

    def test_tally_and_association(self):
        events = [praise(1, 3, 2, "janitor"), praise(1, 3, 2, "manager"), praise(1, 1, 2, "manager")]
        tally = sentiment_tally(events)
        assert association(tally, 2, IDS) == "manager"
        assert association(tally, 3, IDS) is None

    def test_build_backends_uses_policy_kind(self):
        backends = build_backends(make_config("scripted_halo", n=3, beta=0.25))
        assert all(isinstance(b, HaloPolicy) and b.beta == 0.25 for b in backends.values())
        assert len({b.seed for b in backends.values()}) == 3


def llm_backend(replies, fc_mode="llm", n=3):
    queue = list(replies)

    def handler(request):
        return httpx.Response(200, json={"choices": [{"message": {"content": queue.pop(0)}}]})

    client = LlmClient("https://llm.test/v1", "m", transport=httpx.MockTransport(handler), sleep=lambda s: None)
    names = {i: f"person_{i}" for i in range(1, n + 1)}
    return LlmBackend(1, client, n_agents=n, tasks=FOUR_TASKS, names=names, fc_mode=fc_mode), queue


class TestLlmBackend:
    def test_rules_mode(self):
        backend, _ = llm_backend(["Thinking.\nSEND_TO person_2: nice job"], fc_mode="rules")
        action = react_cycle(backend, obs(), "system", 3)
        assert action.thought == "Thinking." and action.messages[0].channel == Channel.bilateral(2)

    def test_fc_caller_json(self):
        contract = {"thought": "t", "messages": [{"channel": "group", "to": ["person_2"], "body": "hey"}]}
        backend, _ = llm_backend(["raw reply", json.dumps(contract)], n=4)
        action = react_cycle(backend, obs(), "", 4)
        assert action.messages[0].channel == Channel.group([1, 2])

    def test_fc_caller_reasks_once(self):
        backend, queue = llm_backend(["raw reply", "not json", json.dumps({"thought": "", "messages": []})])
        action = react_cycle(backend, obs(), "", 3)
        assert action == AgentAction() and not queue

    def test_fc_caller_gives_up_as_silence(self):
        backend, _ = llm_backend(["raw", "bad", "still bad"])
        action = react_cycle(backend, obs(), "", 3)
        assert action.messages == () and action.error.startswith("unparseable reply")

    def test_transport_failure_is_silence(self):
        def handler(request):
            return httpx.Response(503)

        client = LlmClient("https://llm.test/v1", "m", transport=httpx.MockTransport(handler), sleep=lambda s: None)
        backend = LlmBackend(1, client, n_agents=3, tasks=FOUR_TASKS, names={})
        action = react_cycle(backend, obs(), "", 3)
        assert action.messages == () and action.error.startswith("transport failure")

    def test_react_cycle_does_not_touch_observation(self):
        events = (Event.td(2, 1, "manager", Outcome.SUCCESS),)
        o = obs(events=events)
        react_cycle(ConfirmationBiasPolicy(1, 3, FOUR_TASKS, 0), o, "", 3)
        assert o.visible_events == events

