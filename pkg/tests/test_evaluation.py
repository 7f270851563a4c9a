from __future__ import annotations

import json
import logging

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stereosim.agents.actions import AssessmentRequest
from stereosim.agents.llm import LlmClient, TransportError
from stereosim.agents.policies import SilentPolicy, UniformRandomPolicy
from stereosim.core import AgentId, Channel, Event, Message, Outcome, ParsedAssessment, PeerAssessment, Sentiment
from stereosim.evaluation import (
    AssessmentParseError,
    EvaluationError,
    EvaluationRound,
    LlmParser,
    RuleParser,
    association_matrix,
    collect_assessments,
    evaluate_round,
    parse_assessments,
    render_assessment,
)
from tests.conftest import FOUR_TASKS

IDS = [t.id for t in FOUR_TASKS]
AGENTS3 = [AgentId(i) for i in (1, 2, 3)]


class Fixed:
    def __init__(self, text):
        self.text = text

    def assess(self, request):
        return self.text.format(s=request.subject)


class Down:
    def assess(self, request):
        raise TransportError("down")


def test_all_ordered_pairs():
    backends = {i: Fixed("person_{s} is suited to manager.") for i in (1, 2, 3)}
    out = collect_assessments(AGENTS3, [], backends, episode=1, tasks=FOUR_TASKS)
    assert len(out) == 6
    assert [(a.evaluator, a.subject) for a in out] == [(1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2)]


def test_evaluator_sees_only_own_view():
    secret = Event.im(2, Message(2, Channel.bilateral(3), "psst"))
    seen = {}

    class Spy:
        def __init__(self, i):
            self.i = i

        def assess(self, request):
            seen[self.i] = "psst" in request.prompt
            return f"person_{request.subject} is suited to manager."

    collect_assessments(AGENTS3, [secret], {i: Spy(i) for i in (1, 2, 3)}, episode=2, tasks=FOUR_TASKS)
    assert seen == {1: False, 2: True, 3: True}


class TestRuleParser:
    def test_grammar_case(self):
        mappings = parse_assessments(RuleParser(), [PeerAssessment(1, 2, "person_2 is suited to manager, 8/10")], FOUR_TASKS)
        assert "manager" in mappings.agent_to_roles[2]
        assert mappings.ratings[(2, "manager")] == (8,)
        assert 2 in mappings.role_to_agents["manager"]

    def test_clamp_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            p = RuleParser().parse(PeerAssessment(1, 2, "person_2 as janitor: 12/10"), FOUR_TASKS)
        assert p.rating_map == {"janitor": 10}
        assert "clamped" in caplog.text

    def test_display_names(self):
        p = RuleParser().parse(PeerAssessment(1, 2, "Maria is suited to Data Scientist."), FOUR_TASKS, {2: "Maria"})
        assert p.roles == {"data_scientist"}

    def test_traits(self):
        p = RuleParser().parse(PeerAssessment(1, 2, "person_2 warmth 8/10. person_2 competence 3/10."), FOUR_TASKS)
        assert (p.warmth, p.competence) == (8, 3)

    def test_unmentioned_pairs_have_no_rating(self):
        p = RuleParser().parse(PeerAssessment(1, 2, "person_2 is suited to manager."), FOUR_TASKS)
        assert p.ratings == ()

    def test_nothing_recognisable(self):
        with pytest.raises(AssessmentParseError):
            RuleParser().parse(PeerAssessment(1, 2, "hard to say"), FOUR_TASKS)

    def test_other_subject_ignored(self):
        with pytest.raises(AssessmentParseError):
            RuleParser().parse(PeerAssessment(1, 2, "person_3 is suited to manager, 9/10"), FOUR_TASKS)

    @given(
        st.sets(st.sampled_from(IDS)),
        st.dictionaries(st.sampled_from(IDS), st.integers(1, 10)),
        st.one_of(st.none(), st.integers(1, 10)),
        st.one_of(st.none(), st.integers(1, 10)),
    )
    def test_render_parse_round_trip(self, roles, ratings, warmth, competence):
        if not roles and not ratings and warmth is None and competence is None:
            return
        parsed = ParsedAssessment(1, 2, frozenset(roles), tuple(ratings.items()), warmth, competence)
        text = render_assessment(parsed, "person_2")
        assert RuleParser().parse(PeerAssessment(1, 2, text), FOUR_TASKS) == parsed


@pytest.mark.parametrize("policy", [SilentPolicy, UniformRandomPolicy])
def test_scripted_assessment_round_trips(policy):
    events = (
        Event.td(1, 2, "manager", Outcome.SUCCESS),
        Event.im(2, Message(3, Channel.everyone(), "x", Sentiment("praise", 2, "janitor"))),
    )
    backend = policy(1, 3, FOUR_TASKS, 9)
    request = AssessmentRequest(1, 2, 2, events)
    parsed = RuleParser().parse(PeerAssessment(1, 2, backend.assess(request)), FOUR_TASKS)
    assert parsed == backend.judge(request)


def llm_parser(*replies):
    queue = list(replies)

    def handler(request):
        return httpx.Response(200, json={"choices": [{"message": {"content": queue.pop(0)}}]})

    return LlmParser(LlmClient("https://llm.test/v1", "m", transport=httpx.MockTransport(handler), sleep=lambda s: None))


class TestLlmParser:
    def test_json_contract(self):
        reply = json.dumps({"suitable_roles": ["Manager"], "ratings": {"manager": 9, "astronaut": 4}, "warmth": 14})
        p = llm_parser(reply).parse(PeerAssessment(1, 2, "..."), FOUR_TASKS)
        assert p.roles == {"manager"} and p.rating_map == {"manager": 9} and p.warmth == 10

    def test_reask_then_give_up(self):
        parser = llm_parser("nope", "still nope")
        with pytest.raises(AssessmentParseError):
            parser.parse(PeerAssessment(1, 2, "..."), FOUR_TASKS)

    def test_reask_succeeds(self):
        parser = llm_parser("nope", json.dumps({"suitable_roles": []}))
        assert parser.parse(PeerAssessment(1, 2, "..."), FOUR_TASKS).roles == frozenset()


class TestRounds:
    def test_failures_excluded(self):
        backends = {1: Down(), 2: Fixed("person_{s} is suited to manager, 7/10."), 3: Fixed("person_{s} is suited to janitor.")}
        rnd = evaluate_round(AGENTS3, [], backends, RuleParser(), episode=4, tasks=FOUR_TASKS)
        assert len(rnd.assessments) == 6 and sum(a.failed for a in rnd.assessments) == 2
        assert len(rnd.parsed) == 4 and len(rnd.errors) == 2 and rnd.valid

    def test_zero_parses_marks_round_invalid(self):
        rnd = evaluate_round(AGENTS3, [], {i: Fixed("no idea") for i in (1, 2, 3)}, RuleParser(), episode=1, tasks=FOUR_TASKS)
        assert not rnd.valid
        with pytest.raises(EvaluationError):
            association_matrix([rnd])

    def test_round_trip(self):
        backends = {i: Fixed("person_{s} is suited to manager, 7/10.") for i in (1, 2, 3)}
        rnd = evaluate_round(AGENTS3, [], backends, RuleParser(), episode=4, tasks=FOUR_TASKS, run_id="r")
        assert EvaluationRound.from_dict(json.loads(json.dumps(rnd.to_dict()))) == rnd

    def test_pairs_must_be_complete(self):
        with pytest.raises(ValueError):
            EvaluationRound(1, (PeerAssessment(1, 2, ""),), (), parse_assessments(RuleParser(), [PeerAssessment(1, 2, "person_2 is suited to manager")], FOUR_TASKS), tuple(IDS), {1: "person_1", 2: "person_2", 3: "person_3"})


def round_with(texts, run_id="r"):
    """Round where evaluator i writes texts[i] about every peer."""
    backends = {i: Fixed(t) for i, t in texts.items()}
    agents = [AgentId(i) for i in texts]
    return evaluate_round(agents, [], backends, RuleParser(), episode=1, tasks=FOUR_TASKS, run_id=run_id)


class TestAssociationMatrix:
    def test_unanimity(self):
        m = association_matrix([round_with({i: "person_{s} is suited to manager." for i in (1, 2, 3)})])
        assert m["person_1", "manager"] == 1.0 and m["person_1", "janitor"] == 0.0

    def test_even_split(self):
        m = association_matrix(
            [
                round_with(
                    {
                        1: "person_{s} is suited to manager.",
                        2: "person_{s} is suited to manager.",
                        3: "person_{s} is suited to janitor.",
                    }
                )
            ]
        )
        # person_1 is assessed by 2 (manager) and 3 (janitor)
        assert m["person_1", "manager"] == 0.5 and m["person_1", "janitor"] == 0.5

    def test_pooling_needs_flag(self):
        a = round_with({1: "person_{s} is suited to manager.", 2: "person_{s} is suited to manager."}, "a")
        b = round_with({1: "person_{s} is suited to janitor.", 2: "person_{s} is suited to janitor."}, "b")
        with pytest.raises(EvaluationError):
            association_matrix([a, b])
        m = association_matrix([a, b], across_runs=True)
        assert m["person_1", "manager"] == 0.5 and m.provenance == ("a", "b")

    def test_csv_shape(self):
        m = association_matrix([round_with({i: "person_{s} is suited to manager." for i in (1, 2, 3)})])
        lines = m.to_csv().splitlines()
        assert lines[0] == "agent," + ",".join(IDS) and len(lines) == 4
