"""Peer evaluation: collecting assessments, parsing them into role mappings,
and pooling endorsements into person-job association matrices.

Assessment text grammar understood by :class:`RuleParser` (one clause per
line or sentence, case-insensitive)::

    <person> is suited to <role>[, <r>/10]
    <person> as <role>: <r>/10
    <person> warmth <r>/10
    <person> competence <r>/10

Ratings outside 1..10 are clamped with a warning.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

from .agents.actions import AssessmentRequest
from .agents.llm import LlmClient, TransportError
from .agents.prompts import render_events, template
from .core import (
    AgentId,
    Event,
    ParsedAssessment,
    PeerAssessment,
    RoleMappings,
    TaskType,
    clamp_rating,
    visible_events,
)

logger = logging.getLogger(__name__)


class AssessmentParseError(ValueError):
    pass


class EvaluationError(RuntimeError):
    pass


def _norm_role(text: str) -> str:
    return re.sub(r"[\s\-]+", "_", text.strip().lower())


def _clamped(value: str, what: str) -> int:
    r = int(value)
    c = clamp_rating(r)
    if c != r:
        logger.warning("%s rating %d outside 1..10, clamped to %d", what, r, c)
    return c


def render_assessment(parsed: ParsedAssessment, subject_name: str) -> str:
    """Write a parsed assessment back out in the assessment grammar."""
    ratings = parsed.rating_map
    lines = []
    for role in sorted(parsed.roles):
        if role in ratings:
            lines.append(f"{subject_name} is suited to {role}, {ratings[role]}/10.")
        else:
            lines.append(f"{subject_name} is suited to {role}.")
    for role, r in parsed.ratings:
        if role not in parsed.roles:
            lines.append(f"{subject_name} as {role}: {r}/10.")
    if parsed.warmth is not None:
        lines.append(f"{subject_name} warmth {parsed.warmth}/10.")
    if parsed.competence is not None:
        lines.append(f"{subject_name} competence {parsed.competence}/10.")
    return "\n".join(lines)


class RuleParser:
    """Deterministic parser for the assessment grammar."""

    def parse(
        self,
        assessment: PeerAssessment,
        tasks: Sequence[TaskType],
        names: Optional[Mapping[int, str]] = None,
    ) -> ParsedAssessment:
        known = {t.id for t in tasks}
        aliases = {f"person_{assessment.subject}"}
        if names and assessment.subject in names:
            aliases.add(names[assessment.subject])
        who = "|".join(re.escape(a) for a in sorted(aliases, key=len, reverse=True))
        role = r"(?P<role>[A-Za-z][\w\- ]*?)"
        suited = re.compile(
            rf"(?<![\w])(?:{who})\s+is\s+suited\s+to\s+{role}\s*"
            rf"(?:,\s*(?P<r>-?\d+)\s*/\s*10)?\s*(?=[.;,\n]|$)",
            re.IGNORECASE | re.MULTILINE,
        )
        rated = re.compile(
            rf"(?<![\w])(?:{who})\s+as\s+{role}\s*:\s*(?P<r>-?\d+)\s*/\s*10", re.IGNORECASE
        )
        trait = re.compile(
            rf"(?<![\w])(?:{who})\s+(?P<trait>warmth|competence)\s*:?\s*(?P<r>-?\d+)\s*/\s*10",
            re.IGNORECASE,
        )
        text = assessment.text
        roles: set[str] = set()
        ratings: dict[str, int] = {}
        found = False
        for m in suited.finditer(text):
            t = _norm_role(m.group("role"))
            if t not in known:
                logger.warning("assessment mentions unknown role %r; skipped", t)
                continue
            found = True
            roles.add(t)
            if m.group("r") is not None:
                ratings[t] = _clamped(m.group("r"), t)
        for m in rated.finditer(text):
            t = _norm_role(m.group("role"))
            if t not in known:
                logger.warning("assessment mentions unknown role %r; skipped", t)
                continue
            found = True
            ratings[t] = _clamped(m.group("r"), t)
        traits: dict[str, int] = {}
        for m in trait.finditer(text):
            found = True
            traits[m.group("trait").lower()] = _clamped(m.group("r"), m.group("trait"))
        if not found:
            raise AssessmentParseError(
                f"no recognisable clause about person_{assessment.subject} in assessment"
            )
        return ParsedAssessment(
            assessment.evaluator,
            assessment.subject,
            frozenset(roles),
            tuple(ratings.items()),
            traits.get("warmth"),
            traits.get("competence"),
        )


class LlmParser:
    """Parser agent backed by a chat model with a strict JSON reply contract.

    A reply that violates the contract is re-asked once before giving up.
    """

    def __init__(self, client: LlmClient):
        self.client = client

    def parse(
        self,
        assessment: PeerAssessment,
        tasks: Sequence[TaskType],
        names: Optional[Mapping[int, str]] = None,
    ) -> ParsedAssessment:
        subject = (names or {}).get(assessment.subject, f"person_{assessment.subject}")
        prompt = template("parser_v1").render(
            subject=subject, task_list=", ".join(t.id for t in tasks), text=assessment.text
        )
        messages = [{"role": "user", "content": prompt}]
        problem = ""
        for _ in range(2):
            raw = self.client.chat(messages)
            try:
                return self._decode(raw, assessment, {t.id for t in tasks})
            except (ValueError, TypeError, KeyError) as exc:
                problem = str(exc)
                messages = messages + [
                    {"role": "assistant", "content": raw},
                    {"role": "user", "content": f"That reply broke the JSON contract ({problem}). Reply with the JSON object only."},
                ]
        raise AssessmentParseError(f"parser reply violated the schema twice: {problem}")

    @staticmethod
    def _decode(raw: str, assessment: PeerAssessment, known: set[str]) -> ParsedAssessment:
        start, end = raw.find("{"), raw.rfind("}")
        data = json.loads(raw[start : end + 1] if start >= 0 else raw)
        if not isinstance(data, dict) or not isinstance(data.get("suitable_roles"), list):
            raise ValueError("missing suitable_roles list")
        ratings_in = data.get("ratings") or {}
        if not isinstance(ratings_in, dict):
            raise ValueError("ratings must be an object")
        roles = {_norm_role(r) for r in data["suitable_roles"]} & known
        ratings = {
            _norm_role(k): _clamped(str(int(v)), k) for k, v in ratings_in.items() if _norm_role(k) in known
        }
        def trait(key):
            v = data.get(key)
            return None if v is None else _clamped(str(int(v)), key)
        return ParsedAssessment(
            assessment.evaluator, assessment.subject, frozenset(roles), tuple(ratings.items()),
            trait("warmth"), trait("competence"),
        )


def build_assessment_prompt(
    evaluator: int,
    subject: int,
    events: Sequence[Event],
    tasks: Sequence[TaskType],
    names: Mapping[int, str],
    rendered: Optional[str] = None,
) -> str:
    """Assessment prompt; pass ``rendered`` to reuse an evaluator's rendered history."""
    return template("assessment_v1").render(
        evaluator=names.get(evaluator, f"person_{evaluator}"),
        subject=names.get(subject, f"person_{subject}"),
        task_list=", ".join(t.id for t in tasks),
        events=rendered if rendered is not None else render_events(events, dict(names)),
    )


def collect_assessments(
    agents: Sequence[AgentId],
    events: Sequence[Event],
    backends: Mapping[int, Any],
    *,
    episode: int,
    tasks: Sequence[TaskType],
    max_workers: int = 1,
) -> list[PeerAssessment]:
    """Ask every agent to assess every other agent over its own visible history.

    Returns the n(n-1) assessments ordered by (evaluator, subject).  A backend
    transport failure yields an empty assessment marked ``failed``.
    """
    names = {a.index: a.display_name for a in agents}
    requests = []
    for ev in sorted(agents):
        seen = tuple(visible_events(events, ev.index))
        rendered = render_events(seen, names)
        for sub in sorted(agents):
            if sub.index == ev.index:
                continue
            prompt = build_assessment_prompt(ev.index, sub.index, seen, tasks, names, rendered)
            requests.append(AssessmentRequest(ev.index, sub.index, episode, seen, prompt))

    def ask(req: AssessmentRequest) -> PeerAssessment:
        try:
            return PeerAssessment(req.evaluator, req.subject, backends[req.evaluator].assess(req))
        except TransportError as exc:
            logger.warning("assessment %d→%d failed: %s", req.evaluator, req.subject, exc)
            return PeerAssessment(req.evaluator, req.subject, "", failed=True)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            return list(pool.map(ask, requests))
    return [ask(r) for r in requests]


def parse_each(
    parser: Any,
    assessments: Iterable[PeerAssessment],
    tasks: Sequence[TaskType],
    names: Optional[Mapping[int, str]] = None,
) -> tuple[list[ParsedAssessment], list[str]]:
    parsed, errors = [], []
    for a in assessments:
        if a.failed:
            errors.append(f"{a.evaluator}->{a.subject}: backend failure")
            continue
        try:
            parsed.append(parser.parse(a, tasks, names))
        except (AssessmentParseError, TransportError) as exc:
            logger.warning("could not parse assessment %d→%d: %s", a.evaluator, a.subject, exc)
            errors.append(f"{a.evaluator}->{a.subject}: {exc}")
    return parsed, errors


def parse_assessments(
    parser: Any,
    assessments: Sequence[PeerAssessment],
    tasks: Sequence[TaskType],
    names: Optional[Mapping[int, str]] = None,
) -> RoleMappings:
    """Turn assessments into agent→roles / role→agents mappings with ratings."""
    if not assessments:
        raise ValueError("no assessments to parse")
    parsed, _ = parse_each(parser, assessments, tasks, names)
    return RoleMappings.from_parsed(parsed)


@dataclass(frozen=True)
class EvaluationRound:
    phase_end_episode: int
    assessments: tuple[PeerAssessment, ...]
    parsed: tuple[ParsedAssessment, ...]
    mappings: RoleMappings
    tasks: tuple[str, ...]
    labels: Mapping[int, str]
    probe: bool = False
    errors: tuple[str, ...] = ()
    run_id: str = ""

    def __post_init__(self):
        for name in ("assessments", "parsed", "tasks", "errors"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        pairs = [(a.evaluator, a.subject) for a in self.assessments]
        if len(set(pairs)) != len(pairs):
            raise ValueError("each ordered pair is assessed at most once per round")
        agents = set(self.labels)
        expected = {(i, j) for i in agents for j in agents if i != j}
        if set(pairs) != expected:
            raise ValueError("assessments must cover every ordered pair of agents")

    @property
    def valid(self) -> bool:
        return bool(self.parsed)

    def to_dict(self) -> dict:
        return {
            "phase_end_episode": self.phase_end_episode,
            "probe": self.probe,
            "run_id": self.run_id,
            "tasks": list(self.tasks),
            "labels": {str(k): v for k, v in sorted(self.labels.items())},
            "assessments": [a.to_dict() for a in self.assessments],
            "parsed": [p.to_dict() for p in self.parsed],
            "mappings": self.mappings.to_dict(),
            "errors": list(self.errors),
            "valid": self.valid,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvaluationRound":
        return cls(
            int(d["phase_end_episode"]),
            tuple(PeerAssessment.from_dict(a) for a in d["assessments"]),
            tuple(ParsedAssessment.from_dict(p) for p in d["parsed"]),
            RoleMappings.from_dict(d["mappings"]),
            tuple(d["tasks"]),
            {int(k): v for k, v in d["labels"].items()},
            bool(d.get("probe", False)),
            tuple(d.get("errors", [])),
            d.get("run_id", ""),
        )


def evaluate_round(
    agents: Sequence[AgentId],
    events: Sequence[Event],
    backends: Mapping[int, Any],
    parser: Any,
    *,
    episode: int,
    tasks: Sequence[TaskType],
    probe: bool = False,
    run_id: str = "",
    max_workers: int = 1,
) -> EvaluationRound:
    assessments = collect_assessments(
        agents, events, backends, episode=episode, tasks=tasks, max_workers=max_workers
    )
    names = {a.index: a.display_name for a in agents}
    parsed, errors = parse_each(parser, assessments, tasks, names)
    if not parsed:
        logger.warning("evaluation round after episode %d has no parsable assessment", episode)
    return EvaluationRound(
        episode,
        tuple(assessments),
        tuple(parsed),
        RoleMappings.from_parsed(parsed),
        tuple(t.id for t in tasks),
        names,
        probe,
        tuple(errors),
        run_id,
    )


@dataclass(frozen=True)
class AssociationMatrix:
    """Fraction of evaluators endorsing each (person, job) pair."""

    values: Mapping[tuple[str, str], float]
    agents: tuple[str, ...]
    tasks: tuple[str, ...]
    provenance: tuple[str, ...] = ()
    support: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for v in self.values.values():
            if not 0.0 <= v <= 1.0:
                raise ValueError("association entries lie in [0,1]")

    def __getitem__(self, key: tuple[str, str]) -> float:
        return self.values[key]

    def max_entry(self) -> float:
        return max(self.values.values(), default=0.0)

    def as_rows(self) -> list[list]:
        return [[a] + [self.values.get((a, t), 0.0) for t in self.tasks] for a in self.agents]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["agent", *self.tasks])
        for row in self.as_rows():
            w.writerow([row[0], *(f"{v:.6f}" for v in row[1:])])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "agents": list(self.agents),
            "tasks": list(self.tasks),
            "values": self.as_rows(),
            "provenance": list(self.provenance),
        }


def association_matrix(
    rounds: Iterable[EvaluationRound], across_runs: bool = False
) -> AssociationMatrix:
    """Pool endorsements over ``rounds`` into a person-job association matrix.

    Entry (a, t) is the share of parsed assessments of ``a`` whose suitable
    roles include ``t``.  Rows are keyed by display label, so pooling across
    runs lines up ``person_k`` (or a demographic profile name) between runs.
    """
    rounds = [r for r in rounds if r.valid]
    if not rounds:
        raise EvaluationError("no valid evaluation rounds")
    runs = sorted({r.run_id for r in rounds})
    if not across_runs and len(runs) > 1:
        raise EvaluationError("rounds come from several runs; pass across_runs=True to pool them")
    endorsed: dict[tuple[str, str], int] = {}
    seen: dict[str, int] = {}
    tasks: list[str] = []
    for r in rounds:
        for t in r.tasks:
            if t not in tasks:
                tasks.append(t)
        for p in r.parsed:
            label = r.labels[p.subject]
            seen[label] = seen.get(label, 0) + 1
            for t in p.roles:
                endorsed[(label, t)] = endorsed.get((label, t), 0) + 1
    agents = sorted(seen, key=_label_key)
    values = {(a, t): endorsed.get((a, t), 0) / seen[a] for a in agents for t in tasks}
    return AssociationMatrix(values, tuple(agents), tuple(tasks), tuple(runs), dict(seen))


def _label_key(label: str):
    m = re.match(r"^person_(\d+)$", label)
    return (0, int(m.group(1)), "") if m else (1, 0, label)
