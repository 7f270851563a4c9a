"""Shared domain types.

Agents are referred to by their integer index everywhere inside events and
mappings; :class:`AgentId` carries the display name used in prompts.  Tasks
are referred to by their string id.  Every type here is an immutable value
with a ``to_dict``/``from_dict`` pair that defines its log encoding.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional, Union

MESSAGE_BUDGET = 3
RATING_MIN = 1
RATING_MAX = 10
NEUTRAL_NAME = re.compile(r"^person_(\d+)$")


class Warmth(str, Enum):
    WARM = "warm"
    COLD = "cold"


class Competence(str, Enum):
    COMPETENT = "competent"
    INCOMPETENT = "incompetent"


class ProfileMode(str, Enum):
    NEUTRAL = "neutral"
    DEMOGRAPHIC = "demographic"


class AssignmentMode(str, Enum):
    RANDOM = "random"
    HIERARCHICAL = "hierarchical"


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"


class EventKind(str, Enum):
    TD = "Td"
    IM = "Im"
    SN = "Sn"


class ChannelKind(str, Enum):
    BILATERAL = "bilateral"
    GROUP = "group"
    GLOBAL = "global"


class BackendKind(str, Enum):
    SCRIPTED_SILENT = "scripted_silent"
    SCRIPTED_UNIFORM_RANDOM = "scripted_uniform_random"
    SCRIPTED_CONFIRMATION_BIAS = "scripted_confirmation_bias"
    SCRIPTED_HALO = "scripted_halo"
    LLM_HTTP = "llm_http"


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def neutral_name(index: int) -> str:
    return f"person_{index}"


@dataclass(frozen=True, order=True)
class AgentId:
    index: int
    display_name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"agent index must be positive, got {self.index}")
        if not self.display_name:
            object.__setattr__(self, "display_name", neutral_name(self.index))

    def __str__(self) -> str:
        return self.display_name

    def to_dict(self) -> dict:
        return {"index": self.index, "display_name": self.display_name}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AgentId":
        return cls(int(d["index"]), d.get("display_name", ""))


@dataclass(frozen=True)
class AgentProfile:
    agent: AgentId
    mode: ProfileMode = ProfileMode.NEUTRAL
    age: Optional[int] = None
    gender: Optional[str] = None
    appearance: Optional[str] = None

    def __post_init__(self):
        demographic = (self.age, self.gender, self.appearance)
        if self.mode is ProfileMode.NEUTRAL:
            if any(v is not None for v in demographic):
                raise ValueError("neutral profiles carry no age, gender or appearance")
            if self.agent.display_name != neutral_name(self.agent.index):
                raise ValueError(
                    f"neutral display name must be {neutral_name(self.agent.index)!r}"
                )
        else:
            if self.age is None or self.age < 1:
                raise ValueError("demographic profiles need a positive age")
            if not self.gender or not self.appearance:
                raise ValueError("demographic profiles need gender and appearance")

    @classmethod
    def neutral(cls, index: int) -> "AgentProfile":
        return cls(AgentId(index))

    def to_dict(self) -> dict:
        return {
            "agent": self.agent.to_dict(),
            "mode": self.mode.value,
            "age": self.age,
            "gender": self.gender,
            "appearance": self.appearance,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AgentProfile":
        return cls(
            AgentId.from_dict(d["agent"]),
            ProfileMode(d.get("mode", "neutral")),
            d.get("age"),
            d.get("gender"),
            d.get("appearance"),
        )


@dataclass(frozen=True)
class TaskType:
    id: str
    warmth: Warmth
    competence: Competence

    def to_dict(self) -> dict:
        return {"id": self.id, "warmth": self.warmth.value, "competence": self.competence.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TaskType":
        return cls(d["id"], Warmth(d["warmth"]), Competence(d["competence"]))


DEFAULT_TASKS: tuple[TaskType, ...] = (
    TaskType("data_scientist", Warmth.WARM, Competence.COMPETENT),
    TaskType("manager", Warmth.COLD, Competence.COMPETENT),
    TaskType("rehabilitation_counselor", Warmth.WARM, Competence.INCOMPETENT),
    TaskType("janitor", Warmth.COLD, Competence.INCOMPETENT),
    TaskType("truck_driver", Warmth.COLD, Competence.INCOMPETENT),
)


@dataclass(frozen=True)
class BackendSpec:
    """Which decision backend drives an agent (or the boss) and how.

    ``params`` for scripted kinds: ``beta`` (bias strength in [0, 1]).
    For ``llm_http``: ``endpoint``, ``model``, ``temperature``,
    ``api_key_env``, optionally ``fixture_dir`` and ``fc_mode``
    (``"llm"`` or ``"rules"``).
    """

    kind: BackendKind = BackendKind.SCRIPTED_SILENT
    params: Mapping[str, Any] = field(default_factory=dict)

    def violations(self) -> list[str]:
        out = []
        if self.kind is BackendKind.LLM_HTTP:
            for key in ("endpoint", "model"):
                if not self.params.get(key):
                    out.append(f"llm_http backend requires {key!r}")
        else:
            beta = self.params.get("beta", 1.0)
            if not (0.0 <= float(beta) <= 1.0):
                out.append(f"beta in [0,1] violated (got {beta})")
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "params": dict(sorted(self.params.items()))}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BackendSpec":
        return cls(BackendKind(d["kind"]), dict(d.get("params", {})))


@dataclass(frozen=True)
class SimConfig:
    n_agents: int
    tasks: tuple[TaskType, ...] = DEFAULT_TASKS
    episodes: int = 20
    p0: float = 0.8
    mode: AssignmentMode = AssignmentMode.RANDOM
    hierarchical_start_episode: Optional[int] = None
    seed: int = 0
    profile_mode: ProfileMode = ProfileMode.NEUTRAL
    backend_spec: Union[BackendSpec, Mapping[int, BackendSpec]] = field(default_factory=BackendSpec)
    profiles: tuple[AgentProfile, ...] = ()
    boss_policy: str = "repeat_last_success"
    boss_params: Mapping[str, Any] = field(default_factory=dict)
    parser: str = "rules"
    parser_params: Mapping[str, Any] = field(default_factory=dict)
    probe_every: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "profiles", tuple(self.profiles))

    @property
    def agents(self) -> tuple[AgentId, ...]:
        if self.profile_mode is ProfileMode.DEMOGRAPHIC and self.profiles:
            return tuple(p.agent for p in sorted(self.profiles, key=lambda p: p.agent))
        return tuple(AgentId(i) for i in range(1, self.n_agents + 1))

    def agent_profiles(self) -> tuple[AgentProfile, ...]:
        if self.profile_mode is ProfileMode.DEMOGRAPHIC:
            return tuple(sorted(self.profiles, key=lambda p: p.agent))
        return tuple(AgentProfile.neutral(i) for i in range(1, self.n_agents + 1))

    def task(self, task_id: str) -> TaskType:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)

    def backend_for(self, index: int) -> BackendSpec:
        if isinstance(self.backend_spec, BackendSpec):
            return self.backend_spec
        return self.backend_spec[index]

    def phase_ends(self) -> tuple[int, ...]:
        if self.mode is AssignmentMode.HIERARCHICAL and self.hierarchical_start_episode:
            first = self.hierarchical_start_episode - 1
            if first >= 1:
                return (first, self.episodes)
        return (self.episodes,)

    def to_dict(self) -> dict:
        if isinstance(self.backend_spec, BackendSpec):
            backend = self.backend_spec.to_dict()
        else:
            backend = {str(k): v.to_dict() for k, v in sorted(self.backend_spec.items())}
        return {
            "n_agents": self.n_agents,
            "tasks": [t.to_dict() for t in self.tasks],
            "episodes": self.episodes,
            "p0": self.p0,
            "mode": self.mode.value,
            "hierarchical_start_episode": self.hierarchical_start_episode,
            "seed": self.seed,
            "profile_mode": self.profile_mode.value,
            "backend_spec": backend,
            "profiles": [p.to_dict() for p in self.profiles],
            "boss_policy": self.boss_policy,
            "boss_params": dict(sorted(self.boss_params.items())),
            "parser": self.parser,
            "parser_params": dict(sorted(self.parser_params.items())),
            "probe_every": self.probe_every,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimConfig":
        backend = d.get("backend_spec", {"kind": BackendKind.SCRIPTED_SILENT.value})
        if "kind" in backend:
            spec: Any = BackendSpec.from_dict(backend)
        else:
            spec = {int(k): BackendSpec.from_dict(v) for k, v in backend.items()}
        return cls(
            n_agents=int(d["n_agents"]),
            tasks=tuple(TaskType.from_dict(t) for t in d["tasks"]) if "tasks" in d else DEFAULT_TASKS,
            episodes=int(d.get("episodes", 20)),
            p0=float(d.get("p0", 0.8)),
            mode=AssignmentMode(d.get("mode", "random")),
            hierarchical_start_episode=d.get("hierarchical_start_episode"),
            seed=int(d.get("seed", 0)),
            profile_mode=ProfileMode(d.get("profile_mode", "neutral")),
            backend_spec=spec,
            profiles=tuple(AgentProfile.from_dict(p) for p in d.get("profiles", [])),
            boss_policy=d.get("boss_policy", "repeat_last_success"),
            boss_params=dict(d.get("boss_params", {})),
            parser=d.get("parser", "rules"),
            parser_params=dict(d.get("parser_params", {})),
            probe_every=d.get("probe_every"),
        )


def validate_config(config: SimConfig) -> SimConfig:
    """Return ``config`` unchanged if every invariant holds.

    Raises :class:`ConfigError` listing every violated invariant otherwise.
    """
    v: list[str] = []
    if config.n_agents < 2:
        v.append("n_agents ≥ 2 violated")
    if len(config.tasks) < 1:
        v.append("task set must be non-empty")
    ids = [t.id for t in config.tasks]
    if len(set(ids)) != len(ids):
        v.append("task ids must be unique")
    if config.episodes < 1:
        v.append("episodes ≥ 1 violated")
    if not (isinstance(config.p0, (int, float)) and 0.0 <= config.p0 <= 1.0) or math.isnan(config.p0):
        v.append("p0 ∈ [0,1] violated")
    if not (0 <= config.seed < 2**64):
        v.append("seed must be a 64-bit unsigned integer")
    if config.mode is AssignmentMode.HIERARCHICAL:
        start = config.hierarchical_start_episode
        if start is None or start < 1:
            v.append("hierarchical mode requires a positive hierarchical_start_episode")
        elif start > config.episodes:
            v.append("hierarchical_start_episode ≤ episodes violated")
    if config.probe_every is not None and config.probe_every < 1:
        v.append("probe_every must be positive")
    if config.profile_mode is ProfileMode.DEMOGRAPHIC:
        if len(config.profiles) != config.n_agents:
            v.append(
                f"demographic mode needs {config.n_agents} profiles, got {len(config.profiles)}"
            )
        else:
            indices = sorted(p.agent.index for p in config.profiles)
            if indices != list(range(1, config.n_agents + 1)):
                v.append("profile agent indices must form 1..n")
            if any(p.mode is not ProfileMode.DEMOGRAPHIC for p in config.profiles):
                v.append("demographic mode needs demographic profiles")
    if isinstance(config.backend_spec, BackendSpec):
        v.extend(config.backend_spec.violations())
    else:
        missing = set(range(1, config.n_agents + 1)) - set(config.backend_spec)
        if missing:
            v.append(f"no backend configured for agents {sorted(missing)}")
        for spec in config.backend_spec.values():
            v.extend(spec.violations())
    if config.parser not in ("rules", "llm"):
        v.append(f"unknown parser {config.parser!r}")
    if v:
        raise ConfigError(v)
    return config


# -- events -----------------------------------------------------------------


@dataclass(frozen=True)
class Channel:
    kind: ChannelKind
    recipient: Optional[int] = None
    participants: frozenset[int] = frozenset()

    @classmethod
    def bilateral(cls, recipient: int) -> "Channel":
        return cls(ChannelKind.BILATERAL, recipient=recipient)

    @classmethod
    def group(cls, participants: Iterable[int]) -> "Channel":
        return cls(ChannelKind.GROUP, participants=frozenset(participants))

    @classmethod
    def everyone(cls) -> "Channel":
        return cls(ChannelKind.GLOBAL)

    def problem(self, sender: int, n_agents: int) -> Optional[str]:
        """Why this channel is invalid for ``sender`` in an ``n_agents`` run, or None."""
        if self.kind is ChannelKind.BILATERAL:
            if self.recipient == sender:
                return "self-addressed bilateral message"
            if self.recipient is None or not 1 <= self.recipient <= n_agents:
                return f"unknown recipient {self.recipient}"
        elif self.kind is ChannelKind.GROUP:
            k = len(self.participants)
            if not 2 <= k < n_agents:
                return f"group size {k} outside 2 ≤ k < {n_agents}"
            if sender not in self.participants:
                return "sender missing from group participants"
            if any(not 1 <= p <= n_agents for p in self.participants):
                return "unknown group participant"
        return None

    def reaches(self, agent: int, sender: int) -> bool:
        if agent == sender or self.kind is ChannelKind.GLOBAL:
            return True
        if self.kind is ChannelKind.BILATERAL:
            return agent == self.recipient
        return agent in self.participants

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.kind is ChannelKind.BILATERAL:
            d["recipient"] = self.recipient
        elif self.kind is ChannelKind.GROUP:
            d["participants"] = sorted(self.participants)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Channel":
        kind = ChannelKind(d["kind"])
        if kind is ChannelKind.BILATERAL:
            return cls.bilateral(int(d["recipient"]))
        if kind is ChannelKind.GROUP:
            return cls.group(int(p) for p in d["participants"])
        return cls.everyone()


@dataclass(frozen=True)
class Sentiment:
    """Structured tag on a scripted message: who is praised/criticised for which role."""

    tone: str
    target: int
    role: str

    def __post_init__(self):
        if self.tone not in ("praise", "criticism"):
            raise ValueError(f"unknown tone {self.tone!r}")

    def to_dict(self) -> dict:
        return {"tone": self.tone, "target": self.target, "role": self.role}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Sentiment":
        return cls(d["tone"], int(d["target"]), d["role"])


@dataclass(frozen=True)
class TaskRecord:
    agent: int
    task: str
    outcome: Outcome

    def to_dict(self) -> dict:
        return {"agent": self.agent, "task": self.task, "outcome": self.outcome.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TaskRecord":
        return cls(int(d["agent"]), d["task"], Outcome(d["outcome"]))


@dataclass(frozen=True)
class Message:
    sender: int
    channel: Channel
    body: str
    sentiment: Optional[Sentiment] = None
    sent_episode: Optional[int] = None

    def to_dict(self) -> dict:
        d = {
            "sender": self.sender,
            "channel": self.channel.to_dict(),
            "body": self.body,
            "sent_episode": self.sent_episode,
        }
        if self.sentiment is not None:
            d["sentiment"] = self.sentiment.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Message":
        s = d.get("sentiment")
        return cls(
            int(d["sender"]),
            Channel.from_dict(d["channel"]),
            d["body"],
            Sentiment.from_dict(s) if s else None,
            d.get("sent_episode"),
        )


@dataclass(frozen=True)
class Notification:
    text: str
    tag: str = "info"

    def to_dict(self) -> dict:
        return {"text": self.text, "tag": self.tag}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Notification":
        return cls(d["text"], d.get("tag", "info"))


Payload = Union[TaskRecord, Message, Notification]
_PAYLOAD_TYPES = {EventKind.TD: TaskRecord, EventKind.IM: Message, EventKind.SN: Notification}


@dataclass(frozen=True)
class Event:
    kind: EventKind
    episode: int
    payload: Payload

    def __post_init__(self):
        expected = _PAYLOAD_TYPES[self.kind]
        if not isinstance(self.payload, expected):
            raise TypeError(f"{self.kind.value} event needs a {expected.__name__} payload")
        if self.episode < 1:
            raise ValueError("episode must be positive")

    @classmethod
    def td(cls, episode: int, agent: int, task: str, outcome: Outcome) -> "Event":
        return cls(EventKind.TD, episode, TaskRecord(agent, task, outcome))

    @classmethod
    def sn(cls, episode: int, text: str, tag: str = "info") -> "Event":
        return cls(EventKind.SN, episode, Notification(text, tag))

    @classmethod
    def im(cls, episode: int, message: Message) -> "Event":
        return cls(EventKind.IM, episode, message)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "episode": self.episode, "payload": self.payload.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Event":
        kind = EventKind(d["kind"])
        return cls(kind, int(d["episode"]), _PAYLOAD_TYPES[kind].from_dict(d["payload"]))


@dataclass(frozen=True)
class EpisodeRecord:
    index: int
    events: tuple[Event, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        for e in self.events:
            if e.episode != self.index:
                raise ValueError(f"event of episode {e.episode} in record {self.index}")

    def of_kind(self, kind: EventKind) -> list[Event]:
        return [e for e in self.events if e.kind is kind]

    def to_dict(self) -> dict:
        return {"index": self.index, "events": [e.to_dict() for e in self.events]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EpisodeRecord":
        return cls(int(d["index"]), tuple(Event.from_dict(e) for e in d["events"]))


def visible_events(events: Iterable[Event], agent: int) -> list[Event]:
    """Filter a chronological event stream down to what ``agent`` can see.

    Task records and notifications are public.  A delivered message is visible
    to its sender, its bilateral recipient, its group participants, or to
    everyone when global.
    """
    out = []
    for e in events:
        if e.kind is EventKind.IM:
            msg = e.payload
            if not msg.channel.reaches(agent, msg.sender):
                continue
        out.append(e)
    return out


@dataclass(frozen=True)
class Assignment:
    pairs: Mapping[int, str]

    def __post_init__(self):
        object.__setattr__(self, "pairs", dict(sorted(self.pairs.items())))

    def __getitem__(self, agent: int) -> str:
        return self.pairs[agent]

    def __len__(self) -> int:
        return len(self.pairs)

    def items(self):
        return self.pairs.items()

    def to_dict(self) -> dict:
        return {str(k): v for k, v in self.pairs.items()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Assignment":
        return cls({int(k): v for k, v in d.items()})


# -- evaluation data --------------------------------------------------------


@dataclass(frozen=True)
class PeerAssessment:
    evaluator: int
    subject: int
    text: str
    failed: bool = False

    def __post_init__(self):
        if self.evaluator == self.subject:
            raise ValueError("an agent does not assess itself")

    def to_dict(self) -> dict:
        return {
            "evaluator": self.evaluator,
            "subject": self.subject,
            "text": self.text,
            "failed": self.failed,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PeerAssessment":
        return cls(int(d["evaluator"]), int(d["subject"]), d["text"], bool(d.get("failed", False)))


def clamp_rating(value: int) -> int:
    return max(RATING_MIN, min(RATING_MAX, int(value)))


@dataclass(frozen=True)
class ParsedAssessment:
    """Structured content of one assessment: endorsed roles and 1-10 ratings."""

    evaluator: int
    subject: int
    roles: frozenset[str] = frozenset()
    ratings: tuple[tuple[str, int], ...] = ()
    warmth: Optional[int] = None
    competence: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "roles", frozenset(self.roles))
        object.__setattr__(self, "ratings", tuple(sorted(dict(self.ratings).items())))
        for _, r in self.ratings:
            if not RATING_MIN <= r <= RATING_MAX:
                raise ValueError(f"rating {r} outside [1,10]")

    @property
    def rating_map(self) -> dict[str, int]:
        return dict(self.ratings)

    def primary_role(self, task_order: Iterable[str]) -> Optional[str]:
        """The endorsed role this evaluator rates highest (task order breaks ties)."""
        if not self.roles:
            return None
        rated = self.rating_map
        ranked = [t for t in task_order if t in self.roles]
        ranked += sorted(self.roles - set(ranked))
        return max(ranked, key=lambda t: (rated.get(t, 0), -ranked.index(t)))

    def to_dict(self) -> dict:
        return {
            "evaluator": self.evaluator,
            "subject": self.subject,
            "roles": sorted(self.roles),
            "ratings": dict(self.ratings),
            "warmth": self.warmth,
            "competence": self.competence,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ParsedAssessment":
        return cls(
            int(d["evaluator"]),
            int(d["subject"]),
            frozenset(d.get("roles", [])),
            tuple((k, int(v)) for k, v in d.get("ratings", {}).items()),
            d.get("warmth"),
            d.get("competence"),
        )


@dataclass(frozen=True)
class RoleMappings:
    """Agent→roles and role→agents mappings plus the ratings behind them.

    ``ratings`` maps ``(agent, task_id)`` to every rating that pair received
    in the round, in evaluator order.
    """

    agent_to_roles: Mapping[int, frozenset[str]]
    role_to_agents: Mapping[str, frozenset[int]]
    ratings: Mapping[tuple[int, str], tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for a, roles in self.agent_to_roles.items():
            for t in roles:
                if a not in self.role_to_agents.get(t, ()):
                    raise ValueError(f"agent {a} lists role {t} but the reverse entry is missing")
        for t, agents in self.role_to_agents.items():
            for a in agents:
                if t not in self.agent_to_roles.get(a, ()):
                    raise ValueError(f"role {t} lists agent {a} but the reverse entry is missing")
        for values in self.ratings.values():
            if any(not RATING_MIN <= r <= RATING_MAX for r in values):
                raise ValueError("ratings must lie in [1,10]")

    @classmethod
    def from_parsed(cls, parsed: Iterable[ParsedAssessment]) -> "RoleMappings":
        a2r: dict[int, set[str]] = {}
        r2a: dict[str, set[int]] = {}
        ratings: dict[tuple[int, str], list[int]] = {}
        for p in sorted(parsed, key=lambda p: (p.subject, p.evaluator)):
            for t in p.roles:
                a2r.setdefault(p.subject, set()).add(t)
                r2a.setdefault(t, set()).add(p.subject)
            for t, r in p.ratings:
                ratings.setdefault((p.subject, t), []).append(r)
        return cls(
            {a: frozenset(v) for a, v in sorted(a2r.items())},
            {t: frozenset(v) for t, v in sorted(r2a.items())},
            {k: tuple(v) for k, v in sorted(ratings.items())},
        )

    def to_dict(self) -> dict:
        return {
            "agent_to_roles": {str(a): sorted(r) for a, r in sorted(self.agent_to_roles.items())},
            "role_to_agents": {t: sorted(a) for t, a in sorted(self.role_to_agents.items())},
            "ratings": [[a, t, list(v)] for (a, t), v in sorted(self.ratings.items())],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RoleMappings":
        return cls(
            {int(a): frozenset(r) for a, r in d["agent_to_roles"].items()},
            {t: frozenset(int(x) for x in a) for t, a in d["role_to_agents"].items()},
            {(int(a), t): tuple(v) for a, t, v in d.get("ratings", [])},
        )


@dataclass(frozen=True)
class MetricReport:
    """Stereotype indices at one point of a run.

    ``gbc``, ``cai`` and ``sii`` are None when the underlying data cannot
    define them (e.g. no rated low-competence job for CAI).
    """

    rsi: float
    gbc: Optional[float]
    cai: Optional[float]
    sii: Optional[float]
    n_categories: int
    episode: Optional[int] = None
    per_episode: tuple["MetricReport", ...] = ()
    inputs_digest: str = ""

    def __post_init__(self):
        object.__setattr__(self, "per_episode", tuple(self.per_episode))
        n = self.n_categories
        if n >= 2:
            lo, hi = math.log(n) / n, math.log(n)
            if not (lo - 1e-9 <= self.rsi <= hi + 1e-9):
                raise ValueError(f"rsi {self.rsi} outside [{lo}, {hi}]")
        for name in ("gbc", "cai", "sii"):
            v = getattr(self, name)
            if v is not None and not (-1e-12 <= v <= 1 + 1e-12):
                raise ValueError(f"{name} {v} outside [0,1]")

    def values(self) -> dict[str, Optional[float]]:
        return {"rsi": self.rsi, "gbc": self.gbc, "cai": self.cai, "sii": self.sii}

    def to_dict(self) -> dict:
        d = {
            **self.values(),
            "n_categories": self.n_categories,
            "episode": self.episode,
            "inputs_digest": self.inputs_digest,
        }
        if self.per_episode:
            d["per_episode"] = [r.to_dict() for r in self.per_episode]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MetricReport":
        return cls(
            d["rsi"],
            d.get("gbc"),
            d.get("cai"),
            d.get("sii"),
            int(d["n_categories"]),
            d.get("episode"),
            tuple(cls.from_dict(r) for r in d.get("per_episode", [])),
            d.get("inputs_digest", ""),
        )


BIAS_FLAG_NAMES = ("stereotype", "strong_stereotype", "halo", "confirmation", "role_congruity", "self_serving")


@dataclass(frozen=True)
class BiasFlags:
    stereotype: bool = False
    strong_stereotype: bool = False
    halo: bool = False
    confirmation: bool = False
    role_congruity: bool = False
    self_serving: bool = False
    indeterminate: bool = False

    def __post_init__(self):
        for name in BIAS_FLAG_NAMES:
            if not isinstance(getattr(self, name), bool):
                raise TypeError(f"{name} must be a boolean")
        if self.strong_stereotype and not self.stereotype:
            raise ValueError("strong_stereotype implies stereotype")

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in BIAS_FLAG_NAMES}
        d["indeterminate"] = self.indeterminate
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BiasFlags":
        return cls(**{k: d[k] for k in (*BIAS_FLAG_NAMES, "indeterminate") if k in d})
