"""The synchronized episode cycle.

Each episode runs four phases in order:

1. allocation   - an assignment maps every agent to one task
2. execution    - one outcome per agent, recorded as a Td event
3. broadcast    - an Sn notification per outcome, then every message queued
                  in the previous episode, in send order
4. interaction  - every agent acts on its visible history; new messages are
                  queued for the next episode's broadcast

Agents act logically simultaneously: no agent sees another's same-episode
messages, and actions are committed in agent order.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from . import rng as rngmod
from .agents.actions import AgentAction, Observation
from .agents.backends import build_backends, react_cycle
from .agents.llm import LlmConfigError, client_from_params
from .agents.prompts import build_system_prompt, template_hashes
from .core import (
    AgentId,
    Assignment,
    AssignmentMode,
    EpisodeRecord,
    EventKind,
    Event,
    Message,
    Outcome,
    SimConfig,
    TaskType,
    neutral_name,
    visible_events,
    validate_config,
)
from .evaluation import EvaluationRound, LlmParser, RuleParser, evaluate_round
from .logio import RunLog, decision_record, episode_record, evaluation_record
from .supervisor import (
    LlmBoss,
    ScriptedBoss,
    SupervisorDecision,
    SupervisorError,
    supervisor_assign,
    validate_assignment,
)

logger = logging.getLogger(__name__)

Sink = Callable[[dict], None]


class TransportExhausted(RuntimeError):
    """Every agent's backend failed in the same episode; the run cannot continue."""


@dataclass
class RunState:
    config: SimConfig
    assign_rng: np.random.Generator
    outcome_rng: np.random.Generator
    history: list[EpisodeRecord] = field(default_factory=list)
    pending_messages: list[Event] = field(default_factory=list)
    current_episode: int = 0
    open_events: list[Event] = field(default_factory=list)
    decisions: list[SupervisorDecision] = field(default_factory=list)
    open_assignment: Optional[Assignment] = None
    # per agent: (closed episodes consumed, events visible in them)
    _seen: dict[int, tuple[int, list[Event]]] = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def new(cls, config: SimConfig) -> "RunState":
        return cls(
            config,
            rngmod.stream(config.seed, rngmod.ASSIGNMENT),
            rngmod.stream(config.seed, rngmod.OUTCOME),
        )

    @property
    def agents(self) -> tuple[AgentId, ...]:
        return self.config.agents

    @property
    def open_episode(self) -> int:
        return self.current_episode + 1

    def names(self) -> dict[int, str]:
        return {a.index: a.display_name for a in self.agents}


Assigner = Callable[[RunState], Assignment]


def assign_random(state: RunState) -> Assignment:
    """Uniform, independent task draw per agent, consumed in agent order."""
    tasks = state.config.tasks
    if not tasks:
        raise ValueError("empty task set")
    return Assignment({a.index: tasks[int(state.assign_rng.integers(len(tasks)))].id for a in sorted(state.agents)})


def sample_outcome(state: RunState, agent: AgentId | int, task: TaskType | str) -> Outcome:
    # identity of agent and task deliberately plays no part
    return Outcome.SUCCESS if state.outcome_rng.random() < state.config.p0 else Outcome.FAILURE


def broadcast(state: RunState) -> list[Event]:
    """Announce this episode's outcomes, then deliver last episode's messages."""
    k = state.open_episode
    out = []
    for e in state.open_events:
        if e.kind is EventKind.TD:
            r = e.payload
            out.append(Event.sn(k, f"{neutral_name(r.agent)} {r.outcome.value} as {r.task}", tag="outcome"))
    for queued in state.pending_messages:
        msg: Message = queued.payload
        sent = msg.sent_episode if msg.sent_episode is not None else queued.episode
        out.append(Event.im(k, Message(msg.sender, msg.channel, msg.body, msg.sentiment, sent)))
    state.pending_messages = []
    state.open_events.extend(out)
    return out


def visible_history(state: RunState, agent: AgentId | int) -> list[Event]:
    """Everything ``agent`` can see so far, including the open episode.

    Pending messages are never included: they are not yet delivered.
    """
    idx = agent.index if isinstance(agent, AgentId) else agent
    consumed, seen = state._seen.get(idx, (0, []))
    for rec in state.history[consumed:]:
        seen.extend(visible_events(rec.events, idx))
    state._seen[idx] = (len(state.history), seen)
    return seen + visible_events(state.open_events, idx)


def interaction_phase(
    state: RunState,
    backends: Mapping[int, Any],
    system_prompts: Optional[Mapping[int, str]] = None,
    max_workers: int = 1,
) -> list[Event]:
    """Run one act cycle per agent and queue the resulting messages.

    Failures and rejected messages are recorded as Sn events in the open
    episode.  Raises :class:`TransportExhausted` if every agent failed on
    transport.
    """
    k = state.open_episode
    n = state.config.n_agents
    names = state.names()
    agents = sorted(state.agents)
    records = {e.payload.agent: e.payload for e in state.open_events if e.kind is EventKind.TD}
    # snapshot before anyone acts: same-episode messages stay invisible
    observations = [
        Observation(a.index, k, tuple(visible_history(state, a)), records[a.index].task, records[a.index].outcome)
        for a in agents
    ]
    prompts = system_prompts or {}

    def act(obs: Observation) -> AgentAction:
        return react_cycle(backends[obs.agent], obs, prompts.get(obs.agent, ""), n)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            actions = list(pool.map(act, observations))
    else:
        actions = [act(o) for o in observations]

    created: list[Event] = []
    notes: list[Event] = []
    transport_failures = 0
    for a, action in zip(agents, actions):
        if action.error:
            transport_failures += action.error.startswith("transport failure")
            notes.append(Event.sn(k, f"{neutral_name(a.index)} could not act this episode: {action.error}", tag="backend_failure"))
        for problem in action.rejected:
            logger.warning("episode %d: message from %s rejected: %s", k, names[a.index], problem)
            notes.append(Event.sn(k, f"a message from {neutral_name(a.index)} was rejected: {problem}", tag="rejected_message"))
        for m in action.messages:
            created.append(Event.im(k, Message(a.index, m.channel, m.body, m.sentiment, k)))
    state.open_events.extend(notes)
    state.pending_messages.extend(created)
    if agents and transport_failures == len(agents):
        raise TransportExhausted(f"every agent backend failed on transport in episode {k}")
    return created


def run_episode(
    state: RunState,
    assigner: Assigner = assign_random,
    backends: Optional[Mapping[int, Any]] = None,
    *,
    system_prompts: Optional[Mapping[int, str]] = None,
    max_workers: int = 1,
) -> EpisodeRecord:
    """Run allocation, execution, broadcast and interaction for the next episode."""
    if state.current_episode >= state.config.episodes:
        raise ValueError("all configured episodes have already run")
    k = state.open_episode
    state.open_events = []
    assignment = assigner(state)
    validate_assignment(assignment, state.agents, state.config.tasks)
    state.open_assignment = assignment
    for a in sorted(state.agents):
        task = assignment[a.index]
        state.open_events.append(Event.td(k, a.index, task, sample_outcome(state, a, task)))
    broadcast(state)
    if backends is not None:
        interaction_phase(state, backends, system_prompts, max_workers)
    record = EpisodeRecord(k, tuple(state.open_events))
    state.history.append(record)
    state.current_episode = k
    state.open_events = []
    state.open_assignment = None
    return record


def supervisor_assigner(boss: Any) -> Assigner:
    """Assigner that asks ``boss`` and falls back to a random draw on failure.

    The decision (or the fallback) is announced as an Sn event and kept on
    the state for logging.
    """

    def assign(state: RunState) -> Assignment:
        k = state.open_episode
        try:
            decision = supervisor_assign(state.history, state.agents, state.config.tasks, boss, episode=k)
            state.open_events.append(Event.sn(k, f"The supervisor assigned tasks: {decision.rationale}", tag="supervisor"))
        except SupervisorError as exc:
            # an empty history is expected at episode 1; anything else is a real failure
            log = logger.warning if state.history else logger.info
            log("episode %d: supervisor failed (%s); using random assignment", k, exc)
            decision = SupervisorDecision(k, assign_random(state), f"fallback to random assignment: {exc}", degraded=True)
            state.open_events.append(
                Event.sn(k, "The supervisor was unavailable; tasks were assigned at random.", tag="degraded")
            )
        state.decisions.append(decision)
        return decision.assignment

    return assign


def build_boss(config: SimConfig) -> Any:
    if config.boss_policy == "llm":
        return LlmBoss(client_from_params(dict(config.boss_params)))
    seed = config.boss_params.get("policy_seed", rngmod.derive_seed(config.seed, rngmod.BOSS))
    return ScriptedBoss(config.boss_policy, seed)


def build_parser(config: SimConfig) -> Any:
    if config.parser == "llm":
        return LlmParser(client_from_params(dict(config.parser_params)))
    return RuleParser()


def run_id_for(config: SimConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    return "run-" + hashlib.sha256(blob).hexdigest()[:12]


def evaluation_episodes(config: SimConfig) -> dict[int, bool]:
    """Episodes after which an evaluation round runs, mapped to ``probe``."""
    ends = set(config.phase_ends())
    out = {}
    if config.probe_every:
        for k in range(config.probe_every, config.episodes + 1, config.probe_every):
            out[k] = True
    for k in ends:
        out[k] = False
    return dict(sorted(out.items()))


def _transport_trace(backends: Mapping[int, Any], *extra: Any) -> list[dict]:
    trace = []
    for owner, obj in [(f"agent:{k}", b) for k, b in sorted(backends.items())] + [(f"aux:{i}", o) for i, o in enumerate(extra)]:
        client = getattr(obj, "client", None)
        for entry in getattr(client, "trace", []) or []:
            trace.append({"owner": owner, **entry})
    return trace


def run_experiment(
    config: SimConfig,
    backends: Optional[Mapping[int, Any]] = None,
    *,
    boss: Any = None,
    parser: Any = None,
    sink: Optional[Sink] = None,
    max_workers: int = 1,
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc),
) -> RunLog:
    """Run episodes 1..E, evaluating at each phase end (and probe episodes).

    Records stream to ``sink`` as they are produced.  An unrecoverable
    backend failure ends the run early; the returned log then has status
    ``"error"`` and an error record describing the cause.
    """
    validate_config(config)
    emit = sink or (lambda record: None)
    backends = dict(backends) if backends is not None else build_backends(config)
    parser = parser if parser is not None else build_parser(config)
    hierarchical = config.mode is AssignmentMode.HIERARCHICAL
    if hierarchical and boss is None:
        boss = build_boss(config)
    run_id = run_id_for(config)
    prompts = {p.agent.index: build_system_prompt(p, config) for p in config.agent_profiles()}
    meta = {
        "run_id": run_id,
        "seed": config.seed,
        "config": config.to_dict(),
        "template_hashes": template_hashes(),
        "system_prompts": {str(k): v for k, v in sorted(prompts.items())},
        "software_version": __version__,
        "started_at": clock().isoformat(),
    }
    log = RunLog(meta=meta)
    emit(log.meta_record())

    state = RunState.new(config)
    boss_assigner = supervisor_assigner(boss) if hierarchical else None
    evals = evaluation_episodes(config)
    try:
        for k in range(1, config.episodes + 1):
            use_boss = hierarchical and k >= (config.hierarchical_start_episode or 1)
            n_decisions = len(state.decisions)
            record = run_episode(
                state,
                boss_assigner if use_boss else assign_random,
                backends,
                system_prompts=prompts,
                max_workers=max_workers,
            )
            for decision in state.decisions[n_decisions:]:
                log.supervisor_decisions.append(decision)
                emit(decision_record(decision))
            log.episodes.append(record)
            emit(episode_record(record))
            if k in evals:
                rnd = evaluate_round(
                    state.agents,
                    [e for rec in state.history for e in rec.events],
                    backends,
                    parser,
                    episode=k,
                    tasks=config.tasks,
                    probe=evals[k],
                    run_id=run_id,
                    max_workers=max_workers,
                )
                log.evaluations.append(rnd)
                emit(evaluation_record(rnd))
        log.status = "complete"
    except TransportExhausted as exc:
        log.status, log.error = "error", {"kind": "transport_exhausted", "message": str(exc)}
    except LlmConfigError as exc:
        log.status, log.error = "error", {"kind": "llm_config", "message": str(exc)}
    if log.status == "error":
        logger.error("run %s aborted: %s", run_id, log.error["message"])
    log.pending = list(state.pending_messages)
    log.transport_trace = _transport_trace(backends, boss, parser)
    for rec in log.tail_records():
        emit(rec)
    return log


def rounds_of(log: RunLog, include_probes: bool = True) -> list[EvaluationRound]:
    return [r for r in log.evaluations if include_probes or not r.probe]


def outcome_counts(episodes: Sequence[EpisodeRecord]) -> tuple[int, int]:
    """(successes, attempts) over all Td events."""
    tds = [e.payload for rec in episodes for e in rec.events if e.kind is EventKind.TD]
    return sum(r.outcome is Outcome.SUCCESS for r in tds), len(tds)
