"""Backend construction and the observation → thought → action cycle."""

from __future__ import annotations

import json
import logging
from typing import Any, Mapping, Optional, Sequence

from ..core import MESSAGE_BUDGET, BackendKind, BackendSpec, Channel, SimConfig, TaskType
from .. import rng as rngmod
from .actions import AgentAction, AssessmentRequest, FcParseError, Observation, Outgoing, fc_parse
from .llm import LlmClient, TransportError, client_from_params
from .policies import POLICIES
from .prompts import render_events, template

logger = logging.getLogger(__name__)


class LlmBackend:
    """Agent driven by a chat model.

    The raw reply goes through the fc_caller: either a second model call with
    a strict JSON contract (``fc_mode="llm"``, re-asked once on a violation)
    or the rule-based directive grammar (``fc_mode="rules"``).
    """

    kind = BackendKind.LLM_HTTP

    def __init__(
        self,
        agent: int,
        client: LlmClient,
        *,
        n_agents: int,
        tasks: Sequence[TaskType],
        names: Mapping[int, str],
        fc_mode: str = "llm",
    ):
        self.agent = agent
        self.client = client
        self.n_agents = n_agents
        self.tasks = tuple(tasks)
        self.names = dict(names)
        self.fc_mode = fc_mode

    def act(self, observation: Observation, system_prompt: str = "") -> AgentAction:
        turn = template("agent_turn_v1").render(
            episode=observation.episode,
            task=observation.own_assignment,
            outcome=observation.own_outcome.value,
            events=render_events(observation.visible_events, self.names),
        )
        raw = self.client.chat(
            [{"role": "system", "content": system_prompt}, {"role": "user", "content": turn}]
        )
        if self.fc_mode == "rules":
            return fc_parse(raw, sender=self.agent, n_agents=self.n_agents, names=self.names)
        return self.fc_caller(raw)

    def fc_caller(self, raw: str) -> AgentAction:
        prompt = template("fc_caller_v1").render(
            budget=MESSAGE_BUDGET, name=self.names.get(self.agent, f"person_{self.agent}"), raw=raw
        )
        messages = [{"role": "user", "content": prompt}]
        problem = ""
        for _ in range(2):
            reply = self.client.chat(messages, temperature=0)
            try:
                return self._decode(reply)
            except (ValueError, KeyError, TypeError) as exc:
                problem = str(exc)
                messages = messages + [
                    {"role": "assistant", "content": reply},
                    {"role": "user", "content": f"That reply broke the JSON contract ({problem}). Reply with the JSON object only."},
                ]
        raise FcParseError(f"fc_caller reply violated the schema twice: {problem}")

    def _decode(self, reply: str) -> AgentAction:
        start, end = reply.find("{"), reply.rfind("}")
        data = json.loads(reply[start : end + 1] if start >= 0 else reply)
        lookup = {v.casefold(): k for k, v in self.names.items()}

        def who(token: str) -> int:
            token = str(token).strip()
            if token.startswith("person_") and token[7:].isdigit():
                return int(token[7:])
            return lookup[token.casefold()]

        out, rejected = [], []
        for m in data.get("messages", []):
            kind = m["channel"]
            if kind == "global":
                channel = Channel.everyone()
            elif kind == "bilateral":
                channel = Channel.bilateral(who(m["to"][0]))
            elif kind == "group":
                channel = Channel.group([who(t) for t in m["to"]] + [self.agent])
            else:
                raise ValueError(f"unknown channel {kind!r}")
            problem = channel.problem(self.agent, self.n_agents)
            if problem:
                rejected.append(problem)
            elif len(out) >= MESSAGE_BUDGET:
                rejected.append("message budget exceeded")
            else:
                out.append(Outgoing(channel, str(m["body"])))
        return AgentAction(str(data.get("thought", "")), tuple(out), tuple(rejected))

    def assess(self, request: AssessmentRequest) -> str:
        return self.client.chat([{"role": "user", "content": request.prompt}])


def react_cycle(
    backend: Any, observation: Observation, system_prompt: str = "", n_agents: Optional[int] = None
) -> AgentAction:
    """Run one observation-thought-action cycle and return the checked action.

    Transport exhaustion and unparseable replies become a silent action whose
    ``error`` explains what happened; the caller records it.
    """
    try:
        action = backend.act(observation, system_prompt)
    except TransportError as exc:
        logger.warning("agent %d transport failure: %s", observation.agent, exc)
        return AgentAction.silent(error=f"transport failure: {exc}")
    except FcParseError as exc:
        logger.warning("agent %d reply unparseable: %s", observation.agent, exc)
        return AgentAction.silent(error=f"unparseable reply: {exc}")
    if n_agents is not None:
        action = action.checked(observation.agent, n_agents)
    return action


def build_backend(spec: BackendSpec, agent: int, config: SimConfig, **client_kw) -> Any:
    if spec.kind is BackendKind.LLM_HTTP:
        names = {a.index: a.display_name for a in config.agents}
        return LlmBackend(
            agent,
            client_from_params(dict(spec.params), **client_kw),
            n_agents=config.n_agents,
            tasks=config.tasks,
            names=names,
            fc_mode=spec.params.get("fc_mode", "llm"),
        )
    seed = spec.params.get("policy_seed")
    if seed is None:
        seed = rngmod.derive_seed(config.seed, rngmod.POLICY, agent)
    return POLICIES[spec.kind](agent, config.n_agents, config.tasks, seed, float(spec.params.get("beta", 1.0)))


def build_backends(config: SimConfig, **client_kw) -> dict[int, Any]:
    return {a.index: build_backend(config.backend_for(a.index), a.index, config, **client_kw) for a in config.agents}
