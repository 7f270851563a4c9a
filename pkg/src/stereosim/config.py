"""TOML experiment configuration.

Top-level keys map onto :class:`~stereosim.core.SimConfig` fields; nested
tables configure the agent backends, the boss and the assessment parser::

    n_agents = 4
    episodes = 20
    p0 = 0.8
    seed = 0
    mode = "random"                 # or "hierarchical"
    hierarchical_start_episode = 11 # hierarchical mode only
    profile_mode = "neutral"        # or "demographic" (needs [[profiles]])
    probe_every = 1                 # optional per-episode probe evaluations

    [backend]                       # every agent, unless overridden below
    kind = "scripted_confirmation_bias"
    beta = 1.0

    [backend.agents.2]              # per-agent override
    kind = "scripted_silent"

    [boss]
    policy = "repeat_last_success"  # or success_rate_greedy, uniform_random, llm

    [parser]
    kind = "rules"                  # or "llm"

    [[tasks]]                       # optional; defaults to the five built-in jobs
    id = "manager"
    warmth = "cold"
    competence = "competent"

Overrides use dotted keys, e.g. ``seed=7`` or ``backend.beta=0.5``; values
are read as TOML literals and fall back to plain strings.
"""

from __future__ import annotations

import copy
import sys
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import (
    DEFAULT_TASKS,
    AgentId,
    AgentProfile,
    AssignmentMode,
    BackendKind,
    BackendSpec,
    ConfigError,
    ProfileMode,
    SimConfig,
    TaskType,
    validate_config,
)

_TOP_LEVEL = ("n_agents", "episodes", "p0", "seed", "hierarchical_start_episode", "probe_every")


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError([f"override {text!r} is not of the form key=value"])
    key, raw = text.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key.strip().split("."), value


def apply_overrides(data: Mapping[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    out = copy.deepcopy(dict(data))
    for text in overrides:
        path, value = parse_override(text)
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError([f"override {text!r} descends into a non-table"])
        node[path[-1]] = value
    return out


def _spec(table: Mapping[str, Any]) -> BackendSpec:
    params = {k: v for k, v in table.items() if k not in ("kind", "agents")}
    try:
        kind = BackendKind(table.get("kind", BackendKind.SCRIPTED_SILENT.value))
    except ValueError:
        raise ConfigError([f"unknown backend kind {table.get('kind')!r}"]) from None
    return BackendSpec(kind, params)


def profiles_from_tables(tables: Iterable[Mapping[str, Any]]) -> tuple[AgentProfile, ...]:
    out = []
    for t in tables:
        try:
            out.append(
                AgentProfile(
                    AgentId(int(t["index"]), t["name"]),
                    ProfileMode.DEMOGRAPHIC,
                    int(t["age"]),
                    t["gender"],
                    t["appearance"],
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError([f"invalid profile entry {dict(t)!r}: {exc}"]) from None
    return tuple(out)


def config_from_mapping(data: Mapping[str, Any]) -> SimConfig:
    """Build and validate a :class:`SimConfig` from parsed TOML."""
    errors = []
    known = set(_TOP_LEVEL) | {"mode", "profile_mode", "backend", "boss", "parser", "tasks", "profiles"}
    for key in data:
        if key not in known:
            errors.append(f"unknown configuration key {key!r}")
    if errors:
        raise ConfigError(errors)
    kw: dict[str, Any] = {k: data[k] for k in _TOP_LEVEL if k in data}
    if "n_agents" not in kw:
        raise ConfigError(["n_agents is required"])
    try:
        kw["mode"] = AssignmentMode(data.get("mode", "random"))
        kw["profile_mode"] = ProfileMode(data.get("profile_mode", "neutral"))
        kw["tasks"] = tuple(TaskType.from_dict(t) for t in data["tasks"]) if "tasks" in data else DEFAULT_TASKS
    except (KeyError, ValueError) as exc:
        raise ConfigError([f"invalid value: {exc}"]) from None
    backend = dict(data.get("backend", {}))
    per_agent = backend.pop("agents", {})
    base = _spec(backend)
    if per_agent:
        merged = {i: base for i in range(1, int(kw["n_agents"]) + 1)}
        for k, table in per_agent.items():
            merged[int(k)] = _spec({**backend, **table})
        kw["backend_spec"] = merged
    else:
        kw["backend_spec"] = base
    boss = dict(data.get("boss", {}))
    kw["boss_policy"] = boss.pop("policy", "repeat_last_success")
    kw["boss_params"] = boss
    parser = dict(data.get("parser", {}))
    kw["parser"] = parser.pop("kind", "rules")
    kw["parser_params"] = parser
    if "profiles" in data:
        kw["profiles"] = profiles_from_tables(data["profiles"])
    return validate_config(SimConfig(**kw))


def read_toml(path: str | Path) -> dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None


def load_config(path: str | Path, overrides: Iterable[str] = (), seed: Optional[int] = None) -> SimConfig:
    data = apply_overrides(read_toml(path), overrides)
    if seed is not None:
        data["seed"] = seed
    return config_from_mapping(data)


def load_profiles(path: str | Path) -> tuple[AgentProfile, ...]:
    """Read ``[[profiles]]`` tables (index, name, age, gender, appearance)."""
    data = read_toml(path)
    if "profiles" not in data:
        raise ConfigError([f"{path} has no [[profiles]] tables"])
    return profiles_from_tables(data["profiles"])
