"""Append-only NDJSON run logs.

One JSON object per line, each carrying ``record`` (its type) and
``schema`` (the log schema version).  Record types, in write order::

    meta                  config, seed, run id, template hashes, system prompts,
                          software version, started_at (the only timestamp)
    supervisor_decision   one per boss-assigned episode, before its episode
    episode               one per completed episode
    evaluation            after phase ends and optional probe episodes
    pending               messages sent in the last episode, never delivered
    transport             one per recorded LLM request (credentials redacted)
    end                   status ("complete" | "error") and error detail

A log cut short between records still reads back as a prefix with status
``"incomplete"``; a torn final line is ignored.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from .core import EpisodeRecord, Event, SimConfig
from .evaluation import EvaluationRound
from .supervisor import SupervisorDecision

SCHEMA_VERSION = 1


class CorruptLogError(ValueError):
    pass


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


@dataclass
class RunLog:
    meta: dict[str, Any]
    episodes: list[EpisodeRecord] = field(default_factory=list)
    evaluations: list[EvaluationRound] = field(default_factory=list)
    supervisor_decisions: list[SupervisorDecision] = field(default_factory=list)
    pending: list[Event] = field(default_factory=list)
    transport_trace: list[dict[str, Any]] = field(default_factory=list)
    status: str = "incomplete"
    error: Optional[dict[str, Any]] = None

    @property
    def config(self) -> SimConfig:
        return SimConfig.from_dict(self.meta["config"])

    @property
    def run_id(self) -> str:
        return self.meta.get("run_id", "")

    @property
    def seed(self) -> int:
        return int(self.meta["seed"])

    def records(self) -> list[dict[str, Any]]:
        """All records in canonical write order."""
        out = [self.meta_record()]
        decisions = {d.episode: d for d in self.supervisor_decisions}
        rounds: dict[int, list[EvaluationRound]] = {}
        for r in self.evaluations:
            rounds.setdefault(r.phase_end_episode, []).append(r)
        for ep in self.episodes:
            if ep.index in decisions:
                out.append(decision_record(decisions[ep.index]))
            out.append(episode_record(ep))
            for r in rounds.get(ep.index, []):
                out.append(evaluation_record(r))
        out.extend(self.tail_records())
        return out

    def meta_record(self) -> dict[str, Any]:
        return {"record": "meta", "schema": SCHEMA_VERSION, **self.meta}

    def tail_records(self) -> list[dict[str, Any]]:
        out = []
        if self.pending:
            out.append({"record": "pending", "schema": SCHEMA_VERSION, "events": [e.to_dict() for e in self.pending]})
        for t in self.transport_trace:
            out.append({"record": "transport", "schema": SCHEMA_VERSION, **t})
        if self.status != "incomplete":
            out.append({"record": "end", "schema": SCHEMA_VERSION, "status": self.status, "error": self.error})
        return out


def episode_record(ep: EpisodeRecord) -> dict:
    return {"record": "episode", "schema": SCHEMA_VERSION, **ep.to_dict()}


def decision_record(d: SupervisorDecision) -> dict:
    return {"record": "supervisor_decision", "schema": SCHEMA_VERSION, **d.to_dict()}


def evaluation_record(r: EvaluationRound) -> dict:
    return {"record": "evaluation", "schema": SCHEMA_VERSION, **r.to_dict()}


class RunLogWriter:
    """Streams records to disk as they are produced; one writer per file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8")
        self._lock = threading.Lock()

    def __call__(self, record: dict) -> None:
        with self._lock:
            self._fh.write(dumps(record) + "\n")
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "RunLogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_run_log(log: RunLog, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(dumps(r) + "\n" for r in log.records()), encoding="utf-8")
    return path


def parse_records(records: Iterable[dict[str, Any]]) -> RunLog:
    log: Optional[RunLog] = None
    for rec in records:
        kind = rec.get("record")
        if rec.get("schema") != SCHEMA_VERSION:
            raise CorruptLogError(f"unsupported schema version {rec.get('schema')!r}")
        body = {k: v for k, v in rec.items() if k not in ("record", "schema")}
        if kind == "meta":
            if log is not None:
                raise CorruptLogError("duplicate meta record")
            log = RunLog(meta=body)
            continue
        if log is None:
            raise CorruptLogError("log does not start with a meta record")
        if kind == "episode":
            log.episodes.append(EpisodeRecord.from_dict(body))
        elif kind == "supervisor_decision":
            log.supervisor_decisions.append(SupervisorDecision.from_dict(body))
        elif kind == "evaluation":
            log.evaluations.append(EvaluationRound.from_dict(body))
        elif kind == "pending":
            log.pending.extend(Event.from_dict(e) for e in body["events"])
        elif kind == "transport":
            log.transport_trace.append(body)
        elif kind == "end":
            log.status = body["status"]
            log.error = body.get("error")
        else:
            raise CorruptLogError(f"unknown record type {kind!r}")
    if log is None:
        raise CorruptLogError("empty log")
    return log


def read_run_log(path: str | Path) -> RunLog:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    records = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            if i == len(lines) - 1:
                break  # torn final line from an interrupted write
            raise CorruptLogError(f"line {i + 1}: {exc}") from exc
    try:
        return parse_records(records)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorruptLogError):
            raise
        raise CorruptLogError(str(exc)) from exc


def strip_meta(text: str) -> str:
    """Drop the meta record (the only one holding timestamps) for determinism diffs."""
    kept = [line for line in text.split("\n") if line.strip() and json.loads(line).get("record") != "meta"]
    return "".join(line + "\n" for line in kept)
