from __future__ import annotations

from collections import defaultdict

import pytest
from hypothesis import settings

from stereosim.core import DEFAULT_TASKS, BackendKind, BackendSpec, SimConfig

settings.register_profile("repo", derandomize=True, deadline=None)
settings.load_profile("repo")

FOUR_TASKS = DEFAULT_TASKS[:4]

_outcomes: dict[int, list[str]] = defaultdict(list)


def make_config(kind: str = "scripted_silent", *, n: int = 4, episodes: int = 20, seed: int = 0, beta=1.0, tasks=FOUR_TASKS, **kw) -> SimConfig:
    return SimConfig(
        n_agents=n,
        tasks=tasks,
        episodes=episodes,
        seed=seed,
        backend_spec=BackendSpec(BackendKind(kind), {"beta": beta}),
        **kw,
    )


@pytest.fixture
def config_factory():
    return make_config


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): acceptance criterion number")
    config.addinivalue_line("markers", "live: requires a configured LLM endpoint")


def pytest_runtest_logreport(report):
    number = getattr(report, "_criterion", None)
    if number is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes[number].append("skipped" if report.skipped else report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        report._criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        results = _outcomes[number]
        if any(r == "failed" for r in results):
            verdict = "FAIL"
        elif all(r == "skipped" for r in results):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {number:>2}: {verdict} ({len(results)} checks)")
