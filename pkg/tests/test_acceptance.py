"""Acceptance criteria 1-11, each at its stated tolerance and runtime budget.

Every test carries ``@pytest.mark.acceptance(n)``; the conftest hook prints a
``criterion n: PASS/FAIL/SKIP`` line per criterion at the end of the session.
"""

from __future__ import annotations

import dataclasses
import math
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereosim.agents.backends import build_backends
from stereosim.agents.prompts import blocklist_hits
from stereosim.cli import main
from stereosim.config import load_config, load_profiles
from stereosim.core import (
    AssignmentMode,
    EventKind,
    Outcome,
    ParsedAssessment,
    ProfileMode,
    RoleMappings,
    validate_config,
)
from stereosim.engine import RunState, outcome_counts, run_experiment, sample_outcome
from stereosim.evaluation import association_matrix
from stereosim.logio import read_run_log, strip_meta, write_run_log
from stereosim.metrics import WarmthCompetencePoint, cai, compare_greater, gbc, meta_aggregate, rsi, run_metrics, sii
from tests import oracles
from tests.conftest import make_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
RSI_UNIFORM_4 = math.log(4) / 4


@contextmanager
def budget(seconds: float):
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    assert elapsed < seconds, f"took {elapsed:.2f}s, budget {seconds}s"


def seeded(config, seed):
    return dataclasses.replace(config, seed=seed)


# -- 1: metric kernels vs brute-force oracle ---------------------------------

RSI_FIXTURES = [
    ([1, 1, 1, 1], RSI_UNIFORM_4),
    ([5, 0, 0, 0], math.log(4)),
    ([6, 2, 1, 1], None),
    ([3, 3], None),
    ([0.5, 0.25, 0.25], None),
    ([7, 1, 1, 1, 1, 1], None),
    ([2, 9, 4, 0], None),
    ([1, 2, 3, 4, 5, 6, 7, 8, 9, 10], None),
]
GBC_FIXTURES = [
    (["a", "a", "a"], [9, 9, 9]),
    (["a", "b", "c", "d"], [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]),
    (["a", "a", "b"], [9, 9, 4]),
    (["x", "y", "x", "x", "y"], [2, 2, 8, 8, 8, 5]),
    (["m"], [10]),
]
CAI_FIXTURES = [
    ([10, 9, 8], [1, 2, 3]),
    ([5, 5], [5, 5]),
    ([10], [1]),
    ([7, 4, 9, 6], [3, 8]),
]
SII_FIXTURES = [(5.5, 5.5), (10, 1), (8, 3)]


@pytest.mark.acceptance(1)
def test_metric_kernels_match_oracle():
    assert len(RSI_FIXTURES) + len(GBC_FIXTURES) + len(CAI_FIXTURES) + len(SII_FIXTURES) == 20
    with budget(1.0):
        for scores, anchor in RSI_FIXTURES:
            got = rsi({f"c{i}": s for i, s in enumerate(scores)})
            assert abs(got - oracles.rsi(scores)) <= 1e-9
            if anchor is not None:
                assert abs(got - anchor) <= 1e-9
        for judgments, ratings in GBC_FIXTURES:
            assert abs(gbc(judgments, ratings) - oracles.gbc(judgments, ratings)) <= 1e-9
        for high, low in CAI_FIXTURES:
            got = cai({"hi": high, "lo": low}, {"hi": True, "lo": False})
            assert abs(got - oracles.cai(high, low)) <= 1e-9
        for w, c in SII_FIXTURES:
            assert abs(sii(WarmthCompetencePoint(w, c)) - oracles.sii(w, c)) <= 1e-9
    assert abs(RSI_UNIFORM_4 - 0.3466) < 1e-4 and abs(math.log(4) - 1.3863) < 1e-4


# -- 2: outcome model --------------------------------------------------------


def success_rate(p0: float, n: int = 10_000, seed: int = 0) -> float:
    state = RunState.new(make_config(p0=p0, seed=seed))
    return sum(sample_outcome(state, 1, "manager") is Outcome.SUCCESS for _ in range(n)) / n


@pytest.mark.acceptance(2)
def test_outcome_model():
    with budget(5.0):
        assert 0.79 <= success_rate(0.8) <= 0.81
        assert success_rate(0.0) == 0.0
        assert success_rate(1.0) == 1.0


# -- 3: delivery delay -------------------------------------------------------


class Spy:
    """Delegating backend wrapper that records every observation it is shown."""

    def __init__(self, inner, seen):
        self._inner, self._seen = inner, seen

    def act(self, observation, system_prompt=""):
        self._seen.append(observation)
        return self._inner.act(observation, system_prompt)

    def __getattr__(self, name):
        return getattr(self._inner, name)


class CaseTimer:
    """Counts executed property cases and their total runtime."""

    def __init__(self):
        self.cases, self.elapsed = 0, 0.0

    @contextmanager
    def case(self):
        start = time.perf_counter()
        yield
        self.elapsed += time.perf_counter() - start
        self.cases += 1

    def check(self, min_cases: int, seconds: float):
        if self.cases == 0:
            pytest.skip("property tests not run in this session")
        assert self.cases >= min_cases, f"only {self.cases} cases ran"
        assert self.elapsed < seconds, f"took {self.elapsed:.2f}s, budget {seconds}s"


DELIVERY = CaseTimer()
PROPERTIES = CaseTimer()


@pytest.mark.acceptance(3)
@settings(max_examples=120)
@given(
    n=st.integers(2, 5),
    episodes=st.integers(1, 10),
    seed=st.integers(0, 2**32 - 1),
    kind=st.sampled_from(["scripted_uniform_random", "scripted_confirmation_bias", "scripted_halo"]),
    beta=st.floats(0, 1),
)
def test_messages_are_delivered_one_episode_later(n, episodes, seed, kind, beta):
    with DELIVERY.case():
        check_delivery(n, episodes, seed, kind, beta)


def check_delivery(n, episodes, seed, kind, beta):
    config = make_config(kind, n=n, episodes=episodes, seed=seed, beta=beta)
    seen = []
    backends = {k: Spy(b, seen) for k, b in build_backends(config).items()}
    log = run_experiment(config, backends)

    for rec in log.episodes:
        for e in rec.of_kind(EventKind.IM):
            assert e.payload.sent_episode + 1 == e.episode
    for obs in seen:
        for e in obs.visible_events:
            if e.kind is EventKind.IM:
                assert e.episode >= e.payload.sent_episode + 1 and e.episode <= obs.episode
    # whatever was created and not delivered is still pending at the end
    assert all(m.payload.sent_episode == episodes for m in log.pending)


@pytest.mark.acceptance(3)
def test_delivery_property_budget():
    DELIVERY.check(100, 30.0)


# -- 4: determinism ----------------------------------------------------------


@pytest.mark.acceptance(4)
def test_same_seed_gives_identical_logs(tmp_path):
    config = make_config("scripted_confirmation_bias", n=4, episodes=20, seed=11)
    with budget(30.0):
        a = write_run_log(run_experiment(config), tmp_path / "a.ndjson")
        b = write_run_log(run_experiment(config), tmp_path / "b.ndjson")
    assert strip_meta(a.read_text()) == strip_meta(b.read_text())
    assert a.read_text().splitlines()[1:] == b.read_text().splitlines()[1:]


@pytest.mark.acceptance(4)
def test_batch_parallelism_gives_identical_log_sets(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text('n_agents = 4\nepisodes = 20\n[backend]\nkind = "scripted_confirmation_bias"\n')
    with budget(30.0):
        for p in (1, 4):
            assert main(["batch", str(cfg), "--n-runs", "6", "--parallelism", str(p), "--out-dir", str(tmp_path / f"p{p}")]) == 0
    sets = [
        {f.name: strip_meta(f.read_text()) for f in (tmp_path / f"p{p}").glob("*.ndjson")} for p in (1, 4)
    ]
    assert len(sets[0]) == 6 and sets[0] == sets[1]


# -- 5: null-model uniformity ------------------------------------------------


@pytest.mark.acceptance(5)
def test_null_model_is_uniform():
    base = load_config(CONFIGS / "null_model.toml")
    assert base.n_agents == 4 and len(base.tasks) == 4
    with budget(120.0):
        logs = [run_experiment(seeded(base, s)) for s in range(200)]
        matrix = association_matrix([r for log in logs for r in log.evaluations], across_runs=True)
        rsis = [run_metrics(log).rsi for log in logs]
    assert all(abs(v - 0.25) <= 0.05 for v in matrix.values.values()), matrix.to_csv()
    assert abs(float(np.mean(rsis)) - 0.3466) <= 0.05


# -- 6: emergent concentration -----------------------------------------------


@pytest.mark.acceptance(6)
def test_confirmation_bias_concentrates():
    base = load_config(CONFIGS / "confirmation_bias.toml")
    assert base.backend_for(1).params["beta"] == 1.0
    with budget(120.0):
        peaks = [association_matrix(run_experiment(seeded(base, s)).evaluations).max_entry() for s in range(100)]
    assert sum(p >= 0.8 for p in peaks) >= 95


# -- 7: amplification under hierarchy ----------------------------------------


@pytest.mark.acceptance(7)
def test_boss_amplifies_stereotyping():
    boss = load_config(CONFIGS / "hierarchical.toml")
    assert boss.boss_policy == "repeat_last_success"
    random = dataclasses.replace(boss, mode=AssignmentMode.RANDOM, hierarchical_start_episode=None)
    with budget(300.0):
        boss_rsi = [run_metrics(run_experiment(seeded(boss, s))).rsi for s in range(100)]
        random_rsi = [run_metrics(run_experiment(seeded(random, s))).rsi for s in range(100)]
    diff = float(np.mean(boss_rsi) - np.mean(random_rsi))
    _, p = compare_greater(boss_rsi, random_rsi)
    print(f"boss mean RSI {np.mean(boss_rsi):.4f}, random {np.mean(random_rsi):.4f}, diff {diff:.4f}, p {p:.3g}")
    assert diff >= 0.1 and p < 0.01


# -- 8: outcome invariance across modes --------------------------------------


@pytest.mark.acceptance(8)
def test_success_rate_independent_of_mode():
    random = make_config(n=10, episodes=1000, seed=5)
    boss = dataclasses.replace(random, mode=AssignmentMode.HIERARCHICAL, hierarchical_start_episode=2)
    with budget(10.0):
        s_r, n_r = outcome_counts(run_experiment(random).episodes)
        s_b, n_b = outcome_counts(run_experiment(boss).episodes)
    assert n_r == n_b == 10_000
    p_r, p_b = s_r / n_r, s_b / n_b
    se = math.sqrt(p_r * (1 - p_r) / n_r + p_b * (1 - p_b) / n_b)
    assert abs(p_r - p_b) <= 2 * se


# -- 9: ablation pairing -----------------------------------------------------


@pytest.mark.acceptance(9)
def test_ablation_pairing():
    profiles = load_profiles(CONFIGS / "profiles.toml")
    neutral = make_config("scripted_confirmation_bias", n=4, episodes=10, seed=21)
    demographic = validate_config(
        dataclasses.replace(neutral, profile_mode=ProfileMode.DEMOGRAPHIC, profiles=profiles)
    )
    with budget(10.0):
        a, b = run_experiment(neutral), run_experiment(demographic)

    def stream(log):
        return [e.to_dict() for rec in log.episodes for e in rec.events if e.kind in (EventKind.TD, EventKind.SN)]

    assert stream(a) and stream(a) == stream(b)
    for prompt in a.meta["system_prompts"].values():
        assert blocklist_hits(prompt) == []
    for profile in profiles:
        prompt = b.meta["system_prompts"][str(profile.agent.index)]
        for field in (profile.agent.display_name, str(profile.age), profile.gender, profile.appearance):
            assert field in prompt


# -- 10: duality and range properties ----------------------------------------

ROLES = ["data_scientist", "manager", "rehabilitation_counselor", "janitor"]
scores = st.lists(st.floats(0, 1e6, allow_nan=False), min_size=2, max_size=10).filter(lambda xs: sum(xs) > 0)
ratings = st.lists(st.integers(1, 10), min_size=1, max_size=30)
judgments = st.lists(st.sampled_from(ROLES), min_size=1, max_size=20)
assessments = st.lists(
    st.builds(
        ParsedAssessment,
        st.integers(1, 5),
        st.integers(1, 5),
        st.frozensets(st.sampled_from(ROLES), max_size=4),
        st.lists(st.tuples(st.sampled_from(ROLES), st.integers(1, 10)), max_size=4).map(tuple),
    ),
    max_size=12,
)


@pytest.mark.acceptance(10)
@settings(max_examples=250)
@given(assessments)
def test_role_mapping_duality(parsed):
    with PROPERTIES.case():
        m = RoleMappings.from_parsed(parsed)
        for p in parsed:
            for t in p.roles:
                assert p.subject in m.role_to_agents[t] and t in m.agent_to_roles[p.subject]
        pairs_a = {(a, t) for a, ts in m.agent_to_roles.items() for t in ts}
        pairs_r = {(a, t) for t, as_ in m.role_to_agents.items() for a in as_}
        assert pairs_a == pairs_r


@pytest.mark.acceptance(10)
@settings(max_examples=250)
@given(scores, st.floats(1e-3, 1e3), st.randoms(use_true_random=False))
def test_rsi_range_scale_and_permutation(xs, c, rnd):
    with PROPERTIES.case():
        n = len(xs)
        value = rsi({i: x for i, x in enumerate(xs)})
        assert math.log(n) / n - 1e-9 <= value <= math.log(n) + 1e-9
        assert value == pytest.approx(rsi({i: c * x for i, x in enumerate(xs)}), rel=1e-9, abs=1e-12)
        shuffled = list(xs)
        rnd.shuffle(shuffled)
        assert value == pytest.approx(rsi({i: x for i, x in enumerate(shuffled)}), rel=1e-12)


@pytest.mark.acceptance(10)
@settings(max_examples=250)
@given(judgments, ratings, st.randoms(use_true_random=False))
def test_gbc_range_and_monotonicity(js, rs, rnd):
    with PROPERTIES.case():
        value = gbc(js, rs)
        assert -1e-12 <= value <= 1 + 1e-12
        mode = max(set(js), key=js.count)
        # more agreement on the modal judgment never lowers the coefficient
        assert gbc(js + [mode], rs) >= value - 1e-12
        # collapsing the ratings to one value removes all entropy damping
        assert gbc(js, [rs[0]] * len(rs)) >= value - 1e-12
        shuffled = list(js)
        rnd.shuffle(shuffled)
        assert gbc(shuffled, rs) == pytest.approx(value, abs=1e-12)


@pytest.mark.acceptance(10)
@settings(max_examples=250)
@given(ratings, ratings, st.floats(1, 10), st.floats(1, 10))
def test_cai_symmetry_and_ranges(high, low, w, c):
    with PROPERTIES.case():
        forward = cai({"hi": high, "lo": low}, {"hi": True, "lo": False})
        backward = cai({"hi": high, "lo": low}, {"hi": False, "lo": True})
        assert forward == pytest.approx(backward, abs=1e-12)
        assert 0.0 <= forward <= 1.0
        assert 0.0 <= sii(WarmthCompetencePoint(w, c)) <= 1.0 + 1e-12


@pytest.mark.acceptance(10)
def test_property_suite_size_and_budget():
    PROPERTIES.check(1000, 60.0)


# -- 11: live smoke test -----------------------------------------------------

LIVE = os.environ.get("STEREOSIM_LIVE") == "1"


@pytest.mark.acceptance(11)
@pytest.mark.live
@pytest.mark.skipif(not LIVE, reason="set STEREOSIM_LIVE=1 (and the endpoint's API key) to run")
def test_live_smoke(tmp_path):
    overrides = []
    if os.environ.get("STEREOSIM_LIVE_ENDPOINT"):
        overrides.append(f'backend.endpoint="{os.environ["STEREOSIM_LIVE_ENDPOINT"]}"')
    if os.environ.get("STEREOSIM_LIVE_MODEL"):
        overrides.append(f'backend.model="{os.environ["STEREOSIM_LIVE_MODEL"]}"')
    config = load_config(CONFIGS / "live_llm.toml", overrides)
    assert config.n_agents == 3 and config.episodes == 3
    log = run_experiment(config)
    assert log.status == "complete", log.error
    back = read_run_log(write_run_log(log, tmp_path / "live.ndjson"))
    assert back.records() == log.records()

    turns = config.n_agents * config.episodes
    failed_turns = sum(
        1 for rec in log.episodes for e in rec.of_kind(EventKind.SN) if e.payload.tag == "backend_failure"
    )
    assessments = sum(len(r.assessments) for r in log.evaluations)
    parsed = sum(len(r.parsed) for r in log.evaluations)
    assert (turns - failed_turns + parsed) / (turns + assessments) >= 0.8


# -- aggregate sanity --------------------------------------------------------


def test_null_model_less_cohesive_than_confirmation_bias():
    null = load_config(CONFIGS / "null_model.toml")
    cb = load_config(CONFIGS / "confirmation_bias.toml")
    a = meta_aggregate([run_metrics(run_experiment(seeded(null, s))) for s in range(20)])
    b = meta_aggregate([run_metrics(run_experiment(seeded(cb, s))) for s in range(20)])
    assert a["gbc"].mean < b["gbc"].mean
