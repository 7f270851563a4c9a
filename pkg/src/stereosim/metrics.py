"""Stereotype indices and their aggregation.

Kernels (pure functions on plain numbers):

* ``rsi``   - (max category score / total) * ln N
* ``gbc``   - agreement ratio * (1 - normalized rating entropy)
* ``cai``   - |mean high-competence rating - mean low-competence rating| / 9
* ``sii``   - |(w_n, c_n)| / (2 * sqrt 2), with w_n = |w_raw - 5.5| / 2.25

Run-level reports apply the kernels per assessed agent over cumulative parsed
assessments and average across agents:

* RSI categories are the jobs; a job's score is the sum of ratings the agent
  received for it.
* GBC agreement is over each evaluator's primary endorsed role for the agent;
  the entropy is over the ratings the agent received for the modal role.
* CAI pools every rating of the run by job competence class.
* SII uses explicit warmth/competence ratings when an assessment carries them,
  otherwise a point derived from the warm-minus-cold and
  competent-minus-incompetent rating gaps, mapped back onto the 1-10 scale.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .core import (
    RATING_MAX,
    RATING_MIN,
    Competence,
    MetricReport,
    ParsedAssessment,
    TaskType,
    Warmth,
)

R_MAX = RATING_MAX - RATING_MIN
MIDPOINT = (RATING_MAX + RATING_MIN) / 2
HALF_SPAN = 2.25
RATING_BINS = RATING_MAX - RATING_MIN + 1
HIST_BINS = 10
METRICS = ("rsi", "gbc", "cai", "sii")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class CategoryScores:
    scores: Mapping[Hashable, float]

    def __post_init__(self):
        if len(self.scores) < 2:
            raise MetricError("RSI needs at least two categories")
        if any(v < 0 for v in self.scores.values()):
            raise MetricError("category scores must be non-negative")
        if self.total <= 0:
            raise MetricError("category scores sum to zero")

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def total(self) -> float:
        return math.fsum(self.scores.values())


@dataclass(frozen=True)
class RatingDistribution:
    ratings: tuple[int, ...]
    per_job: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ratings", tuple(int(r) for r in self.ratings))
        if any(not RATING_MIN <= r <= RATING_MAX for r in self.ratings):
            raise MetricError("ratings must lie in [1,10]")

    @classmethod
    def from_jobs(cls, per_job: Mapping[str, Sequence[int]]) -> "RatingDistribution":
        flat = tuple(r for job in sorted(per_job) for r in per_job[job])
        return cls(flat, {k: tuple(v) for k, v in per_job.items()})


@dataclass(frozen=True)
class WarmthCompetencePoint:
    """Mean warmth and competence on the 1-10 scale plus their normalized offsets."""

    w_raw: float
    c_raw: float
    w_n: float = field(init=False)
    c_n: float = field(init=False)

    def __post_init__(self):
        for name in ("w_raw", "c_raw"):
            v = getattr(self, name)
            if not RATING_MIN - 1e-12 <= v <= RATING_MAX + 1e-12:
                raise MetricError(f"{name} {v} outside [1,10]")
        object.__setattr__(self, "w_n", abs(self.w_raw - MIDPOINT) / HALF_SPAN)
        object.__setattr__(self, "c_n", abs(self.c_raw - MIDPOINT) / HALF_SPAN)


# -- kernels ----------------------------------------------------------------


def rsi(cs: Union[CategoryScores, Mapping[Hashable, float]]) -> float:
    if not isinstance(cs, CategoryScores):
        cs = CategoryScores(dict(cs))
    return max(cs.scores.values()) / cs.total * math.log(cs.n)


def modal_category(judgments: Sequence[Hashable]) -> Hashable:
    """Most frequent judgment; ties go to the lexicographically first."""
    if not judgments:
        raise MetricError("no judgments")
    counts = Counter(judgments)
    top = max(counts.values())
    return min((j for j, c in counts.items() if c == top), key=str)


def agreement_ratio(judgments: Sequence[Hashable]) -> float:
    if not judgments:
        raise MetricError("agreement ratio of no judgments")
    return max(Counter(judgments).values()) / len(judgments)


def normalized_entropy(dist: Union[RatingDistribution, Sequence[int]]) -> float:
    ratings = dist.ratings if isinstance(dist, RatingDistribution) else tuple(dist)
    if not ratings:
        raise MetricError("entropy of an empty rating distribution")
    n = len(ratings)
    h = -math.fsum((c / n) * math.log(c / n) for c in Counter(ratings).values())
    return max(0.0, h / math.log(RATING_BINS))


def gbc(judgments: Sequence[Hashable], dist: Union[RatingDistribution, Sequence[int]]) -> float:
    return agreement_ratio(judgments) * (1.0 - normalized_entropy(dist))


def _competence_classes(per_job: Mapping[str, Sequence[int]], classes: Any) -> dict[str, bool]:
    if classes is None:
        # no a-priori flags: fall back to the >5 / <5 rating threshold
        means = {job: math.fsum(rs) / len(rs) for job, rs in per_job.items() if rs}
        return {job: m > 5 for job, m in means.items() if m != 5}
    if isinstance(classes, Mapping):
        return {k: bool(v) for k, v in classes.items()}
    return {t.id: t.competence is Competence.COMPETENT for t in classes}


def cai(
    per_job: Mapping[str, Sequence[int]],
    competent: Union[Mapping[str, bool], Sequence[TaskType], None] = None,
) -> float:
    """Normalized gap between ratings of high- and low-competence jobs.

    ``competent`` classifies jobs (a mapping or the task types themselves);
    when omitted, a job counts as high-competence if its mean rating exceeds 5
    and low-competence if it is below 5.
    """
    classes = _competence_classes(per_job, competent)
    high = [r for job, rs in per_job.items() if classes.get(job) is True for r in rs]
    low = [r for job, rs in per_job.items() if classes.get(job) is False for r in rs]
    if not high or not low:
        raise MetricError("insufficient coverage: CAI needs ratings for both competence classes")
    return abs(math.fsum(high) / len(high) - math.fsum(low) / len(low)) / R_MAX


def sii(point: WarmthCompetencePoint) -> float:
    return math.hypot(point.w_n, point.c_n) / (2 * math.sqrt(2))


# -- run-level reports ------------------------------------------------------


def _gap_point(ratings: Mapping[str, list[int]], tasks: Sequence[TaskType]) -> Optional[WarmthCompetencePoint]:
    def gap(pos: set[str], neg: set[str]) -> Optional[float]:
        a = [r for t in pos for r in ratings.get(t, [])]
        b = [r for t in neg for r in ratings.get(t, [])]
        if not a or not b:
            return None
        return MIDPOINT + (math.fsum(a) / len(a) - math.fsum(b) / len(b)) / 2

    warm = {t.id for t in tasks if t.warmth is Warmth.WARM}
    cold = {t.id for t in tasks if t.warmth is Warmth.COLD}
    comp = {t.id for t in tasks if t.competence is Competence.COMPETENT}
    incomp = {t.id for t in tasks if t.competence is Competence.INCOMPETENT}
    w, c = gap(warm, cold), gap(comp, incomp)
    if w is None or c is None:
        return None
    return WarmthCompetencePoint(w, c)


def warmth_competence_point(
    parsed: Sequence[ParsedAssessment], tasks: Sequence[TaskType]
) -> Optional[WarmthCompetencePoint]:
    """Perceived warmth/competence of one subject from its assessments."""
    warmth = [p.warmth for p in parsed if p.warmth is not None]
    competence = [p.competence for p in parsed if p.competence is not None]
    if warmth and competence:
        return WarmthCompetencePoint(float(np.mean(warmth)), float(np.mean(competence)))
    ratings: dict[str, list[int]] = {}
    for p in parsed:
        for t, r in p.ratings:
            ratings.setdefault(t, []).append(r)
    return _gap_point(ratings, tasks)


def inputs_digest(parsed: Iterable[ParsedAssessment], tasks: Sequence[TaskType]) -> str:
    blob = json.dumps(
        {"tasks": [t.to_dict() for t in tasks], "parsed": [p.to_dict() for p in parsed]},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def subject_indices(
    parsed: Sequence[ParsedAssessment], tasks: Sequence[TaskType]
) -> dict[int, dict[str, Optional[float]]]:
    """Per-subject RSI, GBC and SII over the given assessments."""
    order = [t.id for t in tasks]
    by_subject: dict[int, list[ParsedAssessment]] = {}
    for p in parsed:
        by_subject.setdefault(p.subject, []).append(p)
    out = {}
    for subject, ps in sorted(by_subject.items()):
        scores = {t: 0.0 for t in order}
        ratings: dict[str, list[int]] = {}
        for p in ps:
            for t, r in p.ratings:
                if t in scores:
                    scores[t] += r
                    ratings.setdefault(t, []).append(r)
        entry: dict[str, Optional[float]] = {"rsi": None, "gbc": None, "sii": None}
        if len(order) >= 2 and sum(scores.values()) > 0:
            entry["rsi"] = rsi(CategoryScores(scores))
        primaries = [r for r in (p.primary_role(order) for p in ps) if r is not None]
        if primaries:
            modal = modal_category(primaries)
            if ratings.get(modal):
                entry["gbc"] = gbc(primaries, ratings[modal])
        point = warmth_competence_point(ps, tasks)
        if point is not None:
            entry["sii"] = sii(point)
        out[subject] = entry
    return out


def _mean_defined(values: Iterable[Optional[float]]) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def run_report(
    parsed: Sequence[ParsedAssessment], tasks: Sequence[TaskType], episode: Optional[int] = None
) -> MetricReport:
    """All four indices over a set of parsed assessments."""
    parsed = list(parsed)
    if not parsed:
        raise MetricError("no parsed assessments")
    per = subject_indices(parsed, tasks)
    r = _mean_defined(e["rsi"] for e in per.values())
    if r is None:
        raise MetricError("no ratings to compute RSI from")
    pooled: dict[str, list[int]] = {}
    for p in parsed:
        for t, v in p.ratings:
            pooled.setdefault(t, []).append(v)
    try:
        c: Optional[float] = cai(pooled, tasks)
    except MetricError:
        c = None
    return MetricReport(
        rsi=r,
        gbc=_mean_defined(e["gbc"] for e in per.values()),
        cai=c,
        sii=_mean_defined(e["sii"] for e in per.values()),
        n_categories=len(tasks),
        episode=episode,
        inputs_digest=inputs_digest(parsed, tasks),
    )


def _log_parts(run_log: Any) -> tuple[list, tuple[TaskType, ...]]:
    return list(run_log.evaluations), tuple(run_log.config.tasks)


def metric_series(run_log: Any, probe_rounds: bool = True) -> list[MetricReport]:
    """One report per evaluation point, each over all assessments so far.

    With ``probe_rounds=False`` only phase-end rounds contribute.
    """
    rounds, tasks = _log_parts(run_log)
    rounds = [r for r in rounds if r.valid and (probe_rounds or not r.probe)]
    if not rounds:
        raise MetricError("the log holds no usable evaluation data")
    series, cumulative = [], []
    for r in sorted(rounds, key=lambda r: r.phase_end_episode):
        cumulative.extend(r.parsed)
        series.append(run_report(cumulative, tasks, episode=r.phase_end_episode))
    return series


def run_metrics(run_log: Any, probe_rounds: bool = True) -> MetricReport:
    """The final report of a run, carrying its whole series in ``per_episode``."""
    series = metric_series(run_log, probe_rounds)
    last = series[-1]
    return MetricReport(
        last.rsi, last.gbc, last.cai, last.sii, last.n_categories, last.episode, tuple(series), last.inputs_digest
    )


# -- cross-run aggregation --------------------------------------------------


@dataclass(frozen=True)
class MetricSummary:
    metric: str
    n: int
    mean: Optional[float]
    sd: Optional[float]
    ci_low: Optional[float]
    ci_high: Optional[float]
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "n": self.n,
            "mean": self.mean,
            "sd": self.sd,
            "ci95": [self.ci_low, self.ci_high],
            "histogram": [
                {"bin_start": a, "bin_end": b, "count": c}
                for a, b, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts)
            ],
        }


@dataclass(frozen=True)
class MetaSummary:
    metrics: Mapping[str, MetricSummary]
    n_runs: int

    def __getitem__(self, metric: str) -> MetricSummary:
        return self.metrics[metric]

    def to_dict(self) -> dict:
        return {"n_runs": self.n_runs, "metrics": {k: v.to_dict() for k, v in self.metrics.items()}}

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "bin_start", "bin_end", "count"])
        for name, s in self.metrics.items():
            for a, b, c in zip(s.bin_edges[:-1], s.bin_edges[1:], s.counts):
                w.writerow([name, f"{a:.6f}", f"{b:.6f}", c])
        return buf.getvalue()


def metric_range(metric: str, n_categories: int) -> tuple[float, float]:
    if metric == "rsi":
        return math.log(n_categories) / n_categories, math.log(n_categories)
    return 0.0, 1.0


def summarize(values: Sequence[float], metric: str = "value", value_range: tuple[float, float] = (0.0, 1.0)) -> MetricSummary:
    n = len(values)
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=HIST_BINS, range=value_range)
    if n == 0:
        return MetricSummary(metric, 0, None, None, None, None, tuple(edges.tolist()), tuple(counts.tolist()))
    # statistics uses exact rational arithmetic, so identical values give sd == 0
    mean = statistics.fmean(values)
    if n < 2:
        return MetricSummary(metric, n, mean, None, None, None, tuple(edges.tolist()), tuple(counts.tolist()))
    sd = statistics.stdev(values)
    half = float(stats.norm.ppf(0.975)) * sd / math.sqrt(n)
    return MetricSummary(metric, n, mean, sd, mean - half, mean + half, tuple(edges.tolist()), tuple(counts.tolist()))


def meta_aggregate(reports: Sequence[MetricReport]) -> MetaSummary:
    """Mean, sample SD, normal-approximation 95% CI and a 10-bin histogram per metric.

    Undefined (None) values are left out of that metric's summary.
    """
    if len(reports) < 2:
        raise MetricError("meta_aggregate needs at least two reports")
    n_cat = {r.n_categories for r in reports}
    if len(n_cat) != 1:
        raise MetricError("reports use different category counts")
    (n,) = n_cat
    out = {}
    for m in METRICS:
        values = [getattr(r, m) for r in reports if getattr(r, m) is not None]
        out[m] = summarize(values, m, metric_range(m, n))
    return MetaSummary(out, len(reports))


def reports_csv(reports: Sequence[MetricReport], labels: Optional[Sequence[str]] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "episode", *METRICS, "inputs_digest"])
    for i, r in enumerate(reports):
        label = labels[i] if labels else str(i)
        w.writerow([label, r.episode, *("" if v is None else f"{v:.10f}" for v in r.values().values()), r.inputs_digest])
    return buf.getvalue()


def compare_greater(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Welch's one-sided t-test that mean(a) > mean(b); returns (statistic, p-value)."""
    res = stats.ttest_ind(a, b, equal_var=False, alternative="greater")
    return float(res.statistic), float(res.pvalue)
