"""scikit-learn style wrappers for the analysis layer.

Both estimators take a list of run logs as ``X``:

>>> idx = StereotypeIndexTransformer().fit(logs)
>>> idx.transform(logs)          # (n_logs, 4): rsi, gbc, cai, sii (nan if undefined)
>>> assoc = AssociationEstimator().fit(logs)
>>> assoc.matrix_.to_csv()       # pooled person-job association matrix
"""

from __future__ import annotations

from typing import Any, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import AssociationMatrix, association_matrix
from .metrics import METRICS, meta_aggregate, run_metrics


def check_run_logs(X: Any) -> list:
    """Return ``X`` as a non-empty list of run-log-like objects."""
    if X is None:
        raise ValueError("expected a sequence of run logs, got None")
    logs = [X] if hasattr(X, "evaluations") else list(X)
    if not logs:
        raise ValueError("expected at least one run log")
    for i, log in enumerate(logs):
        if not (hasattr(log, "evaluations") and hasattr(log, "config")):
            raise TypeError(f"item {i} is not a run log: {type(log).__name__}")
    return logs


class StereotypeIndexTransformer(TransformerMixin, BaseEstimator):
    """Map run logs to their final RSI, GBC, CAI and SII.

    Parameters
    ----------
    probe_rounds : bool
        Include probe evaluation rounds in the cumulative assessments.
    """

    def __init__(self, probe_rounds: bool = True):
        self.probe_rounds = probe_rounds

    def fit(self, X, y=None):
        logs = check_run_logs(X)
        tasks = {tuple(t.id for t in log.config.tasks) for log in logs}
        if len(tasks) != 1:
            raise ValueError("all logs must share one task set")
        self.task_ids_ = next(iter(tasks))
        self.n_categories_ = len(self.task_ids_)
        self.n_features_in_ = len(METRICS)
        return self

    def reports(self, X) -> list:
        check_is_fitted(self, "task_ids_")
        return [run_metrics(log, self.probe_rounds) for log in check_run_logs(X)]

    def transform(self, X):
        return np.array(
            [[np.nan if v is None else v for v in r.values().values()] for r in self.reports(X)], dtype=float
        )

    def summarize(self, X):
        """Cross-run summary (mean, SD, 95% CI, histogram) of the indices."""
        return meta_aggregate(self.reports(X))

    def get_feature_names_out(self, input_features=None):
        return np.array(METRICS, dtype=object)


class AssociationEstimator(BaseEstimator):
    """Pool role endorsements over run logs into an association matrix.

    Parameters
    ----------
    include_probes : bool
        Use probe rounds as well as phase-end rounds.
    """

    def __init__(self, include_probes: bool = True):
        self.include_probes = include_probes

    def _rounds(self, logs: Sequence) -> list:
        return [r for log in logs for r in log.evaluations if self.include_probes or not r.probe]

    def fit(self, X, y=None):
        logs = check_run_logs(X)
        self.matrix_: AssociationMatrix = association_matrix(self._rounds(logs), across_runs=True)
        self.agents_ = self.matrix_.agents
        self.tasks_ = self.matrix_.tasks
        return self

    def transform(self, X):
        """Per-log matrices flattened over the fitted (agent, task) grid."""
        check_is_fitted(self, "matrix_")
        rows = []
        for log in check_run_logs(X):
            m = association_matrix(self._rounds([log]))
            rows.append([m.values.get((a, t), 0.0) for a in self.agents_ for t in self.tasks_])
        return np.asarray(rows, dtype=float)

    def predict(self, labels: Optional[Sequence[str]] = None) -> list[str]:
        """Most strongly associated task per agent label (task order breaks ties)."""
        check_is_fitted(self, "matrix_")
        labels = list(labels) if labels is not None else list(self.agents_)
        return [max(self.tasks_, key=lambda t: (self.matrix_.values.get((a, t), 0.0), -self.tasks_.index(t))) for a in labels]

    def max_entry(self) -> float:
        check_is_fitted(self, "matrix_")
        return self.matrix_.max_entry()
