from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stereosim.core import DEFAULT_TASKS
from stereosim.engine import run_experiment
from stereosim.estimators import AssociationEstimator, StereotypeIndexTransformer, check_run_logs
from stereosim.evaluation import association_matrix
from stereosim.metrics import run_metrics
from tests.conftest import make_config


@pytest.fixture(scope="module")
def logs():
    return [run_experiment(make_config("scripted_confirmation_bias", episodes=8, seed=s)) for s in range(3)]


class TestIndexTransformer:
    def test_transform_matches_run_metrics(self, logs):
        X = StereotypeIndexTransformer().fit_transform(logs)
        assert X.shape == (3, 4)
        for row, log in zip(X, logs):
            expected = [np.nan if v is None else v for v in run_metrics(log).values().values()]
            np.testing.assert_array_equal(row, expected)

    def test_feature_names(self, logs):
        names = StereotypeIndexTransformer().fit(logs).get_feature_names_out()
        assert list(names) == ["rsi", "gbc", "cai", "sii"]

    def test_params_and_clone(self):
        est = StereotypeIndexTransformer(probe_rounds=False)
        assert est.get_params() == {"probe_rounds": False}
        twin = clone(est)
        assert twin is not est and twin.get_params() == est.get_params()

    def test_not_fitted(self, logs):
        with pytest.raises(NotFittedError):
            StereotypeIndexTransformer().transform(logs)

    def test_mixed_task_sets_rejected(self, logs):
        other = run_experiment(make_config(episodes=2, tasks=DEFAULT_TASKS))
        with pytest.raises(ValueError, match="task set"):
            StereotypeIndexTransformer().fit([*logs, other])

    def test_summarize(self, logs):
        summary = StereotypeIndexTransformer().fit(logs).summarize(logs)
        assert summary["rsi"].n == 3


class TestAssociationEstimator:
    def test_matrix_matches_pooled(self, logs):
        est = AssociationEstimator().fit(logs)
        expected = association_matrix([r for log in logs for r in log.evaluations], across_runs=True)
        assert est.matrix_ == expected and est.max_entry() == expected.max_entry()

    def test_transform_shape(self, logs):
        est = AssociationEstimator().fit(logs)
        assert est.transform(logs).shape == (3, len(est.agents_) * len(est.tasks_))

    def test_predict_is_row_argmax(self, logs):
        est = AssociationEstimator().fit(logs)
        for agent, task in zip(est.agents_, est.predict()):
            row = [est.matrix_.values.get((agent, t), 0.0) for t in est.tasks_]
            assert est.matrix_.values.get((agent, task), 0.0) == max(row)

    def test_clone(self):
        est = AssociationEstimator(include_probes=False)
        assert clone(est).get_params() == {"include_probes": False}


def test_check_run_logs(logs):
    assert check_run_logs(logs[0]) == [logs[0]]
    with pytest.raises(ValueError):
        check_run_logs([])
    with pytest.raises(ValueError):
        check_run_logs(None)
    with pytest.raises(TypeError):
        check_run_logs([object()])
