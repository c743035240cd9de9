"""Tests for Monte Carlo replications and metrics."""

from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from bundlechoice.config import DgpConfig, RunConfig
from bundlechoice.errors import EstimationError
from bundlechoice.models import Theta
from bundlechoice.montecarlo import (
    ReplicationResult,
    aggregate,
    coordinate_metrics,
    metrics,
    replication_seed,
    run_monte_carlo,
    run_replication,
)

TRUTH = Theta(beta=[1.0, 1.0], gamma=[1.0, 1.0])


@pytest.fixture
def logit_config() -> RunConfig:
    """Three quick replications of the fixed-effect logit."""
    return RunConfig(dgp=DgpConfig(n=200), estimators=["fe-logit"], replications=3)


class TestSeeds:
    """Tests for replication seeds."""

    def test_deterministic(self) -> None:
        """The same base seed and index give the same seed."""
        assert replication_seed(5, 2) == replication_seed(5, 2)

    def test_distinct(self) -> None:
        """Indices and base seeds both matter."""
        seeds = {replication_seed(0, b) for b in range(20)}
        assert len(seeds) == 20
        assert replication_seed(0, 1) != replication_seed(1, 1)
        assert all(0 <= s < 2**63 for s in seeds)


class TestMetrics:
    """Tests for SD, rMSE, MAD and Err."""

    def test_exact_estimates(self) -> None:
        """Estimates equal to the truth give zero everywhere."""
        values = np.tile([0.5, -1.0], (4, 1))
        stats = coordinate_metrics(values, np.array([0.5, -1.0]))
        assert stats == {"sd": 0.0, "rmse": 0.0, "mad": 0.0, "bias": 0.0}

    def test_single_offset(self) -> None:
        """One coordinate off by one."""
        stats = coordinate_metrics(np.array([[2.0]]), np.array([1.0]))
        assert stats["rmse"] == pytest.approx(1.0)
        assert stats["mad"] == pytest.approx(1.0)
        assert stats["sd"] == 0.0

    def test_decomposition(self) -> None:
        """rmse^2 = sd^2 + bias^2."""
        values = np.random.default_rng(0).normal(0.3, 1.0, size=(50, 3))
        stats = coordinate_metrics(values, np.zeros(3))
        assert stats["rmse"] ** 2 == pytest.approx(stats["sd"] ** 2 + stats["bias"] ** 2)

    def test_no_free_coordinates(self) -> None:
        """An empty block has zero metrics."""
        assert coordinate_metrics(np.zeros((3, 0)), np.zeros(0))["rmse"] == 0.0

    def test_gamma_at_truth(self) -> None:
        """Exact gamma estimates never flip sign."""
        row = metrics([TRUTH] * 3, TRUTH, DgpConfig(), eval_draws=500)
        assert row.err == 0.0
        assert row.rmse == 0.0
        assert row.successes == 3

    def test_flipped_gamma(self) -> None:
        """A reversed gamma disagrees in sign everywhere."""
        flipped = Theta(beta=[1.0, 1.0], gamma=[-1.0, -1.0])
        row = metrics([flipped], TRUTH, DgpConfig(), eval_draws=500)
        assert row.err == pytest.approx(2.0)

    def test_beta_block_accepts_arrays(self) -> None:
        """Beta-only estimators pass plain vectors."""
        row = metrics([np.array([1.0, 2.0])], TRUTH, DgpConfig(), parameter="beta", estimator="fe-logit")
        assert row.err is None
        assert row.mad == pytest.approx(1.0)
        assert row.estimator == "fe-logit"

    def test_input_errors(self) -> None:
        """Empty input, bad draw counts and unknown blocks are rejected."""
        with pytest.raises(ValueError):
            metrics([], TRUTH, DgpConfig())
        with pytest.raises(ValueError):
            metrics([TRUTH], TRUTH, DgpConfig(), eval_draws=0)
        with pytest.raises(ValueError):
            metrics([TRUTH], TRUTH, DgpConfig(), parameter="alpha")


class TestAggregate:
    """Tests for aggregation of replication records."""

    def test_set_coverage(self) -> None:
        """Coverage is the share of sets containing the truth."""
        config = RunConfig(estimators=["set"], replications=2)
        records = [
            ReplicationResult(0, 1, {"set": {"lower": [0.0, 0.0], "upper": [2.0, 2.0], "contains_truth": True}}),
            ReplicationResult(1, 2, {"set": {"lower": [1.5, 0.0], "upper": [2.0, 2.0], "contains_truth": False}}),
        ]
        rows = aggregate(config, records)
        assert [r.parameter for r in rows] == ["lower", "upper"]
        assert rows[0].coverage == pytest.approx(0.5)
        assert rows[1].rmse == pytest.approx(1.0)

    def test_all_failed(self) -> None:
        """Estimators without successes give an empty row."""
        config = RunConfig(estimators=["two-step"], replications=1)
        rows = aggregate(config, [ReplicationResult(0, 1, errors={"two-step": "boom"})])
        assert [r.parameter for r in rows] == ["beta", "gamma"]
        assert rows[0].failures == 1
        assert rows[0].successes == 0
        assert np.isnan(rows[0].sd)


class TestRunMonteCarlo:
    """Tests for the replication loop."""

    def test_failure_is_recorded(self) -> None:
        """A failing estimator does not stop the others."""
        config = RunConfig(dgp=DgpConfig(n=200), estimators=["msm", "fe-logit"])
        with patch(
            "bundlechoice.estimators.estimate_msm_parametric", side_effect=EstimationError("boom")
        ):
            result = run_replication(config, 0)
        assert "boom" in result.errors["msm"]
        assert "fe-logit" in result.estimates

    def test_thread_count_does_not_matter(self, logit_config: RunConfig) -> None:
        """One and two threads give identical tables."""
        serial = run_monte_carlo(logit_config, show_progress=False)
        logit_config.threads = 2
        parallel = run_monte_carlo(logit_config, show_progress=False)
        assert [r.to_dict() for r in serial.rows] == [r.to_dict() for r in parallel.rows]
        assert len(serial.rows) == 1
        assert serial.rows[0].successes == 3

    def test_cache_reuse(self, logit_config: RunConfig, tmp_path: Path) -> None:
        """A repeated run reads every replication from the cache."""
        logit_config.cache_dir = tmp_path
        first = run_monte_carlo(logit_config, show_progress=False)
        with patch("bundlechoice.montecarlo.run_replication") as mock_run:
            second = run_monte_carlo(logit_config, show_progress=False)
        mock_run.assert_not_called()
        assert first.from_cache == 0
        assert second.from_cache == 3
        assert [r.to_dict() for r in first.rows] == [r.to_dict() for r in second.rows]

    def test_cache_disabled(self, logit_config: RunConfig, tmp_path: Path) -> None:
        """use_cache=False neither reads nor writes the cache."""
        logit_config.cache_dir = tmp_path
        run_monte_carlo(logit_config, show_progress=False, use_cache=False)
        assert not any(tmp_path.iterdir())

    def test_failures_counted(self, logit_config: RunConfig) -> None:
        """Every failed replication is counted."""
        with patch("bundlechoice.montecarlo.run_estimator", side_effect=EstimationError("boom")):
            result = run_monte_carlo(logit_config, show_progress=False)
        row = result.rows[0]
        assert row.failures == 3
        assert row.successes == 0
