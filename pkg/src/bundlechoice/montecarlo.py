"""
Monte Carlo module for bundlechoice.

Runs replications of simulate-then-estimate, reuses cached replications, and
aggregates the estimates into SD / rMSE / MAD / Err rows per estimator and
parameter block.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from .cache import cache_replication, get_cached_replication, load_cache, replication_key, save_cache
from .ccp import CcpTable, estimate_ccp_table
from .config import DgpConfig, RunConfig, dataclass_to_dict
from .dgp import draw_z, simulate
from .estimators import run_estimator
from .models import MetricsRow, SetEstimate, Theta

logger = logging.getLogger(__name__)

FIRST_STEP_ESTIMATORS = ("two-step", "set", "semi-nb")
BETA_ONLY_ESTIMATORS = ("fe-logit", "semi-nb")
ERR_SEED_KEY = 99


def replication_seed(base_seed: int, index: int) -> int:
    """Seed of replication `index`, derived from the base seed."""
    state = np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1, dtype=np.uint64)
    return int(state[0] % np.uint64(2**63))


@dataclass
class ReplicationResult:
    """Serialized estimates of one replication, plus the estimators that failed."""

    index: int
    seed: int
    estimates: Dict[str, dict] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "seed": self.seed,
            "estimates": self.estimates,
            "errors": self.errors,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReplicationResult":
        return cls(
            index=int(data["index"]),
            seed=int(data["seed"]),
            estimates=dict(data.get("estimates", {})),
            errors=dict(data.get("errors", {})),
        )


@dataclass
class MonteCarloResult:
    rows: List[MetricsRow]
    replications: List[ReplicationResult]
    from_cache: int = 0


def _replication_settings(config: RunConfig, index: int) -> dict:
    seed = replication_seed(config.base_seed, index)
    return {
        "dgp": dataclass_to_dict(replace(config.dgp, seed=seed)),
        "estimators": list(config.estimators),
        "estimator_options": dataclass_to_dict(config.estimator_options),
        "set_grid": dataclass_to_dict(config.set_grid),
        "seed": seed,
    }


def run_replication(config: RunConfig, index: int) -> ReplicationResult:
    """
    Simulate one panel and run every configured estimator on it.

    A failing estimator is recorded in `errors` and does not stop the others.
    """
    seed = replication_seed(config.base_seed, index)
    panel = simulate(replace(config.dgp, seed=seed))
    options = replace(
        config.estimator_options,
        seed=seed,
        ccp=replace(config.estimator_options.ccp, seed=seed),
    )
    truth = config.dgp.theta_true.normalize()
    result = ReplicationResult(index=index, seed=seed)
    table: Optional[CcpTable] = None

    for name in config.estimators:
        try:
            if name in FIRST_STEP_ESTIMATORS and table is None:
                table = estimate_ccp_table(panel, options.ccp)
            estimate = run_estimator(name, panel, options, config.set_grid, table)
            if isinstance(estimate, SetEstimate):
                record = estimate.to_dict()
                record["contains_truth"] = estimate.contains(truth)
            else:
                record = estimate.to_dict()
            result.estimates[name] = record
        except Exception as e:
            logger.warning(f"Replication {index}: {name} failed: {e}")
            result.errors[name] = str(e)
    return result


def coordinate_metrics(values: np.ndarray, truth: np.ndarray) -> Dict[str, float]:
    """
    Pooled SD, rMSE, MAD and bias over replications (rows) and coordinates (columns).

    rmse^2 = sd^2 + bias^2, with bias the root mean square of per-coordinate biases.
    """
    values = np.asarray(values, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if values.ndim != 2 or values.shape[1] == 0:
        return {"sd": 0.0, "rmse": 0.0, "mad": 0.0, "bias": 0.0}
    errors = values - truth
    coord_bias = errors.mean(axis=0)
    sd_sq = float(values.var(axis=0).mean())
    bias_sq = float(np.mean(coord_bias**2))
    return {
        "sd": float(np.sqrt(sd_sq)),
        "rmse": float(np.sqrt(np.mean(errors**2))),
        "mad": float(np.mean(np.abs(errors))),
        "bias": float(np.sqrt(bias_sq)),
    }


def sign_error(
    gammas: np.ndarray, gamma_true: np.ndarray, config: DgpConfig, eval_draws: int, seed: int = 0
) -> float:
    """Mean over replications of E|sign(Z'gamma_0) - sign(Z'gamma_hat)| on fresh Z draws."""
    if eval_draws < 1:
        raise ValueError("eval_draws must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), ERR_SEED_KEY]))
    z = draw_z(config, eval_draws, rng)
    truth_sign = np.sign(z @ gamma_true)
    return float(np.mean([np.mean(np.abs(truth_sign - np.sign(z @ g))) for g in gammas]))


def metrics(
    estimates: Sequence[Union[Theta, np.ndarray]],
    truth: Theta,
    config: DgpConfig,
    eval_draws: int = 10000,
    parameter: str = "gamma",
    estimator: str = "two-step",
    failures: int = 0,
    seed: int = 0,
) -> MetricsRow:
    """
    Summary row for one parameter block.

    Args:
        estimates: Normalized estimates; for the beta block plain beta vectors are accepted
        truth: True parameter (normalized here)
        config: Design, supplying the Z law for Err
        eval_draws: Number of Z draws for Err (gamma block only)
        parameter: "beta" or "gamma"
        estimator: Estimator tag for the row
        failures: Replications where the estimator failed
        seed: Seed of the Z draws

    Raises:
        ValueError: If there are no estimates or eval_draws is not positive
    """
    if not estimates:
        raise ValueError("metrics need at least one estimate")
    if eval_draws < 1:
        raise ValueError("eval_draws must be positive")
    truth = truth.normalize()
    if parameter == "beta":
        full = np.array([e.beta if isinstance(e, Theta) else np.asarray(e) for e in estimates])
        stats = coordinate_metrics(full[:, 1:], truth.free_beta)
        err = None
    elif parameter == "gamma":
        full = np.array([e.gamma for e in estimates if isinstance(e, Theta)])
        stats = coordinate_metrics(full[:, 1:], truth.free_gamma)
        err = sign_error(full, truth.gamma, config, eval_draws, seed)
    else:
        raise ValueError(f"parameter must be 'beta' or 'gamma', got {parameter!r}")
    return MetricsRow(
        estimator=estimator,
        parameter=parameter,
        design=config.design,
        n=config.n,
        t_len=config.t_len,
        err=err,
        successes=len(estimates),
        failures=failures,
        **stats,
    )


def _empty_row(name: str, parameter: str, config: DgpConfig, failures: int) -> MetricsRow:
    nan = float("nan")
    return MetricsRow(
        estimator=name,
        parameter=parameter,
        design=config.design,
        n=config.n,
        t_len=config.t_len,
        sd=nan,
        rmse=nan,
        mad=nan,
        bias=nan,
        successes=0,
        failures=failures,
    )


def aggregate(config: RunConfig, replications: Sequence[ReplicationResult]) -> List[MetricsRow]:
    """Metrics rows per estimator, in configured order, beta block before gamma."""
    dgp = config.dgp
    truth = dgp.theta_true.normalize()
    rows: List[MetricsRow] = []

    for name in config.estimators:
        records = [r.estimates[name] for r in replications if name in r.estimates]
        failures = sum(1 for r in replications if name in r.errors)

        if name == "set":
            if not records:
                rows += [_empty_row(name, p, dgp, failures) for p in ("lower", "upper")]
                continue
            free_truth = np.concatenate([truth.free_beta, truth.free_gamma])
            coverage = float(np.mean([bool(r.get("contains_truth", False)) for r in records]))
            for side in ("lower", "upper"):
                values = np.array([r[side] for r in records], dtype=float)
                stats = coordinate_metrics(values, free_truth)
                rows.append(
                    MetricsRow(
                        estimator=name,
                        parameter=side,
                        design=dgp.design,
                        n=dgp.n,
                        t_len=dgp.t_len,
                        coverage=coverage,
                        successes=len(records),
                        failures=failures,
                        **stats,
                    )
                )
            continue

        blocks = ("beta",) if name in BETA_ONLY_ESTIMATORS else ("beta", "gamma")
        if not records:
            rows += [_empty_row(name, p, dgp, failures) for p in blocks]
            continue
        if name in BETA_ONLY_ESTIMATORS:
            estimates: List[Union[Theta, np.ndarray]] = [
                np.asarray(r["theta"]["beta"], dtype=float) for r in records
            ]
        else:
            estimates = [Theta.from_dict(r["theta"]) for r in records]
        for block in blocks:
            rows.append(
                metrics(
                    estimates,
                    truth,
                    dgp,
                    config.eval_draws,
                    parameter=block,
                    estimator=name,
                    failures=failures,
                    seed=config.base_seed,
                )
            )
    return rows


def run_monte_carlo(
    config: RunConfig, show_progress: bool = True, use_cache: bool = True
) -> MonteCarloResult:
    """
    Run all replications and aggregate them.

    Replications run on config.threads threads; results are gathered by
    replication index, so the table does not depend on the thread count.

    Args:
        config: Validated run configuration
        show_progress: Whether to show a progress bar
        use_cache: Reuse and store replications in config.cache_dir when set

    Returns:
        MonteCarloResult with metrics rows and per-replication records
    """
    cache: Optional[Dict[str, dict]] = None
    if use_cache and config.cache_dir is not None:
        cache = load_cache(config.cache_dir)

    keys = [replication_key(_replication_settings(config, b)) for b in range(config.replications)]
    done: Dict[int, ReplicationResult] = {}
    if cache is not None:
        for b, key in enumerate(keys):
            record = get_cached_replication(cache, key)
            if record is not None:
                done[b] = ReplicationResult.from_dict(record)
    from_cache = len(done)
    pending = [b for b in range(config.replications) if b not in done]

    progress = tqdm(total=len(pending), desc="Replications", unit="rep", disable=not show_progress)
    outputs = Parallel(n_jobs=config.threads, backend="threading", return_as="generator")(
        delayed(run_replication)(config, b) for b in pending
    )
    for b, result in zip(pending, outputs):
        done[b] = result
        if cache is not None:
            cache_replication(cache, keys[b], result.to_dict())
        progress.update(1)
    progress.close()

    if cache is not None and pending:
        save_cache(config.cache_dir, cache)  # type: ignore[arg-type]

    replications = [done[b] for b in range(config.replications)]
    rows = aggregate(config, replications)
    failed = sum(len(r.errors) for r in replications)
    logger.info(
        f"Completed: {config.replications - sum(1 for r in replications if r.errors)}/"
        f"{config.replications} replications without failures, {from_cache} from cache, "
        f"{failed} estimator failures"
    )
    return MonteCarloResult(rows=rows, replications=replications, from_cache=from_cache)
