"""
Estimators module for bundlechoice.

The two-step semiparametric estimator (first-step CCPs, second-step criterion
minimization), the set estimator, and three comparison estimators: simulated
method of moments for a parametric model, the conditional fixed-effect logit
and the criterion estimator without bundles.
"""

import logging
import time
from dataclasses import dataclass
from itertools import permutations, product
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp, softmax

from .ccp import CcpTable, estimate_ccp_table
from .config import EstimatorOptions, SetGridSpec
from .errors import EmptyGridError, EstimationError, InsufficientDataError
from .models import (
    BetaEstimate,
    ObservationPanel,
    ParametricEstimate,
    PointEstimate,
    SetEstimate,
    Theta,
)
from .moments import CriterionEvaluator

logger = logging.getLogger(__name__)

SIGN_COMBOS: List[Tuple[int, int]] = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
TIE_TOL = 1e-12
FINE_FACTOR = 4


def _elapsed_ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


def grid_axis(lo: float, hi: float, points: int, n_free: int, max_grid_size: int) -> np.ndarray:
    """Axis for the coarse search; coarsened so that the full grid stays under the cap."""
    if n_free > 2:
        points = max(2, min(points, int(np.floor(max_grid_size ** (1.0 / n_free) + 1e-9))))
    return np.linspace(lo, hi, points)


@dataclass
class _SearchResult:
    x: np.ndarray
    value: float
    grid_min: float
    evaluations: int


GridValues = Callable[[Sequence[np.ndarray]], Tuple[np.ndarray, np.ndarray]]


def central_minimizer(points: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Tied minimizer nearest to the centroid of all tied minimizers.

    The criterion is piecewise constant, so its minimum is attained on a region;
    the point returned always attains the minimum.
    """
    best = float(values.min())
    ties = points[values <= best + TIE_TOL]
    center = ties.mean(axis=0)
    nearest = int(np.argmin(np.sum((ties - center) ** 2, axis=1)))
    return ties[nearest].copy(), best


def _fine_axes(lo: np.ndarray, hi: np.ndarray, step: float, max_grid_size: int) -> List[np.ndarray]:
    dim = lo.size
    cap = max(2, int(np.floor(max_grid_size ** (1.0 / dim) + 1e-9)))
    axes = []
    for a, b in zip(lo, hi):
        count = min(cap, int(round((b - a) / (step / FINE_FACTOR))) + 1)
        axes.append(np.linspace(a, b, max(count, 2)))
    return axes


def _polish(
    points: np.ndarray,
    values: np.ndarray,
    objective: Callable[[np.ndarray], float],
    grid_values: GridValues,
    step: float,
    options: EstimatorOptions,
) -> _SearchResult:
    """
    Refine a coarse grid minimum.

    Nelder-Mead runs from the central tied grid point and from the next best
    grid points. A grid FINE_FACTOR times finer then covers the minimizers
    found, padded by one coarse step, and the central tied minimizer over all
    evaluated points is returned.
    """
    order = np.argsort(values, kind="stable")
    grid_min = float(values[order[0]])
    dim = points.shape[1]
    if dim == 0:
        return _SearchResult(points[order[0]].copy(), grid_min, grid_min, 0)

    anchors = points[values <= grid_min + TIE_TOL]
    best_value = grid_min
    start, _ = central_minimizer(points, values)
    starts = [start] + [points[i] for i in order[: options.restarts - 1]]

    evaluations = 0
    for x0 in starts:
        simplex = np.vstack([x0, x0 + step * np.eye(dim)])
        result = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "maxiter": options.nm_maxiter,
                "xatol": 1e-4,
                "fatol": 1e-12,
            },
        )
        evaluations += int(result.nfev)
        if float(result.fun) < best_value - TIE_TOL:
            best_value = float(result.fun)
            anchors = np.asarray(result.x, dtype=float)[None, :]

    lo, hi = anchors.min(axis=0) - step, anchors.max(axis=0) + step
    axes = _fine_axes(lo, hi, step, options.max_grid_size)
    fine_points, fine_values = grid_values(axes)
    evaluations += len(fine_values)
    x, value = central_minimizer(
        np.vstack([anchors, fine_points]),
        np.concatenate([np.full(len(anchors), best_value), fine_values]),
    )
    return _SearchResult(x, value, grid_min, evaluations)


def _first_step(
    panel: ObservationPanel,
    options: EstimatorOptions,
    table: Optional[CcpTable],
    n_jobs: int,
) -> CcpTable:
    if table is not None:
        return table
    return estimate_ccp_table(panel, options.ccp, n_jobs=n_jobs)


def _gamma_grid(axes: Sequence[np.ndarray], d_z: int) -> np.ndarray:
    if d_z == 1:
        return np.zeros((1, 0))
    return np.array(list(product(*axes)))


def _criterion_grid(
    evaluator: CriterionEvaluator, sb: int, sg: int, axes: Sequence[np.ndarray], nb: int, d_z: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Criterion over the product of the free-coordinate axes (beta axes first)."""
    beta_free = np.array(list(product(*axes[:nb]))) if nb else np.zeros((1, 0))
    gamma_free = _gamma_grid(axes[nb:], d_z)
    gammas = np.column_stack([np.full(len(gamma_free), float(sg)), gamma_free])
    values = np.concatenate(
        [
            evaluator.values_for_gammas(np.concatenate([[float(sb)], fb]), gammas)
            for fb in beta_free
        ]
    )
    points = np.array([np.concatenate([fb, fg]) for fb in beta_free for fg in gamma_free])
    return points.reshape(len(values), len(axes)), values


def estimate_two_step(
    panel: ObservationPanel,
    options: Optional[EstimatorOptions] = None,
    table: Optional[CcpTable] = None,
    n_jobs: int = 1,
) -> PointEstimate:
    """
    Minimize the sample criterion over normalized parameters.

    For each sign combination of the leading coordinates of beta and gamma,
    a coarse grid over the free coordinates is refined by Nelder-Mead and a
    finer local grid. The criterion is piecewise constant, so among tied
    minimizers the one nearest the centre of the tie set is returned.

    Args:
        panel: Observed panel (T >= 2)
        options: Estimator settings (defaults when omitted)
        table: Precomputed first-step CCPs; estimated from the panel when omitted
        n_jobs: Threads for fitting the first step

    Returns:
        PointEstimate with a normalized theta
    """
    options = options or EstimatorOptions()
    options.validate()
    start = time.perf_counter()
    table = _first_step(panel, options, table, n_jobs)
    evaluator = CriterionEvaluator(panel, table)

    nb, ng = panel.d_x - 1, panel.d_z - 1
    n_free = nb + ng
    axis = grid_axis(
        options.grid_lo, options.grid_hi, options.grid_points, n_free, options.max_grid_size
    )
    step = float(axis[1] - axis[0]) if axis.size > 1 else 0.25

    best: Optional[Tuple[float, Theta, _SearchResult, Tuple[int, int]]] = None
    total_evals = 0
    for sb, sg in SIGN_COMBOS:

        def grid_values(
            axes: Sequence[np.ndarray], sb: int = sb, sg: int = sg
        ) -> Tuple[np.ndarray, np.ndarray]:
            return _criterion_grid(evaluator, sb, sg, axes, nb, panel.d_z)

        def objective(v: np.ndarray, sb: int = sb, sg: int = sg) -> float:
            return evaluator.value(Theta.from_free(sb, sg, v[:nb], v[nb:]))

        points, values = grid_values([axis] * n_free)
        search = _polish(points, values, objective, grid_values, step, options)
        total_evals += search.evaluations + len(values)
        theta = Theta.from_free(sb, sg, search.x[:nb], search.x[nb:])
        logger.debug(f"Signs ({sb:+d}, {sg:+d}): criterion {search.value:.6g}")
        if best is None or search.value < best[0] - TIE_TOL:
            best = (search.value, theta, search, (sb, sg))

    assert best is not None
    value, theta, search, signs = best
    logger.info(f"Two-step estimate: beta={theta.beta}, gamma={theta.gamma}, criterion={value:.6g}")
    return PointEstimate(
        method="two-step",
        theta=theta,
        criterion_value=value,
        seed=options.seed,
        trace={
            "grid_min": search.grid_min,
            "evaluations": float(total_evals),
            "sign_beta": float(signs[0]),
            "sign_gamma": float(signs[1]),
        },
        runtime_ms=_elapsed_ms(start),
    )


def estimate_set(
    panel: ObservationPanel,
    grid_spec: Optional[SetGridSpec] = None,
    table: Optional[CcpTable] = None,
    options: Optional[EstimatorOptions] = None,
    signs: Optional[Sequence[Tuple[int, int]]] = None,
    n_jobs: int = 1,
) -> SetEstimate:
    """
    Level set {theta : criterion <= min + c_hat / a_N} over a grid.

    c_hat = c_scale * log N and a_N = N^(1/4).

    Raises:
        EmptyGridError: If the grid has no points
    """
    grid_spec = grid_spec or SetGridSpec()
    if grid_spec.points < 1 or grid_spec.hi < grid_spec.lo:
        raise EmptyGridError(f"grid {grid_spec.lo}:{grid_spec.hi}:{grid_spec.points} is empty")
    options = options or EstimatorOptions()
    if panel.n < 2:
        raise InsufficientDataError("the set estimator needs at least two individuals")
    table = _first_step(panel, options, table, n_jobs)
    evaluator = CriterionEvaluator(panel, table)

    nb, ng = panel.d_x - 1, panel.d_z - 1
    axis = np.linspace(grid_spec.lo, grid_spec.hi, grid_spec.points)
    axes = [axis] * (nb + ng)
    combos = list(signs) if signs is not None else list(SIGN_COMBOS)
    shape = tuple(a.size for a in axes)

    values = np.empty((len(combos),) + shape)
    for c_idx, (sb, sg) in enumerate(combos):
        _, flat = _criterion_grid(evaluator, sb, sg, axes, nb, panel.d_z)
        values[c_idx] = flat.reshape(shape)

    c_hat = grid_spec.c_scale * np.log(panel.n)
    a_n = panel.n**0.25
    estimate = SetEstimate(
        axes=axes,
        sign_combos=combos,
        criterion_values=values,
        c_hat=float(c_hat),
        a_n=float(a_n),
        min_criterion=float(values.min()),
    )
    logger.info(
        f"Set estimate: {int(estimate.accepted.sum())} of {values.size} grid points accepted"
    )
    return estimate


# Simulated method of moments for the parametric model


def _moment_features(panel: ObservationPanel) -> np.ndarray:
    """(n, T, 1 + 2 d_x + d_z) instruments (1, x_A, x_B, z)."""
    n, t_len = panel.n, panel.t_len
    x_flat = panel.x.reshape(n, t_len, -1)
    z = np.broadcast_to(panel.z[:, None, :], (n, t_len, panel.d_z))
    return np.concatenate([np.ones((n, t_len, 1)), x_flat, z], axis=2)


class SimulatedMoments:
    """
    Moments E[1{Y_it = j} (1, X_it, Z_i)] for j in {A, B, AB} and every t.

    Fixed effects are alpha_ij = eta0 + xbar_ij' eta1 + v_ij with v ~ N(0, 1),
    errors are Gumbel, and simulated choices are smoothed with a softmax at
    temperature `smoothing`. Draws are fixed at construction.
    """

    def __init__(
        self,
        panel: ObservationPanel,
        draws: int,
        seed: int = 0,
        smoothing: float = 0.1,
        weighting: str = "identity",
    ) -> None:
        self.panel = panel
        self.smoothing = smoothing
        self.d_x, self.d_z = panel.d_x, panel.d_z
        self.features = _moment_features(panel)
        self.xbar = panel.x.mean(axis=1)  # (n, 2, d_x)

        onehot = np.eye(4)[panel.y][..., 1:]  # (n, T, 3)
        contributions = onehot[..., :, None] * self.features[..., None, :]
        contributions = contributions.reshape(panel.n, -1)
        self.data_moments = contributions.mean(axis=0)

        rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
        self.v = rng.standard_normal((draws, panel.n, 2))
        self.eps = rng.gumbel(size=(draws, panel.n, panel.t_len, 2))
        self.weighting = weighting
        self.weights = self._weight_matrix(contributions, weighting)

    def _weight_matrix(self, contributions: np.ndarray, weighting: str) -> np.ndarray:
        k = contributions.shape[1]
        if weighting == "identity":
            return np.eye(k)
        var = contributions.var(axis=0)
        if np.any(var <= 0):
            logger.warning("Moment variances are singular; falling back to identity weighting")
            self.weighting = "identity"
            return np.eye(k)
        return np.diag(1.0 / var)

    def unpack(self, params: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float, np.ndarray]:
        dx, dz = self.d_x, self.d_z
        beta = params[:dx]
        gamma = params[dx : dx + dz]
        eta0 = float(params[dx + dz])
        eta1 = params[dx + dz + 1 :]
        return beta, gamma, eta0, eta1

    def simulate(self, params: np.ndarray) -> np.ndarray:
        beta, gamma, eta0, eta1 = self.unpack(np.asarray(params, dtype=float))
        alpha = eta0 + self.xbar @ eta1 + self.v  # (S, n, 2)
        delta = self.panel.x @ beta  # (n, T, 2)
        u_goods = delta[None] + alpha[:, :, None, :] + self.eps  # (S, n, T, 2)
        g = (self.panel.z @ gamma)[None, :, None]
        u = np.stack(
            [
                np.zeros_like(u_goods[..., 0]),
                u_goods[..., 0],
                u_goods[..., 1],
                u_goods[..., 0] + u_goods[..., 1] + g,
            ],
            axis=-1,
        )
        probs = softmax(u / self.smoothing, axis=-1).mean(axis=0)[..., 1:]  # (n, T, 3)
        contributions = probs[..., :, None] * self.features[..., None, :]
        return contributions.reshape(self.panel.n, -1).mean(axis=0)

    def objective(self, params: np.ndarray) -> float:
        diff = self.data_moments - self.simulate(params)
        return float(diff @ self.weights @ diff)

    def start(self) -> np.ndarray:
        params = np.zeros(2 * self.d_x + self.d_z + 1)
        params[0] = 1.0
        return params


def msm_objective(
    panel: ObservationPanel,
    params: np.ndarray,
    draws: int = 100,
    seed: int = 0,
    smoothing: float = 0.1,
) -> float:
    """Identity-weighted distance between data and simulated moments at params."""
    return SimulatedMoments(panel, draws, seed, smoothing).objective(np.asarray(params, dtype=float))


def estimate_msm_parametric(
    panel: ObservationPanel,
    sim_draws: Optional[int] = None,
    seed: Optional[int] = None,
    options: Optional[EstimatorOptions] = None,
) -> ParametricEstimate:
    """
    Simulated method of moments for the parametric fixed-effect model.

    Args:
        panel: Observed panel
        sim_draws: Number of simulation draws S (at least 100)
        seed: Seed of the simulation draws and restart points
        options: Estimator settings supplying defaults for the above

    Returns:
        ParametricEstimate with (beta, gamma, eta0, eta1)

    Raises:
        ValueError: If fewer than 100 draws are requested
    """
    options = options or EstimatorOptions()
    draws = options.msm_draws if sim_draws is None else sim_draws
    seed = options.seed if seed is None else seed
    if draws < 100:
        raise ValueError(f"simulated moments need at least 100 draws, got {draws}")
    start = time.perf_counter()
    moments = SimulatedMoments(panel, draws, seed, options.msm_smoothing, options.msm_weighting)

    x0 = moments.start()
    n_params = x0.size
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    starts = [x0] + [x0 + rng.normal(0.0, 0.5, n_params) for _ in range(options.restarts - 1)]
    maxiter = max(options.nm_maxiter, 200 * n_params)

    best_x, best_value = x0, np.inf
    for x_start in starts:
        result = minimize(
            moments.objective,
            x_start,
            method="Nelder-Mead",
            options={"maxiter": maxiter, "maxfev": 2 * maxiter, "xatol": 1e-6, "fatol": 1e-12},
        )
        if float(result.fun) < best_value:
            best_x, best_value = np.asarray(result.x, dtype=float), float(result.fun)

    if not np.isfinite(best_value):
        raise EstimationError("simulated moments objective is not finite at any start")
    beta, gamma, eta0, eta1 = moments.unpack(best_x)
    logger.info(f"MSM estimate: beta={beta}, gamma={gamma}, objective={best_value:.6g}")
    return ParametricEstimate(
        method="msm",
        beta=beta.copy(),
        gamma=gamma.copy(),
        eta0=eta0,
        eta1=eta1.copy(),
        objective=best_value,
        seed=seed,
        weighting=moments.weighting,
        runtime_ms=_elapsed_ms(start),
    )


# Conditional fixed-effect logit over {O, A, B}


@dataclass
class _LogitGroup:
    features: np.ndarray  # (n_i, n_perm, d_x)
    observed: np.ndarray  # (n_i,)


def _sequence_features(x_i: np.ndarray, sequence: Sequence[int]) -> np.ndarray:
    """Sum over periods of the chosen good's covariates; the outside option adds 0."""
    total = np.zeros(x_i.shape[-1])
    for t, choice in enumerate(sequence):
        if choice:
            total += x_i[t, choice - 1]
    return total


def _logit_groups(panel: ObservationPanel) -> Tuple[List[_LogitGroup], int]:
    no_bundle = np.all(panel.y < 3, axis=1)
    switching = np.array([len(set(row)) > 1 for row in panel.y])
    keep = np.nonzero(no_bundle & switching)[0]

    by_size: Dict[int, Tuple[List[np.ndarray], List[int]]] = {}
    for i in keep:
        observed = tuple(int(c) for c in panel.y[i])
        sequences = sorted(set(permutations(observed)))
        feats = np.array([_sequence_features(panel.x[i], seq) for seq in sequences])
        bucket = by_size.setdefault(len(sequences), ([], []))
        bucket[0].append(feats)
        bucket[1].append(sequences.index(observed))
    groups = [
        _LogitGroup(features=np.array(feats), observed=np.array(obs))
        for _, (feats, obs) in sorted(by_size.items())
    ]
    return groups, int(keep.size)


def estimate_fe_logit(panel: ObservationPanel) -> BetaEstimate:
    """
    Conditional multinomial logit with alternative-specific fixed effects.

    Uses individuals who never buy the bundle and do not choose the same
    alternative in every period, conditioning on the multiset of chosen
    alternatives.

    Raises:
        InsufficientDataError: If no individual switches alternatives
    """
    start = time.perf_counter()
    groups, n_used = _logit_groups(panel)
    if n_used == 0:
        raise InsufficientDataError("no individual switches among O, A, B; likelihood is flat")

    def negative_loglik(beta: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad = 0.0, np.zeros_like(beta)
        for group in groups:
            index = group.features @ beta  # (n_i, n_perm)
            rows = np.arange(index.shape[0])
            log_norm = logsumexp(index, axis=1)
            value -= float(np.sum(index[rows, group.observed] - log_norm))
            weights = np.exp(index - log_norm[:, None])
            expected = np.einsum("ip,ipk->ik", weights, group.features)
            grad -= np.sum(group.features[rows, group.observed] - expected, axis=0)
        return value / n_used, grad / n_used

    result = minimize(negative_loglik, np.zeros(panel.d_x), jac=True, method="BFGS")
    if not result.success:
        logger.warning(f"FE logit optimizer did not converge: {result.message}")
    beta = np.asarray(result.x, dtype=float)
    if beta[0] == 0:
        raise EstimationError("FE logit estimate has a zero leading coefficient")
    normalized = beta / abs(beta[0])
    logger.info(f"FE logit estimate on {n_used} switchers: beta={normalized}")
    return BetaEstimate(
        method="fe-logit",
        beta=normalized,
        objective=float(result.fun),
        n_used=n_used,
        runtime_ms=_elapsed_ms(start),
    )


def estimate_semi_nobundle(
    panel: ObservationPanel,
    options: Optional[EstimatorOptions] = None,
    table: Optional[CcpTable] = None,
    n_jobs: int = 1,
) -> BetaEstimate:
    """
    Criterion estimator built only from the choice restrictions on O, A and B.

    CCPs are renormalized by 1 - P(AB) unless options.renormalize_nobundle is off.
    """
    options = options or EstimatorOptions()
    options.validate()
    start = time.perf_counter()
    table = _first_step(panel, options, table, n_jobs)
    evaluator = CriterionEvaluator(panel, table)
    renorm = options.renormalize_nobundle

    nb = panel.d_x - 1
    axis = grid_axis(options.grid_lo, options.grid_hi, options.grid_points, nb, options.max_grid_size)
    step = float(axis[1] - axis[0]) if axis.size > 1 else 0.25
    points = np.array(list(product(*([axis] * nb)))) if nb else np.zeros((1, 0))

    best: Optional[Tuple[float, np.ndarray]] = None
    for sb in (1, -1):

        def objective(v: np.ndarray, sb: int = sb) -> float:
            return evaluator.nobundle_value(np.concatenate([[float(sb)], v]), renorm)

        def grid_values(
            axes: Sequence[np.ndarray], objective: Callable[[np.ndarray], float] = objective
        ) -> Tuple[np.ndarray, np.ndarray]:
            fine = np.array(list(product(*axes))).reshape(-1, nb)
            return fine, np.array([objective(p) for p in fine])

        values = np.array([objective(p) for p in points])
        search = _polish(points, values, objective, grid_values, step, options)
        if best is None or search.value < best[0] - TIE_TOL:
            best = (search.value, np.concatenate([[float(sb)], search.x]))

    assert best is not None
    value, beta = best
    logger.info(f"No-bundle criterion estimate: beta={beta}, criterion={value:.6g}")
    return BetaEstimate(
        method="semi-nb",
        beta=beta,
        objective=value,
        seed=options.seed,
        n_used=panel.n,
        runtime_ms=_elapsed_ms(start),
    )


EstimateResult = Union[PointEstimate, BetaEstimate, ParametricEstimate, SetEstimate]


def run_estimator(
    name: str,
    panel: ObservationPanel,
    options: Optional[EstimatorOptions] = None,
    set_grid: Optional[SetGridSpec] = None,
    table: Optional[CcpTable] = None,
    n_jobs: int = 1,
) -> EstimateResult:
    """
    Dispatch by estimator name.

    Raises:
        ValueError: If the name is unknown
    """
    options = options or EstimatorOptions()
    if name == "two-step":
        return estimate_two_step(panel, options, table, n_jobs)
    if name == "set":
        return estimate_set(panel, set_grid, table, options, n_jobs=n_jobs)
    if name == "msm":
        return estimate_msm_parametric(panel, options=options)
    if name == "fe-logit":
        return estimate_fe_logit(panel)
    if name == "semi-nb":
        return estimate_semi_nobundle(panel, options, table, n_jobs)
    raise ValueError(f"unknown estimator: {name}")
