"""
Sharp-set membership oracle.

A parameter value rationalizes a pair of marginal CCPs when some joint
distribution over (choice in s, choice in t) reproduces both marginals and puts
no mass on choice pairs whose error regions cannot overlap. Regions live in the
plane of the composite shocks (alpha folded into eps, which leaves overlaps
unchanged).
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations, product
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import linprog

from .dgp import DiscreteInstance
from .errors import DimensionMismatchError, PreconditionError
from .models import (
    CHOICES,
    Choice,
    PairObservation,
    Region,
    Theta,
    TransportPlan,
    TransportProblem,
)

logger = logging.getLogger(__name__)

FLOW_TOL = 1e-10
INTERIOR_TOL = 1e-9
PRECONDITION_TOL = 1e-12

# Shock loadings of each choice: u_j = c_j + w_j . eps
_LOADINGS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])

_SWAP_GOODS = np.array([0, 2, 1, 3])
_REFLECT = np.array([3, 2, 1, 0])


def _index_constants(delta_a: float, delta_b: float, gamma_z: float) -> np.ndarray:
    return np.array([0.0, delta_a, delta_b, delta_a + delta_b + gamma_z])


def regions_from_index(delta_a: float, delta_b: float, gamma_z: float) -> List[Region]:
    """Regions for O, A, B, AB given the two indices and Gamma(z)."""
    c = _index_constants(delta_a, delta_b, gamma_z)
    regions = []
    for j in CHOICES:
        others = [k for k in CHOICES if k != j]
        a = np.array([_LOADINGS[k] - _LOADINGS[j] for k in others])
        b = np.array([c[j] - c[k] for k in others])
        regions.append(Region(a=a, b=b))
    return regions


def _indices(x, theta: Theta, z) -> Tuple[float, float, float]:
    x = np.asarray(x, dtype=float)
    if x.shape != (2, theta.d_x):
        raise DimensionMismatchError(f"covariates must have shape (2, {theta.d_x}), got {x.shape}")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (theta.d_z,):
        raise DimensionMismatchError(f"z must have length {theta.d_z}")
    delta = x @ theta.beta
    return float(delta[0]), float(delta[1]), float(z @ theta.gamma)


def choice_regions(x, theta: Theta, z) -> List[Region]:
    """
    Error regions where each choice is optimal, in the order O, A, B, AB.

    Args:
        x: Covariates of goods A and B, shape (2, d_x)
        theta: Parameter value
        z: Complementarity covariates

    Returns:
        Four closed polygons covering the plane
    """
    return regions_from_index(*_indices(x, theta, z))


def _interior_empty(region: Region) -> bool:
    """
    True when the polygon has no interior point.

    Solves for the largest inscribed disc (radius capped at 1); the interior is
    empty when the LP is infeasible or the radius vanishes.
    """
    norms = np.linalg.norm(region.a, axis=1)
    a_ub = np.column_stack([region.a, norms])
    cost = np.array([0.0, 0.0, -1.0])
    bounds = [(None, None), (None, None), (0.0, 1.0)]
    result = linprog(cost, A_ub=a_ub, b_ub=region.b, bounds=bounds, method="highs")
    if result.status == 2:
        return True
    if result.status != 0:
        logger.warning(f"Inscribed-disc LP ended with status {result.status}: {result.message}")
        return False
    return bool(-result.fun <= INTERIOR_TOL)


def intersection_empty(j: Choice, k: Choice, x_s, x_t, theta: Theta, z) -> bool:
    """Whether region j at x_s and region k at x_t share no interior point."""
    regions_s = choice_regions(x_s, theta, z)
    regions_t = choice_regions(x_t, theta, z)
    return _interior_empty(regions_s[Choice(j)].intersect(regions_t[Choice(k)]))


def forbidden_from_index(
    delta_s: Tuple[float, float], delta_t: Tuple[float, float], gamma_z: float
) -> np.ndarray:
    """4 x 4 mask of choice pairs (j in s, k in t) with disjoint regions."""
    regions_s = regions_from_index(delta_s[0], delta_s[1], gamma_z)
    regions_t = regions_from_index(delta_t[0], delta_t[1], gamma_z)
    mask = np.zeros((4, 4), dtype=bool)
    for j, k in product(CHOICES, CHOICES):
        mask[j, k] = _interior_empty(regions_s[j].intersect(regions_t[k]))
    return mask


def forbidden_mask(x_s, x_t, theta: Theta, z) -> np.ndarray:
    d_s = _indices(x_s, theta, z)
    d_t = _indices(x_t, theta, z)
    return forbidden_from_index(d_s[:2], d_t[:2], d_s[2])


def max_flow_value(problem: TransportProblem) -> float:
    """
    Maximum flow from the period-s choices to the period-t choices.

    Allowed cells have unlimited capacity, so the minimum cut is the smallest
    value over row subsets S of (mass of rows outside S) + (mass of columns
    reachable from S).
    """
    allowed = ~problem.forbidden
    p_s, p_t = problem.row_marginals, problem.col_marginals
    best = float(p_s.sum())
    rows = range(4)
    for size in range(1, 5):
        for subset in combinations(rows, size):
            inside = np.zeros(4, dtype=bool)
            inside[list(subset)] = True
            reachable = allowed[inside].any(axis=0)
            cut = float(p_s[~inside].sum() + p_t[reachable].sum())
            best = min(best, cut)
    return best


def feasible_transport(problem: TransportProblem) -> Optional[TransportPlan]:
    """
    A joint distribution with the given marginals avoiding forbidden cells.

    Returns:
        TransportPlan, or None when the max flow falls short of 1
    """
    flow = max_flow_value(problem)
    if flow < 1.0 - FLOW_TOL:
        logger.debug(f"Transport infeasible: max flow {flow:.12f}")
        return None

    a_eq = np.zeros((8, 16))
    for j in range(4):
        a_eq[j, 4 * j : 4 * j + 4] = 1.0
        a_eq[4 + j, j::4] = 1.0
    b_eq = np.concatenate([problem.row_marginals, problem.col_marginals])
    bounds = [(0.0, 0.0) if f else (0.0, None) for f in problem.forbidden.ravel()]
    result = linprog(
        np.zeros(16), A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs-ds"
    )
    if result.status != 0:
        logger.warning(f"Transport LP failed although the flow is feasible: {result.message}")
        return None
    r = np.clip(result.x.reshape(4, 4), 0.0, None)
    r[problem.forbidden] = 0.0
    return TransportPlan(r=r)


def _check(preconditions: Sequence[Tuple[str, float, float]]) -> None:
    for text, lhs, rhs in preconditions:
        if lhs > rhs + PRECONDITION_TOL:
            raise PreconditionError(text, lhs, rhs)


def construct_r_closed_form(case: int, p_s, p_t) -> TransportPlan:
    """
    Explicit joint distribution for the two canonical sign patterns.

    Case 1: dB <= 0 <= dA + dB with Gamma >= min(dA, -dB).
    Case 2: the same index pattern with Gamma < min(dA, -dB).

    Raises:
        PreconditionError: If the marginals violate the case's inequalities
    """
    p_s = np.asarray(p_s, dtype=float)
    p_t = np.asarray(p_t, dtype=float)
    if p_s.shape != (4,) or p_t.shape != (4,):
        raise DimensionMismatchError("marginals must be 4-vectors")
    s_o, s_a, s_b, s_ab = p_s
    t_o, t_a, t_b, t_ab = p_t
    r = np.zeros((4, 4))
    O, A, B, AB = Choice.O, Choice.A, Choice.B, Choice.AB

    if case == 1:
        _check(
            [
                ("P_t(A) <= P_s(A)", t_a, s_a),
                ("P_s(B) <= P_t(B)", s_b, t_b),
                ("P_t(A) + P_t(AB) <= P_s(A) + P_s(AB)", t_a + t_ab, s_a + s_ab),
                ("P_t(B) + P_s(A) <= 1", t_b + s_a, 1.0),
            ]
        )
        r[B, B] = s_b
        r[A, A] = t_a
        r[O, B] = min(t_b - s_b, s_o)
        r[AB, B] = t_b - s_b - r[O, B]
        r[O, O] = s_o - r[O, B]
        r[A, AB] = min(s_a - t_a, t_ab)
        r[A, O] = s_a - t_a - r[A, AB]
        r[AB, AB] = t_ab - r[A, AB]
        r[AB, O] = s_ab - r[AB, AB] - r[AB, B]
    elif case == 2:
        _check(
            [
                ("P_t(A) <= P_s(A)", t_a, s_a),
                ("P_s(B) <= P_t(B)", s_b, t_b),
                ("P_t(A) + P_t(AB) <= P_s(A) + P_s(AB)", t_a + t_ab, s_a + s_ab),
                ("P_s(B) + P_s(AB) <= P_t(B) + P_t(AB)", s_b + s_ab, t_b + t_ab),
            ]
        )
        r[B, B] = s_b
        r[A, A] = t_a
        r[O, O] = min(t_o, s_o)
        r[O, B] = s_o - r[O, O]
        r[A, O] = t_o - r[O, O]
        r[AB, AB] = min(t_ab, s_ab)
        r[AB, B] = s_ab - r[AB, AB]
        r[A, AB] = t_ab - r[AB, AB]
        r[A, B] = s_a + t_b - 1.0 + r[AB, AB] + r[O, O]
    else:
        raise ValueError(f"closed forms exist for cases 1 and 2, got {case}")

    return TransportPlan(r=np.where(np.abs(r) < PRECONDITION_TOL, 0.0, r))


def _canonical_case(d_a: float, d_b: float, gamma_z: float) -> Optional[int]:
    """
    Case of an index pattern with dB <= 0 <= dA + dB, None otherwise.

    Both closed forms assume Gamma >= 0. The symmetries tried by closed_form_plan
    keep the sign of Gamma, so substitutes never reach a canonical pattern and
    max_flow_value alone decides them.
    """
    if gamma_z < 0 or not (d_b <= 0.0 <= d_a + d_b):
        return None
    return 1 if gamma_z >= min(d_a, -d_b) else 2


def closed_form_plan(
    p_s, p_t, d_a: float, d_b: float, gamma_z: float
) -> Optional[Tuple[int, TransportPlan]]:
    """
    Closed-form plan for any index pattern reachable from the canonical ones.

    Tries every combination of swapping the goods, reflecting (O <-> AB with
    A <-> B) and swapping the periods. Returns (case, plan) or None when no
    combination is canonical or the marginals fail its preconditions.
    """
    for swap_goods, reflect, swap_periods in product((False, True), repeat=3):
        ps = np.asarray(p_s, dtype=float).copy()
        pt = np.asarray(p_t, dtype=float).copy()
        da, db = d_a, d_b
        if swap_goods:
            ps, pt, da, db = ps[_SWAP_GOODS], pt[_SWAP_GOODS], db, da
        if reflect:
            ps, pt, da, db = ps[_REFLECT], pt[_REFLECT], -da, -db
        if swap_periods:
            ps, pt, da, db = pt, ps, -da, -db
        case = _canonical_case(da, db, gamma_z)
        if case is None:
            continue
        try:
            r = construct_r_closed_form(case, ps, pt).r
        except PreconditionError as e:
            logger.debug(f"Closed form case {case} not applicable: {e}")
            return None
        if swap_periods:
            r = r.T
        if reflect:
            r = r[np.ix_(_REFLECT, _REFLECT)]
        if swap_goods:
            r = r[np.ix_(_SWAP_GOODS, _SWAP_GOODS)]
        return case, TransportPlan(r=r)
    return None


@dataclass
class RationalizeReport:
    """Outcome of the oracle over a list of covariate pairs."""

    rationalizable: bool
    first_infeasible: Optional[int] = None
    flows: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rationalizable": self.rationalizable,
            "first_infeasible": self.first_infeasible,
            "flows": self.flows,
        }


def pair_flow(pair: PairObservation, theta: Theta) -> float:
    mask = forbidden_mask(pair.x_s, pair.x_t, theta, pair.z)
    return max_flow_value(TransportProblem(pair.p_s, pair.p_t, mask))


def rationalize(
    pairs: Sequence[PairObservation], theta: Theta, n_jobs: int = 1
) -> RationalizeReport:
    """
    Check every pair and report the first one theta cannot rationalize.

    Args:
        pairs: Marginal CCPs at each covariate pair
        theta: Candidate parameter value
        n_jobs: Worker threads for the per-pair checks

    Returns:
        RationalizeReport with one flow value per pair
    """
    if n_jobs > 1 and len(pairs) > 1:
        flows = Parallel(n_jobs=n_jobs, backend="threading")(
            delayed(pair_flow)(pair, theta) for pair in pairs
        )
    else:
        flows = [pair_flow(pair, theta) for pair in pairs]
    flows = [float(f) for f in flows]
    first = next((i for i, f in enumerate(flows) if f < 1.0 - FLOW_TOL), None)
    if first is not None:
        logger.info(f"Pair {first} is not rationalizable (max flow {flows[first]:.6f})")
    return RationalizeReport(rationalizable=first is None, first_infeasible=first, flows=flows)


def rationalizable(pairs: Sequence[PairObservation], theta: Theta, n_jobs: int = 1) -> bool:
    return rationalize(pairs, theta, n_jobs).rationalizable


def pairs_from_instance(instance: DiscreteInstance, ccps: np.ndarray) -> List[PairObservation]:
    """One PairObservation per covariate type and ordered period pair."""
    pairs = []
    for i in range(instance.n_types):
        for s, t in product(range(instance.t_len), repeat=2):
            if s == t:
                continue
            pairs.append(
                PairObservation(
                    p_s=ccps[i, s],
                    p_t=ccps[i, t],
                    x_s=instance.x[i, s],
                    x_t=instance.x[i, t],
                    z=instance.z[i],
                )
            )
    return pairs
