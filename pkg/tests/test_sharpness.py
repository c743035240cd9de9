"""Tests for the sharp-set membership oracle."""

import numpy as np
import pytest

from bundlechoice.dgp import population_ccps, random_discrete_instance
from bundlechoice.errors import DimensionMismatchError, PreconditionError
from bundlechoice.models import Choice, PairObservation, Theta, TransportProblem
from bundlechoice.sharpness import (
    choice_regions,
    closed_form_plan,
    construct_r_closed_form,
    feasible_transport,
    forbidden_from_index,
    intersection_empty,
    max_flow_value,
    pairs_from_instance,
    rationalizable,
    rationalize,
)

O, A, B, AB = Choice.O, Choice.A, Choice.B, Choice.AB
UNIFORM = np.full(4, 0.25)
P_S = np.array([0.2, 0.4, 0.1, 0.3])
P_T = np.array([0.3, 0.3, 0.2, 0.2])

# dA = 2, dB = -1, Gamma = 3 against an unchanged period
THETA = Theta(beta=[1.0], gamma=[3.0])
X_S = np.array([[2.0], [-1.0]])
X_T = np.zeros((2, 1))
Z = np.array([1.0])
EMPTY_CELLS = {(B, A), (O, A), (AB, A), (B, AB), (O, AB), (B, O), (A, B)}


class TestRegions:
    """Tests for the error regions."""

    def test_regions_cover_the_plane(self) -> None:
        """Every point lies in some region and in at most one interior."""
        regions = choice_regions(X_S, THETA, Z)
        points = np.random.default_rng(0).normal(0.0, 4.0, size=(2000, 2))
        closed = np.stack([r.contains(points) for r in regions])
        strict = np.stack([r.contains(points, strict=True) for r in regions])
        assert closed.any(axis=0).all()
        assert (strict.sum(axis=0) <= 1).all()

    def test_dimension_mismatch(self) -> None:
        """Covariates must match beta."""
        with pytest.raises(DimensionMismatchError):
            choice_regions(np.zeros((2, 3)), THETA, Z)

    def test_forbidden_pattern(self) -> None:
        """The case-one index pattern forbids exactly seven cells."""
        mask = forbidden_from_index((2.0, -1.0), (0.0, 0.0), 3.0)
        expected = np.zeros((4, 4), dtype=bool)
        for j, k in EMPTY_CELLS:
            expected[j, k] = True
        np.testing.assert_array_equal(mask, expected)

    def test_intersection_empty(self) -> None:
        """Pairwise checks agree with the mask."""
        assert intersection_empty(B, A, X_S, X_T, THETA, Z)
        assert not intersection_empty(A, A, X_S, X_T, THETA, Z)

    def test_unchanged_covariates(self) -> None:
        """Identical covariates allow only the diagonal."""
        mask = forbidden_from_index((0.3, -0.7), (0.3, -0.7), 1.5)
        np.testing.assert_array_equal(mask, ~np.eye(4, dtype=bool))


class TestClosedForms:
    """Tests for the explicit joint distributions."""

    def test_case_one(self) -> None:
        """Case one reproduces both marginals on allowed cells."""
        plan = construct_r_closed_form(1, P_S, P_T)
        expected = np.zeros((4, 4))
        expected[B, B] = 0.1
        expected[A, A] = 0.3
        expected[O, B] = 0.1
        expected[O, O] = 0.1
        expected[A, AB] = 0.1
        expected[AB, AB] = 0.1
        expected[AB, O] = 0.2
        np.testing.assert_allclose(plan.r, expected, atol=1e-12)
        mask = forbidden_from_index((2.0, -1.0), (0.0, 0.0), 3.0)
        assert plan.satisfies(TransportProblem(P_S, P_T, mask))

    def test_case_two_uniform(self) -> None:
        """Equal uniform marginals give the diagonal plan."""
        plan = construct_r_closed_form(2, UNIFORM, UNIFORM)
        np.testing.assert_allclose(plan.r, np.eye(4) * 0.25, atol=1e-12)

    def test_precondition_violation(self) -> None:
        """The violated inequality is reported."""
        with pytest.raises(PreconditionError) as exc_info:
            construct_r_closed_form(1, [0.3, 0.2, 0.2, 0.3], [0.2, 0.4, 0.2, 0.2])
        assert exc_info.value.inequality == "P_t(A) <= P_s(A)"

    def test_unknown_case(self) -> None:
        """Only cases one and two have closed forms."""
        with pytest.raises(ValueError):
            construct_r_closed_form(3, UNIFORM, UNIFORM)

    def test_canonical_pattern(self) -> None:
        """The canonical pattern needs no transformation."""
        result = closed_form_plan(P_S, P_T, 2.0, -1.0, 3.0)
        assert result is not None
        case, plan = result
        assert case == 1
        np.testing.assert_allclose(plan.r, construct_r_closed_form(1, P_S, P_T).r)

    def test_swapped_goods(self) -> None:
        """Swapping the goods maps back onto case one."""
        swap = [0, 2, 1, 3]
        ps, pt = P_S[swap], P_T[swap]
        result = closed_form_plan(ps, pt, -1.0, 2.0, 3.0)
        assert result is not None
        case, plan = result
        assert case == 1
        mask = forbidden_from_index((-1.0, 2.0), (0.0, 0.0), 3.0)
        assert plan.satisfies(TransportProblem(ps, pt, mask))

    def test_negative_gamma_has_no_closed_form(self) -> None:
        """Substitutes are outside the canonical patterns."""
        assert closed_form_plan(P_S, P_T, 2.0, -1.0, -1.0) is None


class TestTransport:
    """Tests for flow and plan construction."""

    def test_unrestricted_flow(self) -> None:
        """With no forbidden cells the full mass flows."""
        assert max_flow_value(TransportProblem(P_S, P_T)) == pytest.approx(1.0)

    def test_blocked_row(self) -> None:
        """A row with every cell forbidden caps the flow."""
        mask = np.zeros((4, 4), dtype=bool)
        mask[A] = True
        problem = TransportProblem([0.2, 0.5, 0.2, 0.1], UNIFORM, mask)
        assert max_flow_value(problem) == pytest.approx(0.5)
        assert feasible_transport(problem) is None

    def test_plan_respects_mask(self) -> None:
        """The LP plan avoids forbidden cells."""
        mask = forbidden_from_index((2.0, -1.0), (0.0, 0.0), 3.0)
        problem = TransportProblem(P_S, P_T, mask)
        plan = feasible_transport(problem)
        assert plan is not None
        assert plan.satisfies(problem)


class TestRationalize:
    """Tests for the oracle over lists of pairs."""

    def test_feasible_pair(self) -> None:
        """The case-one marginals are rationalizable."""
        pair = PairObservation(p_s=P_S, p_t=P_T, x_s=X_S, x_t=X_T, z=Z)
        report = rationalize([pair], THETA)
        assert report.rationalizable
        assert report.first_infeasible is None
        assert report.flows[0] == pytest.approx(1.0)

    def test_choice_restriction_counterexample(self) -> None:
        """A falling index with a rising share cannot be rationalized."""
        pair = PairObservation(
            p_s=[0.25, 0.4, 0.25, 0.1],
            p_t=[0.25, 0.2, 0.25, 0.3],
            x_s=[[-1.0], [0.0]],
            x_t=[[0.0], [0.0]],
            z=[1.0],
        )
        report = rationalize([pair], Theta(beta=[1.0], gamma=[0.0]))
        assert not report.rationalizable
        assert report.first_infeasible == 0
        assert report.to_dict()["first_infeasible"] == 0

    @pytest.mark.parametrize("beta,gamma", [(1.0, 2.0), (-1.0, -0.5), (0.3, 0.0)])
    def test_unchanged_covariates(self, beta: float, gamma: float) -> None:
        """Equal covariates and equal CCPs are rationalizable for any theta."""
        pair = PairObservation(p_s=[0.1, 0.2, 0.3, 0.4], p_t=[0.1, 0.2, 0.3, 0.4], x_s=X_S, x_t=X_S, z=Z)
        assert rationalizable([pair], Theta(beta=[beta], gamma=[gamma]))

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_true_parameter_is_rationalizable(self, seed: int) -> None:
        """Exact CCPs of a discrete instance pass at the true parameter."""
        instance = random_discrete_instance(np.random.default_rng(seed), n_types=4, t_len=3)
        pairs = pairs_from_instance(instance, population_ccps(instance))
        assert len(pairs) == 4 * 6
        assert rationalizable(pairs, instance.theta)

    def test_closed_forms_agree_with_flow(self) -> None:
        """Wherever a closed form applies, its plan is feasible and the flow is full."""
        rng = np.random.default_rng(21)
        checked = 0
        for _ in range(20):
            instance = random_discrete_instance(rng, n_types=4, gamma_sign=1)
            ccps = population_ccps(instance)
            delta = instance.x @ instance.theta.beta
            gamma = instance.gamma_values()
            for i in range(instance.n_types):
                d = delta[i, 0] - delta[i, 1]
                result = closed_form_plan(ccps[i, 0], ccps[i, 1], d[0], d[1], gamma[i])
                if result is None:
                    continue
                mask = forbidden_from_index(tuple(delta[i, 0]), tuple(delta[i, 1]), gamma[i])
                problem = TransportProblem(ccps[i, 0], ccps[i, 1], mask)
                assert result[1].satisfies(problem, tol=1e-9)
                assert max_flow_value(problem) >= 1.0 - 1e-10
                checked += 1
        assert checked > 0

    def test_substitutes_decided_by_flow(self) -> None:
        """Negative Gamma never gets a closed form, and the flow still accepts the truth."""
        rng = np.random.default_rng(22)
        for _ in range(10):
            instance = random_discrete_instance(rng, n_types=4, gamma_sign=-1)
            ccps = population_ccps(instance)
            delta = instance.x @ instance.theta.beta
            gamma = instance.gamma_values()
            assert np.all(gamma < 0)
            for i in range(instance.n_types):
                d = delta[i, 0] - delta[i, 1]
                assert closed_form_plan(ccps[i, 0], ccps[i, 1], d[0], d[1], gamma[i]) is None
                mask = forbidden_from_index(tuple(delta[i, 0]), tuple(delta[i, 1]), gamma[i])
                problem = TransportProblem(ccps[i, 0], ccps[i, 1], mask)
                assert max_flow_value(problem) >= 1.0 - 1e-10

    def test_threads_agree(self) -> None:
        """Parallel checks give the same flows."""
        instance = random_discrete_instance(np.random.default_rng(9), n_types=3)
        pairs = pairs_from_instance(instance, population_ccps(instance))
        theta = Theta(beta=[1.0, -1.0], gamma=[-1.0, 0.5])
        serial = rationalize(pairs, theta, n_jobs=1)
        parallel = rationalize(pairs, theta, n_jobs=2)
        assert serial.flows == parallel.flows
