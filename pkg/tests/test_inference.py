"""Tests for the complementarity tests, substitution signs and eta bounds."""

import math

import numpy as np
import pytest

from bundlechoice.ccp import CcpTable, population_ccp_table
from bundlechoice.config import DgpConfig, LatentGammaSpec, TestOptions
from bundlechoice.dgp import simulate
from bundlechoice.errors import InsufficientDataError
from bundlechoice.inference import (
    ZCell,
    demand_slope_signs,
    estimate_s_ab,
    eta_bounds,
    fit_s_ab,
    test_complementarity,
    test_substitutability,
    xi_indicator,
)
from bundlechoice.models import Choice, ObservationPanel

RISING = np.array([0.1, 0.3, 0.3, 0.3])
FALLING = np.array([0.4, 0.2, 0.2, 0.2])


def two_period_table(n: int, first, second) -> CcpTable:
    """Population table with the same CCPs for every individual."""
    ccps = np.empty((n, 2, 4))
    ccps[:, 0] = first
    ccps[:, 1] = second
    return population_ccp_table(ccps)


def panel_with_choices(n: int, y_first: int, y_second: int) -> ObservationPanel:
    """Simulated covariates with prescribed choices."""
    base = simulate(DgpConfig(n=n, seed=8))
    y = np.empty((n, 2), dtype=np.int64)
    y[:, 0] = y_first
    y[:, 1] = y_second
    return ObservationPanel(x=base.x, z=base.z, y=y)


class TestGates:
    """Tests for the xi gates and z cells."""

    def test_xi_one(self) -> None:
        """A, B and AB all weakly more likely."""
        assert xi_indicator(RISING, FALLING, 1)
        assert not xi_indicator(FALLING, RISING, 1)

    def test_xi_two(self) -> None:
        """A, AB and O all weakly more likely."""
        assert xi_indicator([0.3, 0.3, 0.1, 0.3], [0.2, 0.2, 0.4, 0.2], 2)
        assert not xi_indicator(RISING, FALLING, 2)

    def test_unknown_kind(self) -> None:
        """Only kinds 1 and 2 exist."""
        with pytest.raises(ValueError):
            xi_indicator(RISING, FALLING, 3)

    def test_vectorized(self) -> None:
        """Gates apply row by row."""
        p_s = np.vstack([RISING, FALLING])
        p_t = np.vstack([FALLING, RISING])
        np.testing.assert_array_equal(xi_indicator(p_s, p_t, 1), [True, False])

    def test_parse_cell(self) -> None:
        """Empty ends are unbounded."""
        cell = ZCell.parse("1:0.5:")
        assert cell.coordinate == 1
        assert cell.lo == 0.5
        assert cell.hi == math.inf

    def test_parse_error(self) -> None:
        """Malformed cells raise ValueError."""
        with pytest.raises(ValueError, match="coordinate:lo:hi"):
            ZCell.parse("0.5")

    def test_mask(self) -> None:
        """Half-open intervals."""
        z = np.array([[0.0], [1.0], [2.0]])
        np.testing.assert_array_equal(ZCell(0, 0.0, 2.0).mask(z), [True, True, False])
        with pytest.raises(ValueError):
            ZCell(3).mask(z)


class TestComplementarityTest:
    """Tests for the moment-inequality tests."""

    def test_no_cells(self) -> None:
        """Too few individuals leaves no cells and a zero statistic."""
        panel = panel_with_choices(10, Choice.O, Choice.AB)
        result = test_complementarity(panel, table=two_period_table(10, RISING, FALLING))
        assert result.statistic == 0.0
        assert result.cells_used == 0
        assert not result.reject

    def test_rejects_falling_demand(self) -> None:
        """Demand that drops wherever the gate fires rejects complementarity."""
        panel = panel_with_choices(200, Choice.O, Choice.AB)
        result = test_complementarity(panel, table=two_period_table(200, RISING, FALLING))
        assert result.cells_used == 2
        assert result.statistic == pytest.approx(math.sqrt(200))
        assert result.reject
        assert result.to_dict()["n_cells"] == 2

    def test_accepts_rising_demand(self) -> None:
        """Demand that rises with the gate is consistent with the null."""
        panel = panel_with_choices(200, Choice.AB, Choice.O)
        result = test_complementarity(panel, table=two_period_table(200, RISING, FALLING))
        assert result.statistic == 0.0
        assert not result.reject

    def test_alpha_override(self) -> None:
        """alpha overrides the options."""
        panel = panel_with_choices(10, Choice.O, Choice.O)
        table = two_period_table(10, RISING, FALLING)
        result = test_complementarity(panel, alpha=0.1, table=table, options=TestOptions(alpha=0.2))
        assert result.alpha == 0.1

    def test_empty_z_cell(self) -> None:
        """A z cell without individuals is an error."""
        panel = panel_with_choices(10, Choice.O, Choice.O)
        with pytest.raises(InsufficientDataError):
            test_complementarity(
                panel, z_cell=ZCell(0, lo=1e9), table=two_period_table(10, RISING, FALLING)
            )

    def test_substitutability_gate_silent(self) -> None:
        """The xi-2 gate never fires on these CCPs."""
        panel = panel_with_choices(200, Choice.O, Choice.AB)
        result = test_substitutability(panel, table=two_period_table(200, RISING, FALLING))
        assert result.hypothesis == "substitutability"
        assert result.cells_used == 0


class TestSubstitutionSign:
    """Tests for s_AB."""

    def test_no_price_variation(self) -> None:
        """Constant covariates give sign 0."""
        base = simulate(DgpConfig(n=50))
        x = base.x.copy()
        x[:, 1] = x[:, 0]
        panel = ObservationPanel(x=x, z=base.z, y=base.y)
        result = fit_s_ab(panel)
        assert result.sign == 0
        assert math.isnan(result.std_error)

    def test_bad_coordinate(self) -> None:
        """The price coordinate must exist."""
        with pytest.raises(ValueError):
            fit_s_ab(simulate(DgpConfig(n=10)), price_coordinate=5)

    def test_negative_response(self) -> None:
        """Buying A exactly when p_B falls gives a negative sign."""
        rng = np.random.default_rng(0)
        n = 400
        x = rng.normal(size=(n, 2, 2, 2))
        z = rng.normal(size=(n, 2))
        price_change = x[:, 1, 1, 0] - x[:, 0, 1, 0]
        y = np.zeros((n, 2), dtype=np.int64)
        y[price_change < 0, 1] = Choice.A
        panel = ObservationPanel(x=x, z=z, y=y)
        result = fit_s_ab(panel)
        assert result.slope < 0
        assert result.sign == -1
        assert estimate_s_ab(panel) == -1

    @pytest.mark.parametrize("gamma_z,bad_sign", [(1.0, -1), (-1.0, 1)])
    def test_exact_demand_slopes(self, gamma_z: float, bad_sign: int) -> None:
        """Complements never lower the demand for A as delta_B rises; substitutes never raise it."""
        rng = np.random.default_rng(1)
        shocks = rng.normal(size=(60, 2))
        weights = np.full(60, 1 / 60)
        signs = demand_slope_signs(0.2, np.linspace(-2.0, 2.0, 9), gamma_z, shocks, weights)
        assert signs.shape == (8,)
        assert not np.any(signs == bad_sign)


class TestEtaBounds:
    """Tests for bounds on the share of complements."""

    def test_no_gate_fires(self) -> None:
        """Without gated observations both sides are trivial."""
        panel = panel_with_choices(10, Choice.O, Choice.O)
        table = two_period_table(10, [0.2, 0.3, 0.2, 0.3], [0.3, 0.2, 0.3, 0.2])
        bounds = eta_bounds(panel, table)
        assert (bounds.lower, bounds.upper) == (0.0, 1.0)
        assert bounds.lower_trivial and bounds.upper_trivial
        assert bounds.valid

    def test_upper_side_observed(self) -> None:
        """The xi-1 gate fires on one pair only."""
        panel = panel_with_choices(10, Choice.O, Choice.O)
        bounds = eta_bounds(panel, two_period_table(10, RISING, FALLING))
        assert bounds.lower_trivial
        assert not bounds.upper_trivial
        assert bounds.upper == 1.0
        assert bounds.to_dict()["valid"]

    def test_bracket_is_unit_interval(self) -> None:
        """With both gates firing on a mixed panel the bracket stays [0, 1]."""
        n = 60
        panel = simulate(DgpConfig(n=n, seed=4, latent_gamma=LatentGammaSpec(eta=0.7)))
        ccps = np.random.default_rng(6).dirichlet(np.ones(4), size=(n, 2))
        ccps[:10] = [RISING, FALLING]
        ccps[10:20] = [[0.3, 0.3, 0.1, 0.3], [0.2, 0.2, 0.4, 0.2]]
        bounds = eta_bounds(panel, population_ccp_table(ccps))
        assert not bounds.lower_trivial
        assert not bounds.upper_trivial
        assert (bounds.lower, bounds.upper) == (0.0, 1.0)
        assert bounds.valid
