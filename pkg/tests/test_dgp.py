"""Tests for panel simulation and the enumeration oracle."""

import numpy as np
import pytest

from bundlechoice.config import DgpConfig, LatentGammaSpec
from bundlechoice.dgp import (
    draw_errors,
    draw_z,
    enumerate_ccps,
    enumerate_multigood_ccps,
    fixed_effects,
    population_ccps,
    random_discrete_instance,
    simulate,
    simulate_with_latent,
)
from bundlechoice.models import Choice

EULER_GAMMA = 0.5772156649


class TestFixedEffects:
    """Tests for the design-specific fixed effects."""

    def test_design_one(self) -> None:
        """alpha_A = xbar_A'beta / 2 + v_A."""
        alpha = fixed_effects(1, [2.0], [0.0], [1.0], [0.0, 0.0])
        assert alpha[0] == 1.0

    def test_design_three(self) -> None:
        """alpha_A = (xbar_A'beta / 2 - xbar_B'beta)(1 + v_A)."""
        alpha = fixed_effects(3, [2.0], [2.0], [1.0], [0.0, 0.0])
        assert alpha[0] == -1.0

    def test_design_three_vanishing_factor(self) -> None:
        """v_A = -1 zeroes alpha_A whatever the covariates."""
        alpha = fixed_effects(3, [5.0], [-3.0], [1.0], [-1.0, 0.0])
        assert alpha[0] == 0.0

    def test_unknown_design(self) -> None:
        """Designs outside 1..4 raise."""
        with pytest.raises(ValueError):
            fixed_effects(7, [0.0], [0.0], [1.0], [0.0, 0.0])


class TestErrors:
    """Tests for the time-varying shocks."""

    def test_gumbel_mean(self) -> None:
        """Design 1 shocks have the Gumbel mean."""
        rng = np.random.default_rng(0)
        eps = draw_errors(1, 500_000, 1, rng)
        assert abs(eps.mean() - EULER_GAMMA) < 0.01

    def test_normal_moments(self) -> None:
        """Design 2 shocks have mean (2, -2) and correlation -0.7."""
        rng = np.random.default_rng(1)
        eps = draw_errors(2, 200_000, 1, rng).reshape(-1, 2)
        np.testing.assert_allclose(eps.mean(axis=0), [2.0, -2.0], atol=0.01)
        assert np.corrcoef(eps.T)[0, 1] == pytest.approx(-0.7, abs=0.01)

    def test_z_law(self) -> None:
        """The leading coordinate of Z is N(2, 2) under the Gaussian scheme."""
        rng = np.random.default_rng(2)
        z = draw_z(DgpConfig(), 200_000, rng)
        assert z[:, 0].mean() == pytest.approx(2.0, abs=0.02)
        assert z[:, 0].var() == pytest.approx(2.0, abs=0.05)

    def test_bounded_scheme_support(self) -> None:
        """Bounded covariates stay in their supports."""
        rng = np.random.default_rng(3)
        z = draw_z(DgpConfig(covariate_scheme="bounded"), 10_000, rng)
        assert z[:, 0].min() >= 0.0 and z[:, 0].max() <= 4.0
        assert np.abs(z[:, 1]).max() <= 2.0


class TestSimulate:
    """Tests for panel simulation."""

    def test_empty_panel(self) -> None:
        """n = 0 gives an empty panel without error."""
        panel = simulate(DgpConfig(n=0))
        assert panel.n == 0
        assert panel.y.shape == (0, 2)

    def test_deterministic(self) -> None:
        """The same seed gives identical panels."""
        config = DgpConfig(n=50, seed=11)
        assert simulate(config) == simulate(config)

    def test_seed_changes_panel(self) -> None:
        """Different seeds give different panels."""
        assert simulate(DgpConfig(n=50, seed=1)) != simulate(DgpConfig(n=50, seed=2))

    def test_prefix_stability(self) -> None:
        """Individual streams do not depend on n."""
        small = simulate(DgpConfig(n=20, seed=5))
        large = simulate(DgpConfig(n=40, seed=5))
        np.testing.assert_array_equal(small.x, large.x[:20])
        np.testing.assert_array_equal(small.y, large.y[:20])

    @pytest.mark.parametrize("design", [1, 2, 3, 4])
    def test_shapes(self, design: int) -> None:
        """Every design produces a valid panel."""
        panel = simulate(DgpConfig(design=design, n=30, t_len=3))
        assert panel.x.shape == (30, 3, 2, 2)
        assert panel.z.shape == (30, 2)
        assert panel.y.min() >= 0 and panel.y.max() <= 3

    def test_bundle_suppressed(self) -> None:
        """A hugely negative Gamma removes the bundle."""
        panel = simulate(DgpConfig(n=2000, gamma_constant=-1e6))
        assert (panel.y == Choice.AB).mean() < 1e-3

    def test_latent_gamma(self) -> None:
        """The two-point law gives +g_plus with probability eta."""
        config = DgpConfig(n=2000, latent_gamma=LatentGammaSpec(eta=0.7, g_plus=1.0, g_minus=2.0))
        _, latent = simulate_with_latent(config)
        assert set(np.unique(latent.gamma)) <= {1.0, -2.0}
        assert (latent.gamma[:, 0] > 0).mean() == pytest.approx(0.7, abs=0.04)
        np.testing.assert_array_equal(latent.gamma[:, 0], latent.gamma[:, 1])


class TestEnumeration:
    """Tests for the discrete enumeration oracle."""

    def test_single_point(self) -> None:
        """One shock point gives a degenerate distribution."""
        probs = enumerate_ccps(1.0, -1.0, 0.0, np.zeros((1, 2)), np.ones(1))
        np.testing.assert_array_equal(probs, [0.0, 1.0, 0.0, 0.0])

    def test_utility_map(self) -> None:
        """A monotone utility map is applied to each good."""
        probs = enumerate_ccps(
            0.5, 0.5, 0.0, np.zeros((1, 2)), np.ones(1), utility_map=lambda d, e: d - 1.0 + e
        )
        np.testing.assert_array_equal(probs, [1.0, 0.0, 0.0, 0.0])

    def test_population_ccps_sum_to_one(self) -> None:
        """Exact CCPs are probability vectors."""
        instance = random_discrete_instance(np.random.default_rng(4), n_types=5, t_len=3)
        ccps = population_ccps(instance)
        assert ccps.shape == (5, 3, 4)
        np.testing.assert_allclose(ccps.sum(axis=2), 1.0)
        assert ccps.min() >= 0.0

    def test_population_matches_pointwise(self) -> None:
        """The vectorized oracle agrees with enumerate_ccps."""
        instance = random_discrete_instance(np.random.default_rng(5), n_types=3)
        ccps = population_ccps(instance)
        delta = instance.x @ instance.theta.beta
        gamma = instance.gamma_values()
        for i in range(3):
            expected = np.zeros(4)
            for m in range(instance.alpha.shape[1]):
                shocks = instance.alpha[i, m] + instance.eps_support
                expected += instance.alpha_weights[i, m] * enumerate_ccps(
                    delta[i, 1, 0], delta[i, 1, 1], gamma[i], shocks, instance.eps_weights
                )
            np.testing.assert_allclose(ccps[i, 1], expected, atol=1e-12)

    def test_forced_gamma_sign(self) -> None:
        """gamma_sign fixes the sign of Gamma for every type."""
        instance = random_discrete_instance(np.random.default_rng(6), gamma_sign=-1)
        assert np.all(instance.gamma_values() < 0)

    def test_covariate_support(self) -> None:
        """Covariates take at most n_support values."""
        instance = random_discrete_instance(np.random.default_rng(7), n_types=20, n_support=4)
        distinct = {tuple(v.ravel()) for v in instance.x.reshape(-1, 2 * 2)}
        assert len(distinct) <= 4

    def test_multigood_sums_to_one(self) -> None:
        """Multi-good probabilities cover the whole choice set."""
        rng = np.random.default_rng(8)
        probs = enumerate_multigood_ccps(
            [0.2, -0.1, 0.4], {frozenset({0, 1}): 1.0}, rng.normal(size=(9, 3)), np.full(9, 1 / 9)
        )
        assert probs.shape == (7,)
        assert probs.sum() == pytest.approx(1.0)
