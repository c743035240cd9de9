"""
Panel simulation under the four Monte Carlo designs.

Every individual draws from its own random stream and every (individual, period)
cell from another, both derived from (seed, i, t) through numpy SeedSequence, so
panels are reproducible whatever the order or parallelism of generation.

The module also holds the discrete enumeration oracle: finitely supported
covariates, fixed effects and errors, for which choice probabilities are exact.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .config import DgpConfig
from .models import LatentDraw, ObservationPanel, Theta
from .utility import (
    MultiChoice,
    choose_many,
    multigood_choice_set,
    utilities_from_index,
)

logger = logging.getLogger(__name__)

NORMAL_ERROR_MEAN = np.array([2.0, -2.0])
NORMAL_ERROR_CORR = -0.7
NORMAL_ERROR_COV = np.array([[1.0, NORMAL_ERROR_CORR], [NORMAL_ERROR_CORR, 1.0]])


def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def _draw_x(config: DgpConfig, rng: np.random.Generator, lead: Tuple[int, ...]) -> np.ndarray:
    """Covariates with shape lead + (2, d_x)."""
    d_x = config.d_x
    if config.covariate_scheme == "bounded":
        x_a = rng.uniform(-3.0, 3.0, size=lead + (d_x,))
        x_b = rng.normal(0.0, np.sqrt(2.0), size=lead + (d_x,))
        return np.stack([x_a, x_b], axis=-2)
    scale = np.sqrt(d_x) if config.x_variance == "per_coordinate" else 1.0
    return rng.normal(0.0, scale, size=lead + (2, d_x))


def draw_z(config: DgpConfig, m: int, rng: np.random.Generator) -> np.ndarray:
    """m draws of the individual covariate Z, shape (m, d_z)."""
    if config.covariate_scheme == "bounded":
        first = rng.uniform(0.0, 4.0, size=(m, 1))
        rest = rng.uniform(-2.0, 2.0, size=(m, config.d_z - 1))
    else:
        first = rng.normal(2.0, np.sqrt(2.0), size=(m, 1))
        rest = rng.normal(0.0, 1.0, size=(m, config.d_z - 1))
    return np.concatenate([first, rest], axis=1)


def draw_covariates(
    config: DgpConfig, rng: np.random.Generator, n: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw (x, z) for n individuals from a single stream.

    Returns:
        x with shape (n, t_len, 2, d_x) and z with shape (n, d_z)
    """
    n = config.n if n is None else n
    x = _draw_x(config, rng, (n, config.t_len))
    z = draw_z(config, n, rng)
    return x, z


def draw_errors(design: int, n: int, t_len: int, rng: np.random.Generator) -> np.ndarray:
    """Time-varying shocks with shape (n, t_len, 2)."""
    if design in (1, 3):
        return rng.gumbel(0.0, 1.0, size=(n, t_len, 2))
    if design in (2, 4):
        return rng.multivariate_normal(NORMAL_ERROR_MEAN, NORMAL_ERROR_COV, size=(n, t_len))
    raise ValueError(f"unknown design: {design}")


def fixed_effects(design: int, xbar_A, xbar_B, beta_true, v) -> np.ndarray:
    """
    Fixed effects (alpha_A, alpha_B), vectorized over leading axes.

    Designs 1 and 2 use alpha_j = xbar_j'beta/2 + v_j; designs 3 and 4 use
    alpha_j = (xbar_j/2 - xbar_k)'beta * (1 + v_j).
    """
    beta = np.asarray(beta_true, dtype=float)
    idx_a = np.asarray(xbar_A, dtype=float) @ beta
    idx_b = np.asarray(xbar_B, dtype=float) @ beta
    v = np.asarray(v, dtype=float)
    v_a, v_b = v[..., 0], v[..., 1]
    if design in (1, 2):
        alpha_a = idx_a / 2.0 + v_a
        alpha_b = idx_b / 2.0 + v_b
    elif design in (3, 4):
        alpha_a = (idx_a / 2.0 - idx_b) * (1.0 + v_a)
        alpha_b = (idx_b / 2.0 - idx_a) * (1.0 + v_b)
    else:
        raise ValueError(f"unknown design: {design}")
    return np.stack([alpha_a, alpha_b], axis=-1)


def simulate_with_latent(config: DgpConfig) -> Tuple[ObservationPanel, LatentDraw]:
    """Simulate a panel and return the unobservables alongside it."""
    config.validate()
    n, t_len = config.n, config.t_len
    theta = config.theta_true

    x = np.empty((n, t_len, 2, config.d_x))
    z = np.empty((n, config.d_z))
    v = np.empty((n, 2))
    eps = np.empty((n, t_len, 2))
    gamma = np.empty((n, t_len))

    for i in range(n):
        rng_i = _stream(config.seed, i, 0)
        z[i] = draw_z(config, 1, rng_i)[0]
        v[i] = rng_i.normal(size=2)
        if config.latent_gamma is not None:
            spec = config.latent_gamma
            draw = rng_i.uniform()
            gamma[i] = spec.g_plus if draw < spec.eta else -spec.g_minus
        for t in range(t_len):
            rng_it = _stream(config.seed, i, t + 1)
            x[i, t] = _draw_x(config, rng_it, ())
            eps[i, t] = draw_errors(config.design, 1, 1, rng_it)[0, 0]
            if config.latent_gamma is not None and config.latent_gamma.vary_over_time:
                spec = config.latent_gamma
                gamma[i, t] = spec.g_plus if rng_it.uniform() < spec.eta else -spec.g_minus

    if config.latent_gamma is None:
        if config.gamma_constant is not None:
            gamma[:] = config.gamma_constant
        else:
            gamma[:] = (z @ theta.gamma)[:, None]

    xbar = x.mean(axis=1)
    alpha = fixed_effects(config.design, xbar[:, 0], xbar[:, 1], theta.beta, v)
    delta = x @ theta.beta  # (n, t_len, 2)
    u = utilities_from_index(
        delta[..., 0] + alpha[:, None, 0],
        delta[..., 1] + alpha[:, None, 1],
        gamma,
        eps[..., 0],
        eps[..., 1],
    )
    y = choose_many(u) if n else np.zeros((0, t_len), dtype=np.int64)

    panel = ObservationPanel(x=x, z=z, y=y)
    logger.debug(
        f"Simulated design {config.design}: n={n}, t_len={t_len}, "
        f"bundle share={float((y == 3).mean()) if n else 0.0:.3f}"
    )
    return panel, LatentDraw(alpha=alpha, eps=eps, gamma=gamma)


def simulate(config: DgpConfig) -> ObservationPanel:
    """Simulate a panel; deterministic given config.seed."""
    panel, _ = simulate_with_latent(config)
    return panel


# Discrete enumeration oracle

UtilityMap = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class DiscreteInstance:
    """
    Finitely supported model: covariate types, fixed effects per type, and errors.

    x has shape (n_types, t_len, 2, d_x), z (n_types, d_z), alpha (n_types, m, 2)
    with weights (n_types, m), and eps_support (k, 2) with weights (k,).
    """

    theta: Theta
    x: np.ndarray
    z: np.ndarray
    alpha: np.ndarray
    alpha_weights: np.ndarray
    eps_support: np.ndarray
    eps_weights: np.ndarray
    gamma_override: Optional[np.ndarray] = None

    @property
    def n_types(self) -> int:
        return int(self.x.shape[0])

    @property
    def t_len(self) -> int:
        return int(self.x.shape[1])

    def gamma_values(self) -> np.ndarray:
        if self.gamma_override is not None:
            return np.broadcast_to(np.asarray(self.gamma_override, dtype=float), (self.n_types,))
        return self.z @ self.theta.gamma

    def as_panel(self) -> ObservationPanel:
        """Covariates as a panel; choices are placeholders."""
        return ObservationPanel(
            x=self.x, z=self.z, y=np.zeros((self.n_types, self.t_len), dtype=np.int64)
        )


def enumerate_ccps(
    delta_a: float,
    delta_b: float,
    gamma_z: float,
    shock_support: np.ndarray,
    weights: np.ndarray,
    utility_map: Optional[UtilityMap] = None,
) -> np.ndarray:
    """
    Exact choice probabilities for one covariate value.

    shock_support holds composite unobservables (alpha + eps) with shape (k, 2).
    utility_map(delta, shock) gives the single-good utilities; it must be weakly
    increasing in delta. The default is delta + shock.
    """
    shocks = np.asarray(shock_support, dtype=float)
    if utility_map is None:
        u_a = delta_a + shocks[:, 0]
        u_b = delta_b + shocks[:, 1]
    else:
        u_a = utility_map(np.full(len(shocks), delta_a), shocks[:, 0])
        u_b = utility_map(np.full(len(shocks), delta_b), shocks[:, 1])
    u = np.stack([np.zeros_like(u_a), u_a, u_b, u_a + u_b + gamma_z], axis=-1)
    chosen = choose_many(u)
    return np.bincount(chosen, weights=np.asarray(weights, dtype=float), minlength=4)


def population_ccps(instance: DiscreteInstance) -> np.ndarray:
    """Exact P_t(j | covariate type), shape (n_types, t_len, 4)."""
    theta = instance.theta
    delta = instance.x @ theta.beta  # (n_types, t_len, 2)
    gamma = instance.gamma_values()
    # composite shocks (n_types, m, k, 2)
    shocks = instance.alpha[:, :, None, :] + instance.eps_support[None, None, :, :]
    weights = instance.alpha_weights[:, :, None] * instance.eps_weights[None, None, :]
    out = np.zeros((instance.n_types, instance.t_len, 4))
    for t in range(instance.t_len):
        u = utilities_from_index(
            delta[:, t, 0][:, None, None],
            delta[:, t, 1][:, None, None],
            gamma[:, None, None],
            shocks[..., 0],
            shocks[..., 1],
        )
        chosen = choose_many(u)
        for j in range(4):
            out[:, t, j] = np.sum(weights * (chosen == j), axis=(1, 2))
    return out


def random_discrete_instance(
    rng: np.random.Generator,
    n_types: int = 6,
    t_len: int = 2,
    d_x: int = 2,
    d_z: int = 2,
    theta: Optional[Theta] = None,
    n_error_points: int = 9,
    n_alpha_points: int = 2,
    n_support: int = 4,
    gamma_sign: Optional[int] = None,
) -> DiscreteInstance:
    """
    Random instance with covariates on at most n_support points.

    Fixed effects depend on the type's covariate history. When gamma_sign is
    given, Gamma(z) is forced to that sign with a random magnitude.
    """
    if theta is None:
        theta = Theta(beta=np.ones(d_x), gamma=np.ones(d_z))
    x_support = rng.normal(0.0, 1.0, size=(n_support, 2, d_x))
    z_support = rng.normal(0.0, 1.0, size=(n_support, d_z))
    x = x_support[rng.integers(0, n_support, size=(n_types, t_len))]
    z = z_support[rng.integers(0, n_support, size=n_types)]

    xbar_index = x.mean(axis=1) @ theta.beta  # (n_types, 2)
    alpha = xbar_index[:, None, :] / 2.0 + rng.normal(0.0, 1.0, size=(n_types, n_alpha_points, 2))
    alpha_weights = rng.dirichlet(np.ones(n_alpha_points), size=n_types)

    eps_support = rng.normal(0.0, 1.5, size=(n_error_points, 2))
    eps_weights = rng.dirichlet(np.ones(n_error_points))

    gamma_override = None
    if gamma_sign is not None:
        gamma_override = gamma_sign * rng.uniform(0.1, 3.0, size=n_types)
    return DiscreteInstance(
        theta=theta,
        x=x,
        z=z,
        alpha=alpha,
        alpha_weights=alpha_weights,
        eps_support=eps_support,
        eps_weights=eps_weights,
        gamma_override=gamma_override,
    )


def enumerate_multigood_ccps(
    deltas: Sequence[float],
    bundle_gammas: Dict[MultiChoice, float],
    shock_support: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    """Exact probabilities over multigood_choice_set(L) for one covariate value."""
    deltas = np.asarray(deltas, dtype=float)
    n_goods = deltas.size
    choices = multigood_choice_set(n_goods)
    shocks = np.asarray(shock_support, dtype=float)
    single = deltas[None, :] + shocks  # (k, L)
    u = np.zeros((shocks.shape[0], len(choices)))
    for c_idx, choice in enumerate(choices):
        if len(choice) == 1:
            u[:, c_idx] = single[:, next(iter(choice))]
        elif len(choice) == 2:
            j, k = sorted(choice)
            u[:, c_idx] = single[:, j] + single[:, k] + bundle_gammas.get(choice, 0.0)
    chosen = np.argmax(u, axis=1)
    return np.bincount(chosen, weights=np.asarray(weights, dtype=float), minlength=len(choices))
