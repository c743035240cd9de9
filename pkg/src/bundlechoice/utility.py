"""
Utility evaluation and the choice rule.

u_O = 0, u_l = x_l'beta + alpha_l + eps_l for the goods, and the bundle adds the
complementarity term: u_AB = u_A + u_B + Gamma(z).
"""

import logging
from itertools import combinations
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence

import numpy as np

from .errors import DimensionMismatchError
from .models import Choice, Theta

logger = logging.getLogger(__name__)

GammaFunction = Callable[[np.ndarray], float]


def gamma_value(z, gamma) -> float:
    """Linear complementarity z'gamma."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if z.shape != gamma.shape:
        raise DimensionMismatchError(f"z has length {z.size} but gamma has length {gamma.size}")
    return float(z @ gamma)


def complementarity(z, theta: Theta, gamma_fn: Optional[GammaFunction] = None) -> float:
    """Gamma(z) from theta, or from a caller-supplied function of z."""
    if gamma_fn is not None:
        return float(gamma_fn(np.asarray(z, dtype=float)))
    return gamma_value(z, theta.gamma)


def utilities(x_A, x_B, z, alpha, eps, theta: Theta) -> np.ndarray:
    """Utility 4-vector (u_O, u_A, u_B, u_AB) for one individual and period."""
    x_A = np.atleast_1d(np.asarray(x_A, dtype=float))
    x_B = np.atleast_1d(np.asarray(x_B, dtype=float))
    if x_A.shape != theta.beta.shape or x_B.shape != theta.beta.shape:
        raise DimensionMismatchError(
            f"covariates of length {x_A.size}/{x_B.size} do not match beta of length {theta.d_x}"
        )
    alpha = np.asarray(alpha, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if alpha.shape != (2,) or eps.shape != (2,):
        raise DimensionMismatchError("alpha and eps must be pairs")
    u_a = float(x_A @ theta.beta) + alpha[0] + eps[0]
    u_b = float(x_B @ theta.beta) + alpha[1] + eps[1]
    return np.array([0.0, u_a, u_b, u_a + u_b + gamma_value(z, theta.gamma)])


def utilities_from_index(delta_a, delta_b, gamma_z, shocks_a, shocks_b) -> np.ndarray:
    """
    Vectorized utilities from indices and composite shocks.

    All inputs broadcast together; the result has a trailing axis of length 4.
    """
    u_a = np.asarray(delta_a, dtype=float) + shocks_a
    u_b = np.asarray(delta_b, dtype=float) + shocks_b
    u_a, u_b, g = np.broadcast_arrays(u_a, u_b, np.asarray(gamma_z, dtype=float))
    return np.stack([np.zeros_like(u_a), u_a, u_b, u_a + u_b + g], axis=-1)


def choose(u) -> Choice:
    """Utility-maximizing choice; exact ties go to the earliest of O, A, B, AB."""
    u = np.asarray(u, dtype=float)
    if u.shape != (4,):
        raise DimensionMismatchError(f"expected 4 utilities, got shape {u.shape}")
    if np.isnan(u).any():
        raise ValueError("utilities contain NaN")
    return Choice(int(np.argmax(u)))


def choose_many(u: np.ndarray) -> np.ndarray:
    """Choice codes for utilities with a trailing axis of length 4."""
    u = np.asarray(u, dtype=float)
    if np.isnan(u).any():
        raise ValueError("utilities contain NaN")
    # argmax returns the first maximum, which is the tie order
    return np.argmax(u, axis=-1)


# Multi-good extension: bundles contain at most two goods.

MultiChoice = FrozenSet[int]


def multigood_choice_set(n_goods: int) -> List[MultiChoice]:
    """Outside option, then single goods, then unordered pairs."""
    if n_goods < 2:
        raise ValueError("the multi-good model needs at least two goods")
    singles = [frozenset({j}) for j in range(n_goods)]
    pairs = [frozenset(p) for p in combinations(range(n_goods), 2)]
    return [frozenset()] + singles + pairs


def multigood_utilities(
    deltas: Sequence[float],
    eps: Sequence[float],
    bundle_gammas: Dict[MultiChoice, float],
) -> np.ndarray:
    """Utilities over multigood_choice_set(len(deltas)); missing bundle terms count as 0."""
    deltas = np.asarray(deltas, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if deltas.shape != eps.shape:
        raise DimensionMismatchError("deltas and eps must have the same length")
    single = deltas + eps
    values = []
    for choice in multigood_choice_set(deltas.size):
        if not choice:
            values.append(0.0)
        elif len(choice) == 1:
            values.append(float(single[next(iter(choice))]))
        else:
            j, k = sorted(choice)
            values.append(float(single[j] + single[k] + bundle_gammas.get(choice, 0.0)))
    return np.array(values)


def choose_multigood(u: np.ndarray, n_goods: int) -> MultiChoice:
    choices = multigood_choice_set(n_goods)
    u = np.asarray(u, dtype=float)
    if u.shape != (len(choices),):
        raise DimensionMismatchError("utility vector does not match the choice set")
    return choices[int(np.argmax(u))]
