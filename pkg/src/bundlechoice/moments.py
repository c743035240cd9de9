"""
Identifying restrictions and the moment-inequality criterion.

Each restriction is an indicator lambda of the covariate-index changes between
periods s and t (and of Gamma(z)); when it is false the matching CCP comparison
must be nonpositive. Indicators use exact strict comparisons so they can be
applied elementwise to numpy arrays as well as to scalars.
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .ccp import CcpTable
from .errors import DimensionMismatchError
from .models import (
    CHOICES,
    Choice,
    Good,
    IndexDelta,
    MomentVector,
    ObservationPanel,
    Theta,
)
from .utility import MultiChoice, multigood_choice_set

logger = logging.getLogger(__name__)

VARIANT_KINDS = ("base", "nonseparable", "multigood", "cross-sectional")


def index_delta(x_s, x_t, beta) -> IndexDelta:
    """d_l = (x_ls - x_lt)'beta; x_s and x_t have shape (..., 2, d_x)."""
    x_s = np.asarray(x_s, dtype=float)
    x_t = np.asarray(x_t, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if x_s.shape != x_t.shape or x_s.shape[-2:] != (2, beta.size):
        raise DimensionMismatchError(
            f"covariates {x_s.shape}/{x_t.shape} do not match beta of length {beta.size}"
        )
    d = (x_s - x_t) @ beta
    return IndexDelta(d_A=d[..., 0], d_B=d[..., 1])


def lambda_id1(delta: IndexDelta, j: Choice):
    """True iff some k != j has a strictly smaller index change than j."""
    d_j = delta.for_choice(j)
    others = [delta.for_choice(k) for k in CHOICES if k != j]
    return np.logical_or.reduce([d_j > d_k for d_k in others])


def lambda_id2(delta: IndexDelta, gamma_z, good: Good):
    """Demand restriction for good l, with sign(0) = 0."""
    d_l = np.asarray(delta.for_good(good))
    d_other = np.asarray(delta.for_good(good.other))
    gamma_z = np.asarray(gamma_z, dtype=float)
    return (d_l > 0) | ((d_l + np.sign(gamma_z) * d_other > 0) & (np.abs(gamma_z) > -d_l))


def lambda_id3(delta: IndexDelta, gamma_z):
    """(lambda_L, lambda_U) for the sum-of-CCP restrictions."""
    d_a = np.asarray(delta.d_A)
    d_b = np.asarray(delta.d_B)
    gamma_z = np.asarray(gamma_z, dtype=float)
    lam_l = (gamma_z > -np.minimum(d_a, d_b)) & (d_a + d_b > 0)
    lam_u = (gamma_z < np.minimum(d_a, -d_b)) & (d_a - d_b > 0)
    return lam_l, lam_u


@dataclass
class ModelVariant:
    """
    Model variant selecting the family of restrictions.

    kind is one of base, nonseparable, multigood, cross-sectional. The
    multigood variant carries the number of goods and the complementarity of
    every bundle other than AB (goods 0 and 1), all of which must be <= 0.
    """

    kind: str = "base"
    n_goods: int = 2
    bundle_gammas: Dict[MultiChoice, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in VARIANT_KINDS:
            raise ValueError(f"variant must be one of {VARIANT_KINDS}, got {self.kind!r}")
        if self.kind == "multigood":
            if self.n_goods < 2:
                raise ValueError("the multigood variant needs at least two goods")
            for bundle, value in self.bundle_gammas.items():
                if len(bundle) != 2:
                    raise ValueError("bundles contain exactly two goods")
                if bundle != frozenset({0, 1}) and value > 0:
                    raise ValueError(
                        f"bundle {sorted(bundle)} has positive complementarity {value}"
                    )
        elif self.n_goods != 2:
            raise ValueError(f"the {self.kind} variant has exactly two goods")


BASE = ModelVariant("base")
NONSEPARABLE = ModelVariant("nonseparable")
CROSS_SECTIONAL = ModelVariant("cross-sectional")

Target = Tuple[str, object]


def _multigood_lambda(deltas: np.ndarray, gamma_ab: float, target: Target) -> bool:
    family, member = target
    n_goods = deltas.size
    if family == "single":
        j = int(member)  # type: ignore[arg-type]
        others = np.delete(deltas, j)
        return bool(deltas[j] > 0 or np.any(others < 0))
    if family == "bundle":
        pair = sorted(member)  # type: ignore[call-overload]
        outside = np.delete(deltas, pair)
        return bool(np.any(deltas[pair] > 0) or np.any(outside < 0))
    if family == "demand":
        ell = int(member)  # type: ignore[arg-type]
        other = 1 - ell
        extra = deltas[2:] if n_goods > 2 else np.zeros(0)
        return bool(
            deltas[ell] > 0
            or deltas[ell] + np.sign(gamma_ab) * deltas[other] > 0
            or np.any(deltas[other] - extra > 0)
            or np.any(extra < 0)
        )
    raise ValueError(f"unknown multigood family: {family}")


def _nonseparable_lambda(deltas: np.ndarray, gamma_ab: float, target: Target) -> bool:
    family, member = target
    d_a, d_b = float(deltas[0]), float(deltas[1])
    if family == "choice":
        choice = Choice(member)  # type: ignore[call-overload]
        sign_a = -1.0 if choice in (Choice.A, Choice.AB) else 1.0
        sign_b = -1.0 if choice in (Choice.B, Choice.AB) else 1.0
        return bool(sign_a * d_a < 0 or sign_b * d_b < 0)
    if family == "demand":
        good = Good(member)  # type: ignore[call-overload]
        d_l = d_a if good is Good.A else d_b
        d_other = d_b if good is Good.A else d_a
        return bool(d_l > 0 or np.sign(gamma_ab) * d_other > 0)
    raise ValueError(f"unknown nonseparable family: {family}")


def variant_lambda(variant: ModelVariant, deltas, gamma_ab: float, target: Target) -> bool:
    """
    Indicator for one restriction of a model variant.

    Targets are (family, member) pairs. Base and cross-sectional families:
    ("choice", Choice), ("demand", Good), ("lower", None), ("upper", None).
    Nonseparable: ("choice", Choice), ("demand", Good). Multigood: ("single", j),
    ("bundle", (j1, j2)), ("demand", Good).
    """
    deltas = np.asarray(deltas, dtype=float)
    if deltas.size != variant.n_goods:
        raise DimensionMismatchError(
            f"expected {variant.n_goods} index changes, got {deltas.size}"
        )
    if variant.kind == "multigood":
        return _multigood_lambda(deltas, gamma_ab, target)
    if variant.kind == "nonseparable":
        return _nonseparable_lambda(deltas, gamma_ab, target)

    delta = IndexDelta(d_A=deltas[0], d_B=deltas[1])
    family, member = target
    if family == "choice":
        return bool(lambda_id1(delta, Choice(member)))  # type: ignore[call-overload]
    if family == "demand":
        return bool(lambda_id2(delta, gamma_ab, Good(member)))  # type: ignore[call-overload]
    lam_l, lam_u = lambda_id3(delta, gamma_ab)
    if family == "lower":
        return bool(lam_l)
    if family == "upper":
        return bool(lam_u)
    raise ValueError(f"unknown family: {family}")


def moment_array(ps, pt, d_a, d_b, gamma_z, variant: str = "base") -> np.ndarray:
    """
    Gated moments with a trailing component axis, broadcasting over leading axes.

    ps and pt have a trailing axis of length 4. The base and cross-sectional
    variants return 8 components (O, A, B, AB, D_A, D_B, L, U); the nonseparable
    variant returns the first 6.
    """
    ps = np.asarray(ps, dtype=float)
    pt = np.asarray(pt, dtype=float)
    d_a = np.asarray(d_a, dtype=float)
    d_b = np.asarray(d_b, dtype=float)
    gamma_z = np.asarray(gamma_z, dtype=float)
    diff = ps - pt
    diff_da = diff[..., 1] + diff[..., 3]
    diff_db = diff[..., 2] + diff[..., 3]

    if variant == "nonseparable":
        sign_g = np.sign(gamma_z)
        lam_choice = [
            (d_a < 0) | (d_b < 0),  # O
            (-d_a < 0) | (d_b < 0),  # A
            (d_a < 0) | (-d_b < 0),  # B
            (-d_a < 0) | (-d_b < 0),  # AB
        ]
        lam_da = (d_a > 0) | (sign_g * d_b > 0)
        lam_db = (d_b > 0) | (sign_g * d_a > 0)
        parts = [np.where(lam, 0.0, diff[..., j]) for j, lam in enumerate(lam_choice)]
        parts += [np.where(lam_da, 0.0, diff_da), np.where(lam_db, 0.0, diff_db)]
        return np.stack(np.broadcast_arrays(*parts), axis=-1)

    if variant not in ("base", "cross-sectional"):
        raise ValueError(f"moment_array does not support variant {variant!r}")

    d_ab = d_a + d_b
    zero = np.zeros_like(d_ab)
    d_all = (zero, d_a, d_b, d_ab)
    parts = []
    for j in range(4):
        others = [d_all[k] for k in range(4) if k != j]
        lam = np.logical_or.reduce([d_all[j] > d_k for d_k in others])
        parts.append(np.where(lam, 0.0, diff[..., j]))

    sign_g = np.sign(gamma_z)
    abs_g = np.abs(gamma_z)
    lam_da = (d_a > 0) | ((d_a + sign_g * d_b > 0) & (abs_g > -d_a))
    lam_db = (d_b > 0) | ((d_b + sign_g * d_a > 0) & (abs_g > -d_b))
    parts.append(np.where(lam_da, 0.0, diff_da))
    parts.append(np.where(lam_db, 0.0, diff_db))

    lam_l = (gamma_z > -np.minimum(d_a, d_b)) & (d_ab > 0)
    lam_u = (gamma_z < np.minimum(d_a, -d_b)) & (d_a - d_b > 0)
    parts.append(np.where(lam_l, 0.0, ps[..., 3] + pt[..., 0] - 1.0))
    parts.append(np.where(lam_u, 0.0, ps[..., 1] + pt[..., 2] - 1.0))
    return np.stack(np.broadcast_arrays(*parts), axis=-1)


def nobundle_moment_array(ps, pt, d_a, d_b, renormalize: bool = True) -> np.ndarray:
    """
    Choice restrictions over {O, A, B} only, for a model without the bundle.

    With renormalize, CCPs are divided by 1 - P(AB) first.
    """
    ps = np.asarray(ps, dtype=float)
    pt = np.asarray(pt, dtype=float)
    qs, qt = ps[..., :3], pt[..., :3]
    if renormalize:
        qs = qs / np.maximum(1.0 - ps[..., 3:4], 1e-12)
        qt = qt / np.maximum(1.0 - pt[..., 3:4], 1e-12)
    d_a = np.asarray(d_a, dtype=float)
    d_b = np.asarray(d_b, dtype=float)
    d_all = (np.zeros_like(d_a), d_a, d_b)
    parts = []
    for j in range(3):
        others = [d_all[k] for k in range(3) if k != j]
        lam = np.logical_or.reduce([d_all[j] > d_k for d_k in others])
        parts.append(np.where(lam, 0.0, qs[..., j] - qt[..., j]))
    return np.stack(np.broadcast_arrays(*parts), axis=-1)


def moment_vector(ccp_s, ccp_t, theta: Theta, w, variant: ModelVariant = BASE) -> MomentVector:
    """
    The eight gated moments at one conditioning point.

    Args:
        ccp_s: Probabilities over (O, A, B, AB) in period s at w
        ccp_t: Same for period t
        theta: Parameter value
        w: Tuple (x_s, x_t, z) with x_s and x_t of shape (2, d_x)
    """
    x_s, x_t, z = w
    delta = index_delta(x_s, x_t, theta.beta)
    gamma_z = float(np.asarray(z, dtype=float) @ theta.gamma)
    if variant.kind not in ("base", "cross-sectional"):
        raise ValueError("moment_vector covers the base and cross-sectional variants")
    values = moment_array(ccp_s, ccp_t, delta.d_A, delta.d_B, gamma_z, variant.kind)
    return MomentVector.from_array(values)


def variant_moment_vector(
    variant: ModelVariant,
    p_s: Sequence[float],
    p_t: Sequence[float],
    deltas: Sequence[float],
    gamma_ab: float,
) -> Dict[str, float]:
    """
    Every gated moment of a variant, keyed by restriction.

    For the multigood variant p_s and p_t are ordered like multigood_choice_set
    and D_l = {l, AB} for l in {A, B}.
    """
    p_s = np.asarray(p_s, dtype=float)
    p_t = np.asarray(p_t, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    out: Dict[str, float] = {}

    if variant.kind != "multigood":
        values = moment_array(p_s, p_t, deltas[0], deltas[1], gamma_ab, variant.kind)
        names = ("g_O", "g_A", "g_B", "g_AB", "g_DA", "g_DB", "g_L", "g_U")
        return {name: float(v) for name, v in zip(names, values)}

    choices = multigood_choice_set(variant.n_goods)
    index = {c: i for i, c in enumerate(choices)}
    diff = p_s - p_t
    for j in range(variant.n_goods):
        lam = variant_lambda(variant, deltas, gamma_ab, ("single", j))
        out[f"single_{j}"] = 0.0 if lam else float(diff[index[frozenset({j})]])
    for pair in combinations(range(variant.n_goods), 2):
        lam = variant_lambda(variant, deltas, gamma_ab, ("bundle", pair))
        out[f"bundle_{pair[0]}_{pair[1]}"] = 0.0 if lam else float(diff[index[frozenset(pair)]])
    ab = index[frozenset({0, 1})]
    for ell in (0, 1):
        lam = variant_lambda(variant, deltas, gamma_ab, ("demand", ell))
        demand_diff = diff[index[frozenset({ell})]] + diff[ab]
        out[f"demand_{ell}"] = 0.0 if lam else float(demand_diff)
    return out


def criterion_from_moments(moments: np.ndarray) -> float:
    """Mean over individuals of the L1 norm of positive parts; moments is (n, pairs, k)."""
    moments = np.asarray(moments, dtype=float)
    if moments.shape[0] == 0:
        return 0.0
    return float(np.maximum(moments, 0.0).reshape(moments.shape[0], -1).sum(axis=1).mean())


class CriterionEvaluator:
    """
    Sample criterion for one panel and one table of first-step CCPs.

    Index changes and CCPs per ordered pair are prepared once; values for many
    parameter values are then computed in vectorized batches.
    """

    def __init__(
        self,
        panel: ObservationPanel,
        table: CcpTable,
        variant: Union[ModelVariant, str] = BASE,
    ) -> None:
        self.variant = variant.kind if isinstance(variant, ModelVariant) else variant
        if self.variant == "multigood":
            raise ValueError("the sample criterion covers two-good variants only")
        self.n = panel.n
        self.z = panel.z
        self.pairs = panel.ordered_pairs()
        table.require(self.pairs)
        self._dx = {(s, t): panel.x[:, s] - panel.x[:, t] for s, t in self.pairs}
        self._probs = {pair: table.pair(*pair) for pair in self.pairs}

    def value(self, theta: Theta) -> float:
        return float(self.values_for_gammas(theta.beta, theta.gamma[None, :])[0])

    def values_for_gammas(self, beta: np.ndarray, gammas: np.ndarray) -> np.ndarray:
        """Criterion at (beta, gamma_k) for each row gamma_k of gammas."""
        gammas = np.atleast_2d(np.asarray(gammas, dtype=float))
        if self.n == 0:
            return np.zeros(gammas.shape[0])
        gz = gammas @ self.z.T  # (k, n)
        total = np.zeros(gammas.shape[0])
        for pair in self.pairs:
            d = self._dx[pair] @ beta  # (n, 2)
            ps, pt = self._probs[pair]
            m = moment_array(ps, pt, d[:, 0], d[:, 1], gz, self.variant)
            total += np.maximum(m, 0.0).sum(axis=(1, 2))
        return total / self.n

    def nobundle_value(self, beta: np.ndarray, renormalize: bool = True) -> float:
        """Criterion built from the {O, A, B} choice restrictions only."""
        if self.n == 0:
            return 0.0
        total = 0.0
        for pair in self.pairs:
            d = self._dx[pair] @ np.asarray(beta, dtype=float)
            ps, pt = self._probs[pair]
            m = nobundle_moment_array(ps, pt, d[:, 0], d[:, 1], renormalize)
            total += float(np.maximum(m, 0.0).sum())
        return total / self.n

    def pair_moments(self, theta: Theta) -> np.ndarray:
        """Moments with shape (n, pairs, k) at theta."""
        gz = self.z @ theta.gamma
        stacked = []
        for pair in self.pairs:
            d = self._dx[pair] @ theta.beta
            ps, pt = self._probs[pair]
            stacked.append(moment_array(ps, pt, d[:, 0], d[:, 1], gz, self.variant))
        return np.stack(stacked, axis=1)


def criterion(
    panel: ObservationPanel,
    ccps: CcpTable,
    theta: Theta,
    variant: Optional[ModelVariant] = None,
) -> float:
    """Sample criterion: mean over individuals of summed positive moment parts."""
    evaluator = CriterionEvaluator(panel, ccps, variant or BASE)
    return evaluator.value(theta)
