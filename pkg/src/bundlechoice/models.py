"""
Data models for bundlechoice.

Defines the choice set, the parameter vector, the observation panel and the
result records produced by estimators, tests and the sharpness checks.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from itertools import product
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from .errors import DimensionMismatchError, InvalidChoiceError


class Good(IntEnum):
    """The two goods of the base model."""

    A = 0
    B = 1

    @property
    def other(self) -> "Good":
        return Good.B if self is Good.A else Good.A


class Choice(IntEnum):
    """Alternatives in the base choice set, in tie-breaking order."""

    O = 0  # noqa: E741
    A = 1
    B = 2
    AB = 3

    @property
    def label(self) -> str:
        return self.name

    @classmethod
    def from_label(cls, label: str) -> "Choice":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise InvalidChoiceError(f"unknown choice label: {label!r}") from None


CHOICES: Tuple[Choice, ...] = (Choice.O, Choice.A, Choice.B, Choice.AB)
N_CHOICES = len(CHOICES)

# Demand sets: choices that include the good.
DEMAND_SETS: Dict[Good, FrozenSet[Choice]] = {
    Good.A: frozenset({Choice.A, Choice.AB}),
    Good.B: frozenset({Choice.B, Choice.AB}),
}


def choice_mask(choice_set) -> np.ndarray:
    """Boolean 4-vector selecting the members of a set of choices."""
    mask = np.zeros(N_CHOICES, dtype=bool)
    for choice in choice_set:
        mask[int(choice)] = True
    return mask


@dataclass
class Theta:
    """Utility coefficients beta and linear complementarity coefficients gamma."""

    beta: np.ndarray
    gamma: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float)).copy()
        if self.beta.ndim != 1 or self.gamma.ndim != 1:
            raise DimensionMismatchError("beta and gamma must be vectors")
        if self.beta.size < 1 or self.gamma.size < 1:
            raise DimensionMismatchError("beta and gamma need at least one coordinate")
        if self.normalized and not (
            np.isclose(abs(self.beta[0]), 1.0) and np.isclose(abs(self.gamma[0]), 1.0)
        ):
            raise ValueError("normalized Theta requires |beta[0]| = |gamma[0]| = 1")

    @property
    def d_x(self) -> int:
        return int(self.beta.size)

    @property
    def d_z(self) -> int:
        return int(self.gamma.size)

    @property
    def signs(self) -> Tuple[int, int]:
        """Signs of the leading coordinates."""
        return int(np.sign(self.beta[0])), int(np.sign(self.gamma[0]))

    @property
    def free_beta(self) -> np.ndarray:
        return self.beta[1:]

    @property
    def free_gamma(self) -> np.ndarray:
        return self.gamma[1:]

    def normalize(self) -> "Theta":
        """Scale beta and gamma so that their leading coordinates have modulus one."""
        if self.beta[0] == 0 or self.gamma[0] == 0:
            raise ValueError("cannot normalize a Theta with a zero leading coordinate")
        return Theta(
            beta=self.beta / abs(self.beta[0]),
            gamma=self.gamma / abs(self.gamma[0]),
            normalized=True,
        )

    @classmethod
    def from_free(
        cls, beta_sign: int, gamma_sign: int, free_beta, free_gamma
    ) -> "Theta":
        """Build a normalized Theta from leading signs and free coordinates."""
        beta = np.concatenate([[float(beta_sign)], np.asarray(free_beta, dtype=float)])
        gamma = np.concatenate([[float(gamma_sign)], np.asarray(free_gamma, dtype=float)])
        return cls(beta=beta, gamma=gamma, normalized=True)

    def to_dict(self) -> dict:
        return {
            "beta": [float(b) for b in self.beta],
            "gamma": [float(g) for g in self.gamma],
            "normalized": self.normalized,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Theta":
        return cls(
            beta=np.asarray(data["beta"], dtype=float),
            gamma=np.asarray(data["gamma"], dtype=float),
            normalized=bool(data.get("normalized", False)),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Theta):
            return NotImplemented
        return (
            self.normalized == other.normalized
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.gamma, other.gamma)
        )


@dataclass
class ObservationPanel:
    """
    N x T panel of covariates and observed choices.

    x has shape (n, t_len, 2, d_x) with goods ordered (A, B), z has shape
    (n, d_z) and y holds choice codes with shape (n, t_len).
    """

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 4 or self.x.shape[2] != 2:
            raise DimensionMismatchError(
                f"x must have shape (n, t_len, 2, d_x), got {self.x.shape}"
            )
        n, t_len = self.x.shape[:2]
        if self.z.ndim != 2 or self.z.shape[0] != n:
            raise DimensionMismatchError(f"z must have shape ({n}, d_z), got {self.z.shape}")
        if self.y.shape != (n, t_len):
            raise DimensionMismatchError(f"y must have shape ({n}, {t_len}), got {self.y.shape}")
        if t_len < 2:
            raise DimensionMismatchError("a panel needs at least two periods")
        if self.x.shape[3] < 1 or self.z.shape[1] < 1:
            raise DimensionMismatchError("d_x and d_z must be at least one")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.z))):
            raise ValueError("panel covariates contain missing or non-finite values")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= N_CHOICES):
            raise InvalidChoiceError("choice codes must lie in 0..3")

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def t_len(self) -> int:
        return int(self.x.shape[1])

    @property
    def d_x(self) -> int:
        return int(self.x.shape[3])

    @property
    def d_z(self) -> int:
        return int(self.z.shape[1])

    def ordered_pairs(self) -> List[Tuple[int, int]]:
        """All ordered period pairs (s, t) with s != t."""
        return [(s, t) for s in range(self.t_len) for t in range(self.t_len) if s != t]

    def unordered_pairs(self) -> List[Tuple[int, int]]:
        return [(s, t) for s in range(self.t_len) for t in range(s + 1, self.t_len)]

    def conditioning_vector(self, s: int, t: int) -> np.ndarray:
        """Rows w_ist = (x_is, x_it, z_i), shape (n, 4 * d_x + d_z)."""
        n = self.n
        return np.concatenate(
            [self.x[:, s].reshape(n, -1), self.x[:, t].reshape(n, -1), self.z], axis=1
        )

    def choice_shares(self) -> np.ndarray:
        """Empirical choice shares per period, shape (t_len, 4)."""
        shares = np.zeros((self.t_len, N_CHOICES))
        if self.n == 0:
            return shares
        for t in range(self.t_len):
            shares[t] = np.bincount(self.y[:, t], minlength=N_CHOICES) / self.n
        return shares

    def subset(self, mask: np.ndarray) -> "ObservationPanel":
        mask = np.asarray(mask)
        return ObservationPanel(x=self.x[mask], z=self.z[mask], y=self.y[mask])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ObservationPanel):
            return NotImplemented
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.y, other.y)
        )


@dataclass
class LatentDraw:
    """Simulator-side unobservables, kept out of every estimator's reach."""

    alpha: np.ndarray  # (n, 2)
    eps: np.ndarray  # (n, t_len, 2)
    gamma: np.ndarray  # (n, t_len) realized complementarity


@dataclass
class IndexDelta:
    """Index changes d_A, d_B between periods s and t; arrays are allowed."""

    d_A: np.ndarray
    d_B: np.ndarray

    @property
    def d_O(self):
        return np.zeros_like(np.asarray(self.d_A, dtype=float))

    @property
    def d_AB(self):
        return np.asarray(self.d_A) + np.asarray(self.d_B)

    def for_choice(self, choice: Choice):
        return (self.d_O, self.d_A, self.d_B, self.d_AB)[int(choice)]

    def for_good(self, good: Good):
        return self.d_A if good is Good.A else self.d_B


MOMENT_NAMES: Tuple[str, ...] = ("g_O", "g_A", "g_B", "g_AB", "g_DA", "g_DB", "g_L", "g_U")


@dataclass
class MomentVector:
    """The eight gated moment components for one ordered period pair."""

    g_O: float
    g_A: float
    g_B: float
    g_AB: float
    g_DA: float
    g_DB: float
    g_L: float
    g_U: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in MOMENT_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> "MomentVector":
        values = np.asarray(values, dtype=float)
        return cls(*(float(v) for v in values))

    @property
    def positive_part_l1(self) -> float:
        return float(np.maximum(self.as_array(), 0.0).sum())


@dataclass
class PointEstimate:
    """Normalized two-step estimate and optimizer summary."""

    method: str
    theta: Theta
    criterion_value: float
    seed: int = 0
    trace: Dict[str, float] = field(default_factory=dict)
    runtime_ms: Optional[float] = None

    def to_dict(self, include_timing: bool = False) -> dict:
        data = {
            "method": self.method,
            "theta": self.theta.to_dict(),
            "criterion": float(self.criterion_value),
            "seed": int(self.seed),
            "trace": {k: float(v) for k, v in self.trace.items()},
        }
        if include_timing and self.runtime_ms is not None:
            data["runtime_ms"] = float(self.runtime_ms)
        return data


@dataclass
class BetaEstimate:
    """Estimate of the normalized utility coefficients only (no-bundle estimators)."""

    method: str
    beta: np.ndarray
    objective: float
    seed: int = 0
    n_used: int = 0
    runtime_ms: Optional[float] = None

    def to_dict(self, include_timing: bool = False) -> dict:
        data = {
            "method": self.method,
            "theta": {"beta": [float(b) for b in self.beta], "gamma": None},
            "criterion": float(self.objective),
            "seed": int(self.seed),
            "n_used": int(self.n_used),
        }
        if include_timing and self.runtime_ms is not None:
            data["runtime_ms"] = float(self.runtime_ms)
        return data


@dataclass
class ParametricEstimate:
    """Simulated-moments estimate of the fully parametric model."""

    method: str
    beta: np.ndarray
    gamma: np.ndarray
    eta0: float
    eta1: np.ndarray
    objective: float
    seed: int = 0
    weighting: str = "identity"
    runtime_ms: Optional[float] = None

    @property
    def theta(self) -> Theta:
        return Theta(beta=self.beta, gamma=self.gamma).normalize()

    def to_dict(self, include_timing: bool = False) -> dict:
        data = {
            "method": self.method,
            "theta": self.theta.to_dict(),
            "raw": {
                "beta": [float(b) for b in self.beta],
                "gamma": [float(g) for g in self.gamma],
                "eta0": float(self.eta0),
                "eta1": [float(e) for e in self.eta1],
            },
            "criterion": float(self.objective),
            "seed": int(self.seed),
            "weighting": self.weighting,
        }
        if include_timing and self.runtime_ms is not None:
            data["runtime_ms"] = float(self.runtime_ms)
        return data


def _nearest_indices(axis: np.ndarray, value: float, tol: float = 1e-9) -> List[int]:
    """Indices of the axis points nearest value, empty when value is off the axis."""
    half_step = float(np.min(np.diff(axis))) / 2.0 if axis.size > 1 else 0.0
    if value < axis[0] - half_step - tol or value > axis[-1] + half_step + tol:
        return []
    distance = np.abs(axis - value)
    return [int(i) for i in np.flatnonzero(distance <= distance.min() + tol)]


@dataclass
class SetEstimate:
    """Level set of the sample criterion over a grid of normalized parameters."""

    axes: List[np.ndarray]
    sign_combos: List[Tuple[int, int]]
    criterion_values: np.ndarray  # (n_signs, *grid_shape)
    c_hat: float
    a_n: float
    min_criterion: float

    @property
    def threshold(self) -> float:
        return self.min_criterion + self.c_hat / self.a_n

    @property
    def accepted(self) -> np.ndarray:
        return self.criterion_values <= self.threshold

    def accepted_points(self) -> List[Tuple[Tuple[int, int], np.ndarray]]:
        """Accepted (sign combo, free coordinates) pairs."""
        points = []
        mask = self.accepted
        for s_idx, signs in enumerate(self.sign_combos):
            for idx in zip(*np.nonzero(mask[s_idx])):
                coords = np.array([self.axes[k][i] for k, i in enumerate(idx)])
                points.append((signs, coords))
        return points

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per free coordinate min and max over accepted points."""
        coords = np.array([c for _, c in self.accepted_points()])
        return coords.min(axis=0), coords.max(axis=0)

    def contains(self, theta: Theta) -> bool:
        """Whether the grid cell nearest theta was accepted.

        Each free coordinate snaps to its nearest axis point; a coordinate halfway
        between two points keeps both, and the answer is True when any snapped cell
        was accepted. Coordinates more than half a step outside an axis match no cell.
        """
        if not theta.normalized:
            theta = theta.normalize()
        if theta.signs not in self.sign_combos:
            return False
        free = np.concatenate([theta.free_beta, theta.free_gamma])
        candidates = [_nearest_indices(axis, value) for axis, value in zip(self.axes, free)]
        if any(not c for c in candidates):
            return False
        mask = self.accepted[self.sign_combos.index(theta.signs)]
        return any(bool(mask[cell]) for cell in product(*candidates))

    def to_dict(self) -> dict:
        lower, upper = self.bounds()
        return {
            "method": "set",
            "grid": [
                {"lo": float(a[0]), "hi": float(a[-1]), "points": int(a.size)} for a in self.axes
            ],
            "c_hat": float(self.c_hat),
            "a_n": float(self.a_n),
            "min_criterion": float(self.min_criterion),
            "threshold": float(self.threshold),
            "n_accepted": int(self.accepted.sum()),
            "accepted_signs": [
                list(s) for s in sorted({(int(s[0]), int(s[1])) for s, _ in self.accepted_points()})
            ],
            "lower": [float(v) for v in lower],
            "upper": [float(v) for v in upper],
        }


@dataclass
class TestResult:
    """Outcome of a moment-inequality test."""

    __test__ = False

    hypothesis: str
    statistic: float
    critical_value: float
    alpha: float
    cells_used: int
    seed: int = 0

    @property
    def reject(self) -> bool:
        return self.statistic > self.critical_value

    def to_dict(self) -> dict:
        return {
            "hypothesis": self.hypothesis,
            "statistic": float(self.statistic),
            "critical_value": float(self.critical_value),
            "alpha": float(self.alpha),
            "reject": self.reject,
            "n_cells": int(self.cells_used),
            "seed": int(self.seed),
        }


@dataclass
class EtaBounds:
    """Bounds on the share of individuals for whom the goods are complements."""

    lower: float
    upper: float
    lower_trivial: bool = False
    upper_trivial: bool = False

    @property
    def valid(self) -> bool:
        return self.lower <= self.upper

    def to_dict(self) -> dict:
        return {
            "lower": float(self.lower),
            "upper": float(self.upper),
            "lower_trivial": self.lower_trivial,
            "upper_trivial": self.upper_trivial,
            "valid": self.valid,
        }


@dataclass
class MetricsRow:
    """Monte Carlo summary for one estimator and parameter block."""

    estimator: str
    parameter: str
    design: int
    n: int
    t_len: int
    sd: float
    rmse: float
    mad: float
    bias: float
    err: Optional[float] = None
    coverage: Optional[float] = None
    successes: int = 0
    failures: int = 0

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "parameter": self.parameter,
            "design": self.design,
            "n": self.n,
            "t_len": self.t_len,
            "err": None if self.err is None else float(self.err),
            "sd": float(self.sd),
            "rmse": float(self.rmse),
            "mad": float(self.mad),
            "bias": float(self.bias),
            "coverage": None if self.coverage is None else float(self.coverage),
            "successes": self.successes,
            "failures": self.failures,
        }


@dataclass
class Region:
    """Closed polygon {e : a_i . e <= b_i} in the plane of (eps_A, eps_B)."""

    a: np.ndarray  # (m, 2)
    b: np.ndarray  # (m,)

    def __post_init__(self) -> None:
        self.a = np.asarray(self.a, dtype=float).reshape(-1, 2)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.a.shape[0] != self.b.shape[0]:
            raise DimensionMismatchError("half-plane normals and offsets disagree")

    def contains(self, points: np.ndarray, strict: bool = False) -> np.ndarray:
        """Membership of points with shape (..., 2)."""
        slack = np.asarray(points, dtype=float) @ self.a.T - self.b
        if strict:
            return np.all(slack < 0, axis=-1)
        return np.all(slack <= 0, axis=-1)

    def intersect(self, other: "Region") -> "Region":
        return Region(a=np.vstack([self.a, other.a]), b=np.concatenate([self.b, other.b]))


@dataclass
class TransportProblem:
    """Row and column marginals over choices plus cells that must carry no mass."""

    row_marginals: np.ndarray
    col_marginals: np.ndarray
    forbidden: np.ndarray = field(default_factory=lambda: np.zeros((4, 4), dtype=bool))

    def __post_init__(self) -> None:
        self.row_marginals = np.asarray(self.row_marginals, dtype=float)
        self.col_marginals = np.asarray(self.col_marginals, dtype=float)
        self.forbidden = np.asarray(self.forbidden, dtype=bool)
        if self.row_marginals.shape != (4,) or self.col_marginals.shape != (4,):
            raise DimensionMismatchError("marginals must be 4-vectors")
        if self.forbidden.shape != (4, 4):
            raise DimensionMismatchError("forbidden mask must be 4 x 4")
        for name, m in (("row", self.row_marginals), ("column", self.col_marginals)):
            if np.any(m < -1e-12) or abs(m.sum() - 1.0) > 1e-10:
                raise ValueError(f"{name} marginals must be a probability vector")


@dataclass
class TransportPlan:
    """Joint probabilities r[j, k] of choosing j in period s and k in period t."""

    r: np.ndarray

    def __post_init__(self) -> None:
        self.r = np.asarray(self.r, dtype=float)

    @property
    def row_sums(self) -> np.ndarray:
        return self.r.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.r.sum(axis=0)

    def satisfies(self, problem: TransportProblem, tol: float = 1e-10) -> bool:
        return bool(
            np.all(self.r >= -tol)
            and np.allclose(self.row_sums, problem.row_marginals, atol=tol, rtol=0)
            and np.allclose(self.col_sums, problem.col_marginals, atol=tol, rtol=0)
            and np.all(np.abs(self.r[problem.forbidden]) <= tol)
        )


@dataclass
class PairObservation:
    """Marginal CCPs at one covariate pair, the input unit of the sharpness oracle."""

    p_s: np.ndarray
    p_t: np.ndarray
    x_s: np.ndarray  # (2, d_x)
    x_t: np.ndarray  # (2, d_x)
    z: np.ndarray

    def __post_init__(self) -> None:
        self.p_s = np.asarray(self.p_s, dtype=float)
        self.p_t = np.asarray(self.p_t, dtype=float)
        self.x_s = np.asarray(self.x_s, dtype=float)
        self.x_t = np.asarray(self.x_t, dtype=float)
        self.z = np.atleast_1d(np.asarray(self.z, dtype=float))
        if self.x_s.shape != self.x_t.shape or self.x_s.ndim != 2 or self.x_s.shape[0] != 2:
            raise DimensionMismatchError("x_s and x_t must both have shape (2, d_x)")

    @classmethod
    def from_dict(cls, data: dict) -> "PairObservation":
        return cls(
            p_s=data["P_s"], p_t=data["P_t"], x_s=data["x_s"], x_t=data["x_t"], z=data["z"]
        )

    def to_dict(self) -> dict:
        return {
            "P_s": self.p_s.tolist(),
            "P_t": self.p_t.tolist(),
            "x_s": self.x_s.tolist(),
            "x_t": self.x_t.tolist(),
            "z": self.z.tolist(),
        }
