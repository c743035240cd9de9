"""
Inference module for bundlechoice.

Tests of complementarity and substitutability built from gated demand
moments, the demand-based substitution sign s_AB(z), and bounds on the share
of individuals for whom the two goods are complements.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import statsmodels.api as sm
from scipy.stats import norm

from .ccp import CcpTable, estimate_ccp_table
from .config import CcpOptions, TestOptions
from .dgp import enumerate_ccps
from .errors import InsufficientDataError
from .models import EtaBounds, ObservationPanel, TestResult

logger = logging.getLogger(__name__)

# Choices that must all become weakly more likely for each gate.
XI_CHOICES = {1: [1, 2, 3], 2: [1, 3, 0]}
D_MEMBERS = {"A": [1, 3], "B": [2, 3]}


@dataclass
class ZCell:
    """Subsample lo <= z[coordinate] < hi."""

    coordinate: int = 0
    lo: float = -math.inf
    hi: float = math.inf

    def mask(self, z: np.ndarray) -> np.ndarray:
        if not 0 <= self.coordinate < z.shape[1]:
            raise ValueError(f"z has no coordinate {self.coordinate}")
        values = z[:, self.coordinate]
        return (values >= self.lo) & (values < self.hi)

    @classmethod
    def parse(cls, text: str) -> "ZCell":
        """Parse 'coordinate:lo:hi'; empty ends are unbounded."""
        try:
            coord, lo, hi = text.split(":")
            return cls(
                coordinate=int(coord),
                lo=float(lo) if lo else -math.inf,
                hi=float(hi) if hi else math.inf,
            )
        except ValueError:
            raise ValueError(f"z cell must look like coordinate:lo:hi, got {text!r}") from None


def xi_indicator(p_s, p_t, kind: int):
    """Gate: every choice of the kind's set is weakly more likely in s than in t."""
    if kind not in XI_CHOICES:
        raise ValueError(f"xi kind must be 1 or 2, got {kind}")
    diff = np.asarray(p_s, dtype=float) - np.asarray(p_t, dtype=float)
    return np.all(diff[..., XI_CHOICES[kind]] >= 0, axis=-1)


def _select(
    panel: ObservationPanel,
    table: Optional[CcpTable],
    z_cell: Optional[ZCell],
    ccp_options: Optional[CcpOptions],
) -> Tuple[ObservationPanel, CcpTable]:
    if table is None:
        table = estimate_ccp_table(panel, ccp_options)
    if z_cell is None:
        return panel, table
    mask = z_cell.mask(panel.z)
    if not mask.any():
        raise InsufficientDataError("z cell selects no individuals")
    return panel.subset(mask), table.subset(mask)


def _demand_indicator(y: np.ndarray, good: str) -> np.ndarray:
    return np.isin(y, D_MEMBERS[good]).astype(float)


@dataclass
class _Cell:
    individuals: np.ndarray
    values: np.ndarray  # signed so that the null says E[value] >= 0


def _moment_cells(
    panel: ObservationPanel,
    table: CcpTable,
    kind: int,
    signs: List[Tuple[str, float]],
    options: TestOptions,
) -> List[_Cell]:
    """
    Cells of gated observations, binned by the predicted demand change.

    signs lists (good, +1 or -1) with the null E[sign * moment] >= 0.
    """
    cells: List[_Cell] = []
    for s, t in panel.ordered_pairs():
        p_s, p_t = table.pair(s, t)
        fire = np.nonzero(xi_indicator(p_s, p_t, kind))[0]
        if fire.size < options.min_cell:
            continue
        for good, sign in signs:
            members = D_MEMBERS[good]
            predicted = sign * (p_s[fire][:, members].sum(axis=1) - p_t[fire][:, members].sum(axis=1))
            moment = sign * (
                _demand_indicator(panel.y[fire, s], good) - _demand_indicator(panel.y[fire, t], good)
            )
            n_bins = min(options.bins, fire.size // options.min_cell)
            edges = np.quantile(predicted, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
            labels = np.searchsorted(edges, predicted, side="right")
            for b in range(n_bins):
                in_bin = labels == b
                if in_bin.sum() >= options.min_cell:
                    cells.append(_Cell(individuals=fire[in_bin], values=moment[in_bin]))
    return cells


def _max_statistic(cells: List[_Cell]) -> float:
    return max(
        (math.sqrt(c.values.size) * max(-float(c.values.mean()), 0.0) for c in cells),
        default=0.0,
    )


def _bootstrap_critical_value(cells: List[_Cell], n: int, options: TestOptions) -> float:
    """Rademacher multiplier bootstrap of the max statistic; weights are shared per individual."""
    rng = np.random.default_rng(np.random.SeedSequence([options.seed, 3]))
    weights = rng.choice([-1.0, 1.0], size=(options.bootstrap_draws, n))
    draws = np.zeros(options.bootstrap_draws)
    for cell in cells:
        centered = cell.values - cell.values.mean()
        stat = -(weights[:, cell.individuals] @ centered) / math.sqrt(cell.values.size)
        draws = np.maximum(draws, np.maximum(stat, 0.0))
    return float(np.quantile(draws, 1.0 - options.alpha))


def _run_test(
    hypothesis: str,
    panel: ObservationPanel,
    table: CcpTable,
    kind: int,
    signs: List[Tuple[str, float]],
    options: TestOptions,
) -> TestResult:
    options.validate()
    cells = _moment_cells(panel, table, kind, signs, options)
    if not cells:
        logger.info(f"No gated cells for the {hypothesis} test; statistic is 0")
        return TestResult(hypothesis, 0.0, 0.0, options.alpha, 0, options.seed)
    statistic = _max_statistic(cells)
    critical = _bootstrap_critical_value(cells, panel.n, options)
    result = TestResult(hypothesis, statistic, critical, options.alpha, len(cells), options.seed)
    logger.info(
        f"{hypothesis} test: statistic={statistic:.4f}, critical={critical:.4f}, "
        f"cells={len(cells)}, reject={result.reject}"
    )
    return result


def test_complementarity(
    panel: ObservationPanel,
    z_cell: Optional[ZCell] = None,
    alpha: Optional[float] = None,
    table: Optional[CcpTable] = None,
    options: Optional[TestOptions] = None,
    ccp_options: Optional[CcpOptions] = None,
) -> TestResult:
    """
    Test H0: Gamma(z) >= 0 on the z cell.

    Under the null the demand for each good weakly rises wherever every choice
    containing a good becomes more likely.

    Args:
        panel: Observed panel
        z_cell: Optional subsample of z; the whole panel when omitted
        alpha: Level; overrides options.alpha
        table: Precomputed first-step CCPs for the whole panel
        options: Cell and bootstrap settings
        ccp_options: First-step settings when table is omitted

    Returns:
        TestResult; a panel where the gate never fires gives statistic 0
    """
    options = _with_alpha(options, alpha)
    panel, table = _select(panel, table, z_cell, ccp_options)
    return _run_test("complementarity", panel, table, 1, [("A", 1.0), ("B", 1.0)], options)


def test_substitutability(
    panel: ObservationPanel,
    z_cell: Optional[ZCell] = None,
    alpha: Optional[float] = None,
    table: Optional[CcpTable] = None,
    options: Optional[TestOptions] = None,
    ccp_options: Optional[CcpOptions] = None,
) -> TestResult:
    """Test H0: Gamma(z) <= 0; demand for A weakly rises and for B weakly falls under the gate."""
    options = _with_alpha(options, alpha)
    panel, table = _select(panel, table, z_cell, ccp_options)
    return _run_test("substitutability", panel, table, 2, [("A", 1.0), ("B", -1.0)], options)


test_complementarity.__test__ = False  # type: ignore[attr-defined]
test_substitutability.__test__ = False  # type: ignore[attr-defined]


def _with_alpha(options: Optional[TestOptions], alpha: Optional[float]) -> TestOptions:
    options = options or TestOptions()
    if alpha is not None:
        options = TestOptions(**{**options.__dict__, "alpha": alpha})
    return options


@dataclass
class SubstitutionSign:
    """Slope of the demand for A in the price of B, and its sign."""

    sign: int
    slope: float
    std_error: float
    n_obs: int

    def to_dict(self) -> dict:
        return {
            "sign": self.sign,
            "slope": self.slope,
            "std_error": self.std_error,
            "n_obs": self.n_obs,
        }


def fit_s_ab(
    panel: ObservationPanel,
    z_cell: Optional[ZCell] = None,
    price_coordinate: int = 0,
    alpha: float = 0.05,
) -> SubstitutionSign:
    """
    Within-individual regression of the change in demand for A on the change in p_B.

    Covariate changes of good A and the other coordinates of good B are
    controlled for; fixed effects difference out. The sign is 0 when the
    slope is not significant at level alpha (HC1 standard errors).
    """
    if not 0 <= price_coordinate < panel.d_x:
        raise ValueError(f"price coordinate {price_coordinate} outside 0..{panel.d_x - 1}")
    if z_cell is not None:
        panel = panel.subset(z_cell.mask(panel.z))

    rows_y, rows_p, rows_c = [], [], []
    for s, t in panel.unordered_pairs():
        demand = _demand_indicator(panel.y[:, t], "A") - _demand_indicator(panel.y[:, s], "A")
        dx = panel.x[:, t] - panel.x[:, s]
        rows_y.append(demand)
        rows_p.append(dx[:, 1, price_coordinate])
        controls = np.column_stack([dx[:, 0], np.delete(dx[:, 1], price_coordinate, axis=1)])
        rows_c.append(controls)
    y = np.concatenate(rows_y) if rows_y else np.zeros(0)
    price = np.concatenate(rows_p) if rows_p else np.zeros(0)

    if y.size < 3 or np.ptp(price) <= 1e-12:
        logger.warning("No variation in the price of B; substitution sign set to 0")
        return SubstitutionSign(sign=0, slope=0.0, std_error=math.nan, n_obs=int(y.size))

    controls = np.concatenate(rows_c)
    controls = controls[:, np.ptp(controls, axis=0) > 1e-12]
    design = sm.add_constant(np.column_stack([price, controls]), has_constant="add")
    fit = sm.OLS(y, design).fit(cov_type="HC1")
    slope, se = float(fit.params[1]), float(fit.bse[1])
    threshold = norm.ppf(1.0 - alpha / 2.0)
    sign = 0 if not se > 0 or abs(slope) / se < threshold else int(np.sign(slope))
    logger.info(f"Substitution slope {slope:.4f} (se {se:.4f}) -> sign {sign:+d}")
    return SubstitutionSign(sign=sign, slope=slope, std_error=se, n_obs=int(y.size))


def estimate_s_ab(
    panel: ObservationPanel, z_cell: Optional[ZCell] = None, price_coordinate: int = 0
) -> int:
    """Sign in {-1, 0, +1} of the demand for A's response to the price of B."""
    return fit_s_ab(panel, z_cell, price_coordinate).sign


def demand_slope_signs(
    delta_a: float,
    delta_b_values,
    gamma_z: float,
    shock_support: np.ndarray,
    weights: np.ndarray,
    tol: float = 1e-12,
) -> np.ndarray:
    """
    Signs of the exact change in demand for A along an increasing grid of delta_B.

    A rising price of B lowers delta_B, so complements (Gamma >= 0) give signs
    >= 0 here and substitutes give signs <= 0.
    """
    demand = np.array(
        [
            enumerate_ccps(delta_a, float(d_b), gamma_z, shock_support, weights)[[1, 3]].sum()
            for d_b in delta_b_values
        ]
    )
    diff = np.diff(demand)
    return np.where(np.abs(diff) <= tol, 0, np.sign(diff)).astype(int)


def eta_bounds(
    panel: ObservationPanel,
    table: Optional[CcpTable] = None,
    ccp_options: Optional[CcpOptions] = None,
) -> EtaBounds:
    """
    Plug-in bounds on eta = Pr(Gamma_it >= 0).

    The lower bound is the largest signed demand change (-dD_A or dD_B) where
    the xi-2 gate fires; the upper bound is one plus the smallest demand change
    where the xi-1 gate fires. Both are clamped to [0, 1]; a side without
    qualifying observations keeps its trivial value and is flagged.

    With CCP rows that sum to one the bracket is always [0, 1]: the xi-1 gate
    forces dD_A, dD_B >= 0, so the upper bound clamps to 1, and the xi-2 gate
    forces dD_A >= 0 and dD_B = -(dP_O + dP_A) <= 0, so the lower bound clamps
    to 0. The flags still report which sides were observed.
    """
    if table is None:
        table = estimate_ccp_table(panel, ccp_options)
    lower_values: List[np.ndarray] = []
    upper_values: List[np.ndarray] = []
    for s, t in panel.ordered_pairs():
        p_s, p_t = table.pair(s, t)
        d_a = p_s[:, D_MEMBERS["A"]].sum(axis=1) - p_t[:, D_MEMBERS["A"]].sum(axis=1)
        d_b = p_s[:, D_MEMBERS["B"]].sum(axis=1) - p_t[:, D_MEMBERS["B"]].sum(axis=1)
        gate2 = xi_indicator(p_s, p_t, 2)
        gate1 = xi_indicator(p_s, p_t, 1)
        lower_values += [-d_a[gate2], d_b[gate2]]
        upper_values += [d_a[gate1], d_b[gate1]]

    lower_pool = np.concatenate(lower_values) if lower_values else np.zeros(0)
    upper_pool = np.concatenate(upper_values) if upper_values else np.zeros(0)
    lower_trivial = lower_pool.size == 0
    upper_trivial = upper_pool.size == 0
    lower = 0.0 if lower_trivial else float(np.clip(lower_pool.max(), 0.0, 1.0))
    upper = 1.0 if upper_trivial else float(np.clip(upper_pool.min() + 1.0, 0.0, 1.0))
    bounds = EtaBounds(lower, upper, lower_trivial, upper_trivial)
    if not bounds.valid:
        logger.warning(f"Upper bound {upper:.4f} below lower bound {lower:.4f}")
    return bounds
