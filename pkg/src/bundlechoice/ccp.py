"""
First-step estimation of conditional choice probabilities.

A CcpModel belongs to one period pair (s, t). It maps the conditioning vector
w_st = (x_s, x_t, z) to estimated probabilities over (O, A, B, AB) for both
periods, with one multinomial model per period. Two methods are available: a
single-hidden-layer network trained by full-batch gradient descent and a
Nadaraya-Watson smoother with a product Gaussian kernel.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit, softmax

from .config import CcpOptions
from .errors import InsufficientDataError, UnfittedPairError
from .models import N_CHOICES, Choice, ObservationPanel, choice_mask

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 10
KERNEL_CHUNK = 1024


@dataclass
class CcpModel:
    """Fitted first-step model for one period pair."""

    method: str
    pair: Tuple[int, int]
    options: CcpOptions
    input_mean: np.ndarray
    input_scale: np.ndarray
    params: Dict[Union[int, str], Dict[str, np.ndarray]] = field(default_factory=dict)
    n_train: int = 0

    @property
    def periods(self) -> Tuple[int, int]:
        return self.pair

    def standardize(self, w: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(np.asarray(w, dtype=float)) - self.input_mean) / self.input_scale

    def predict(self, w: np.ndarray, period: int) -> np.ndarray:
        """Probabilities with shape (m, 4) for conditioning rows w."""
        if period not in self.params:
            raise KeyError(f"model for pair {self.pair} has no period {period}")
        x = self.standardize(w)
        if self.method == "neural":
            raw = _network_forward(x, self.params[period])
        else:
            raw = _kernel_forward(x, self.params[period], self.params["train"])
        return _apply_floor(raw, self.options.floor)


def _apply_floor(p: np.ndarray, floor: float) -> np.ndarray:
    p = np.clip(p, floor, 1.0)
    return p / p.sum(axis=1, keepdims=True)


def _one_hot(y: np.ndarray) -> np.ndarray:
    out = np.zeros((y.size, N_CHOICES))
    out[np.arange(y.size), y] = 1.0
    return out


def hidden_width(n: int, options: CcpOptions) -> int:
    if options.hidden_width is not None:
        return int(options.hidden_width)
    return int(min(options.max_width, max(1, math.ceil(n ** 0.25))))


def _network_forward(x: np.ndarray, weights: Dict[str, np.ndarray]) -> np.ndarray:
    hidden = expit(x @ weights["w1"] + weights["b1"])
    return softmax(hidden @ weights["w2"] + weights["b2"], axis=1)


def _train_network(
    x: np.ndarray,
    targets: np.ndarray,
    width: int,
    options: CcpOptions,
    rng: np.random.Generator,
) -> Dict[str, np.ndarray]:
    """Full-batch gradient descent on the mean multinomial cross-entropy."""
    n, d = x.shape
    w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, width))
    b1 = np.zeros(width)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(width), size=(width, N_CHOICES))
    # output bias starts at the log class frequencies
    b2 = np.log(np.maximum(targets.mean(axis=0), options.floor))
    lr = options.learning_rate

    for _ in range(options.iterations):
        hidden = expit(x @ w1 + b1)
        probs = softmax(hidden @ w2 + b2, axis=1)
        grad_out = (probs - targets) / n
        grad_hidden = (grad_out @ w2.T) * hidden * (1.0 - hidden)
        w2 -= lr * (hidden.T @ grad_out)
        b2 -= lr * grad_out.sum(axis=0)
        w1 -= lr * (x.T @ grad_hidden)
        b1 -= lr * grad_hidden.sum(axis=0)

    return {"w1": w1, "b1": b1, "w2": w2, "b2": b2}


def _kernel_forward(
    x: np.ndarray, weights: Dict[str, np.ndarray], train: Dict[str, np.ndarray]
) -> np.ndarray:
    """Nadaraya-Watson average of one-hot outcomes."""
    active = train["active"].astype(bool)
    bandwidth = train["bandwidth"]
    query = x[:, active] / bandwidth
    sample = train["w"][:, active] / bandwidth
    targets = weights["targets"]
    sample_sq = np.sum(sample**2, axis=1)
    out = np.empty((query.shape[0], N_CHOICES))
    for start in range(0, query.shape[0], KERNEL_CHUNK):
        block = query[start : start + KERNEL_CHUNK]
        dist_sq = np.sum(block**2, axis=1)[:, None] + sample_sq[None, :] - 2.0 * block @ sample.T
        log_k = -0.5 * np.maximum(dist_sq, 0.0)
        # normalize in log space so far-away queries still get weights
        k = softmax(log_k, axis=1)
        out[start : start + KERNEL_CHUNK] = k @ targets
    return out


def _pair_rng(options: CcpOptions, pair: Tuple[int, int]) -> np.random.Generator:
    # both periods of a pair start from the same weights
    return np.random.default_rng(np.random.SeedSequence([options.seed, pair[0], pair[1]]))



def fit_ccp(
    panel: ObservationPanel,
    pair: Tuple[int, int],
    method: Optional[str] = None,
    hyper: Optional[CcpOptions] = None,
) -> CcpModel:
    """
    Fit the period-s and period-t CCP models on w_st.

    Args:
        panel: Observed panel
        pair: Period pair (s, t), s != t
        method: "neural" or "kernel"; overrides hyper.method
        hyper: CCP options (defaults when omitted)

    Returns:
        Fitted CcpModel, deterministic given hyper.seed

    Raises:
        InsufficientDataError: If the panel has fewer than 10 individuals
    """
    options = hyper or CcpOptions()
    if method is not None and method != options.method:
        options = CcpOptions(**{**options.__dict__, "method": method})
    options.validate()
    s, t = pair
    if s == t:
        raise ValueError("a CCP model needs two distinct periods")
    if not (0 <= s < panel.t_len and 0 <= t < panel.t_len):
        raise ValueError(f"pair {pair} outside a panel with {panel.t_len} periods")
    if panel.n < MIN_OBSERVATIONS:
        raise InsufficientDataError(
            f"need at least {MIN_OBSERVATIONS} individuals to fit CCPs, got {panel.n}"
        )

    w = panel.conditioning_vector(s, t)
    mean = w.mean(axis=0)
    sd = w.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    x = (w - mean) / scale

    model = CcpModel(
        method=options.method,
        pair=(s, t),
        options=options,
        input_mean=mean,
        input_scale=scale,
        n_train=panel.n,
    )

    if options.method == "neural":
        width = hidden_width(panel.n, options)
        for period in (s, t):
            model.params[period] = _train_network(
                x, _one_hot(panel.y[:, period]), width, options, _pair_rng(options, pair)
            )
    else:
        active = sd > 0
        dim = max(int(active.sum()), 1)
        bandwidth = options.bandwidth_scale * panel.n ** (-1.0 / (4 + dim))
        model.params["train"] = {
            "w": x,
            "active": active.astype(float),
            "bandwidth": np.array(bandwidth),
        }
        for period in (s, t):
            model.params[period] = {"targets": _one_hot(panel.y[:, period])}

    logger.debug(f"Fitted {options.method} CCP model for pair {pair} on {panel.n} individuals")
    return model


def eval_ccp(model: CcpModel, w, period: int, choice_set: Iterable[Choice]) -> float:
    """P_period(K | w) for a single conditioning vector w."""
    mask = choice_mask(choice_set)
    if mask.all():
        return 1.0
    if not mask.any():
        return 0.0
    probs = model.predict(np.asarray(w, dtype=float).reshape(1, -1), period)[0]
    return float(min(max(probs[mask].sum(), 0.0), 1.0))


def fit_ccp_models(
    panel: ObservationPanel, options: Optional[CcpOptions] = None, n_jobs: int = 1
) -> Dict[Tuple[int, int], CcpModel]:
    """Fit one model per unordered period pair, pairs in parallel."""
    options = options or CcpOptions()
    pairs = panel.unordered_pairs()
    models = Parallel(n_jobs=n_jobs, backend="threading")(
        delayed(fit_ccp)(panel, pair, None, options) for pair in pairs
    )
    return dict(zip(pairs, models))


@dataclass
class CcpTable:
    """
    CCPs evaluated at every individual's own conditioning vector.

    probs[(s, t)] = (P_s(. | W_ist), P_t(. | W_ist)), each with shape (n, 4).
    """

    probs: Dict[Tuple[int, int], Tuple[np.ndarray, np.ndarray]]

    def pair(self, s: int, t: int) -> Tuple[np.ndarray, np.ndarray]:
        try:
            return self.probs[(s, t)]
        except KeyError:
            raise UnfittedPairError((s, t)) from None

    def require(self, pairs: Iterable[Tuple[int, int]]) -> None:
        for pair in pairs:
            self.pair(*pair)

    def subset(self, mask: np.ndarray) -> "CcpTable":
        return CcpTable({k: (ps[mask], pt[mask]) for k, (ps, pt) in self.probs.items()})


def build_ccp_table(
    panel: ObservationPanel, models: Dict[Tuple[int, int], CcpModel]
) -> CcpTable:
    """Evaluate fitted models in-sample for every ordered pair."""
    probs: Dict[Tuple[int, int], Tuple[np.ndarray, np.ndarray]] = {}
    cache: Dict[Tuple[int, int], Dict[int, np.ndarray]] = {}
    for s, t in panel.ordered_pairs():
        model = models.get((s, t)) or models.get((t, s))
        if model is None:
            raise UnfittedPairError((s, t))
        key = model.pair
        if key not in cache:
            w = panel.conditioning_vector(*key)
            cache[key] = {period: model.predict(w, period) for period in key}
        probs[(s, t)] = (cache[key][s], cache[key][t])
    return CcpTable(probs)


def population_ccp_table(ccps: np.ndarray) -> CcpTable:
    """Table from exact per-period CCPs with shape (n, t_len, 4)."""
    t_len = ccps.shape[1]
    return CcpTable(
        {
            (s, t): (ccps[:, s], ccps[:, t])
            for s in range(t_len)
            for t in range(t_len)
            if s != t
        }
    )


def estimate_ccp_table(
    panel: ObservationPanel, options: Optional[CcpOptions] = None, n_jobs: int = 1
) -> CcpTable:
    """Fit first-step models and evaluate them in-sample."""
    return build_ccp_table(panel, fit_ccp_models(panel, options, n_jobs=n_jobs))


def dump_ccp_model(model: CcpModel, path: Union[str, Path]) -> Path:
    """Write a fitted model as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = {
        "method": model.method,
        "pair": list(model.pair),
        "options": dict(model.options.__dict__),
        "input_mean": model.input_mean.tolist(),
        "input_scale": model.input_scale.tolist(),
        "n_train": model.n_train,
        "params": {
            str(key): {name: np.asarray(arr).tolist() for name, arr in group.items()}
            for key, group in model.params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f)
    return path


def load_ccp_model(path: Union[str, Path]) -> CcpModel:
    """Read a model written by dump_ccp_model."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"CCP model file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    params: Dict = {}
    for key, group in data["params"].items():
        parsed_key = key if key == "train" else int(key)
        params[parsed_key] = {name: np.asarray(arr, dtype=float) for name, arr in group.items()}
    return CcpModel(
        method=data["method"],
        pair=(int(data["pair"][0]), int(data["pair"][1])),
        options=CcpOptions(**data["options"]),
        input_mean=np.asarray(data["input_mean"], dtype=float),
        input_scale=np.asarray(data["input_scale"], dtype=float),
        params=params,
        n_train=int(data["n_train"]),
    )
