"""
Configuration module for bundlechoice.

Run settings are dataclasses. load_config layers them: defaults, then an optional
JSON file, then environment variables (read through python-dotenv), then CLI
overrides.
"""

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from dotenv import load_dotenv

from .models import Theta

DESIGNS = (1, 2, 3, 4)
COVARIATE_SCHEMES = ("gaussian", "bounded")
X_VARIANCE_MODES = ("per_coordinate", "standard")
CCP_METHODS = ("neural", "kernel")
ESTIMATORS = ("two-step", "msm", "fe-logit", "semi-nb", "set")
TASKS = ("simulate", "estimate", "set", "test", "bounds", "montecarlo", "rationalize")


def default_theta() -> Theta:
    return Theta(beta=np.array([1.0, 1.0]), gamma=np.array([1.0, 1.0]))


@dataclass
class LatentGammaSpec:
    """Two-point law for individual complementarity: +g_plus w.p. eta, else -g_minus."""

    eta: float = 0.7
    g_plus: float = 1.0
    g_minus: float = 1.0
    vary_over_time: bool = False

    def validate(self) -> None:
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.g_plus < 0 or self.g_minus < 0:
            raise ValueError("g_plus and g_minus are magnitudes and must be nonnegative")


@dataclass
class DgpConfig:
    """Simulation design."""

    design: int = 1
    n: int = 1000
    t_len: int = 2
    d_x: int = 2
    d_z: int = 2
    covariate_scheme: str = "gaussian"
    theta_true: Theta = field(default_factory=default_theta)
    seed: int = 0
    latent_gamma: Optional[LatentGammaSpec] = None
    gamma_constant: Optional[float] = None
    x_variance: str = "per_coordinate"

    def validate(self) -> None:
        if self.design not in DESIGNS:
            raise ValueError(f"design must be one of {DESIGNS}, got {self.design}")
        if self.n < 0:
            raise ValueError("n must be nonnegative")
        if self.t_len < 2:
            raise ValueError("t_len must be at least 2")
        if self.d_x < 1 or self.d_z < 1:
            raise ValueError("d_x and d_z must be at least 1")
        if self.covariate_scheme not in COVARIATE_SCHEMES:
            raise ValueError(f"covariate_scheme must be one of {COVARIATE_SCHEMES}")
        if self.x_variance not in X_VARIANCE_MODES:
            raise ValueError(f"x_variance must be one of {X_VARIANCE_MODES}")
        if self.theta_true.d_x != self.d_x or self.theta_true.d_z != self.d_z:
            raise ValueError("theta_true dimensions do not match d_x / d_z")
        if self.latent_gamma is not None:
            self.latent_gamma.validate()


@dataclass
class CcpOptions:
    """First-step CCP estimator settings."""

    method: str = "neural"
    hidden_width: Optional[int] = None
    max_width: int = 32
    iterations: int = 2000
    learning_rate: float = 0.05
    bandwidth_scale: float = 1.06
    floor: float = 1e-6
    seed: int = 0

    def validate(self) -> None:
        if self.method not in CCP_METHODS:
            raise ValueError(f"CCP method must be one of {CCP_METHODS}, got {self.method!r}")
        if self.iterations < 1 or self.learning_rate <= 0:
            raise ValueError("iterations and learning_rate must be positive")
        if not 0 < self.floor < 0.25:
            raise ValueError("probability floor must lie in (0, 0.25)")


@dataclass
class EstimatorOptions:
    """Settings shared by the point estimators."""

    grid_lo: float = -5.0
    grid_hi: float = 5.0
    grid_points: int = 41
    max_grid_size: int = 5000
    restarts: int = 5
    nm_maxiter: int = 400
    ccp: CcpOptions = field(default_factory=CcpOptions)
    seed: int = 0
    renormalize_nobundle: bool = True
    msm_draws: int = 100
    msm_smoothing: float = 0.1
    msm_weighting: str = "identity"

    def validate(self) -> None:
        if self.grid_hi <= self.grid_lo or self.grid_points < 1:
            raise ValueError("invalid optimizer grid")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.msm_draws < 100:
            raise ValueError("simulated moments need at least 100 draws")
        if self.msm_weighting not in ("identity", "diagonal"):
            raise ValueError("msm_weighting must be 'identity' or 'diagonal'")
        self.ccp.validate()


@dataclass
class SetGridSpec:
    """Grid for the set estimator, one axis per free coordinate."""

    lo: float = -5.0
    hi: float = 5.0
    points: int = 100
    c_scale: float = 1e-4

    def validate(self) -> None:
        if self.points < 1:
            raise ValueError("grid needs at least one point")
        if self.hi < self.lo:
            raise ValueError("grid upper end below lower end")

    @classmethod
    def parse(cls, text: str) -> "SetGridSpec":
        """Parse 'lo:hi:points'."""
        try:
            lo, hi, points = text.split(":")
            return cls(lo=float(lo), hi=float(hi), points=int(points))
        except ValueError:
            raise ValueError(f"grid must look like lo:hi:points, got {text!r}") from None


@dataclass
class TestOptions:
    """Settings for the moment-inequality tests and bounds."""

    __test__ = False

    alpha: float = 0.05
    bootstrap_draws: int = 200
    bins: int = 5
    min_cell: int = 20
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.bootstrap_draws < 1 or self.bins < 1 or self.min_cell < 1:
            raise ValueError("bootstrap_draws, bins and min_cell must be positive")


@dataclass
class RunConfig:
    """Everything one CLI task or Monte Carlo run needs."""

    task: str = "montecarlo"
    dgp: DgpConfig = field(default_factory=DgpConfig)
    estimators: List[str] = field(default_factory=lambda: ["two-step"])
    replications: int = 1
    base_seed: int = 0
    output_dir: Path = Path("data/output")
    threads: int = 1
    estimator_options: EstimatorOptions = field(default_factory=EstimatorOptions)
    set_grid: SetGridSpec = field(default_factory=SetGridSpec)
    test_options: TestOptions = field(default_factory=TestOptions)
    eval_draws: int = 10000
    cache_dir: Optional[Path] = None

    def __post_init__(self) -> None:
        """Ensure paths are Path objects."""
        if isinstance(self.output_dir, str):
            self.output_dir = Path(self.output_dir)
        if isinstance(self.cache_dir, str):
            self.cache_dir = Path(self.cache_dir)

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise ValueError(f"unknown estimators: {unknown}")
        if self.eval_draws < 1:
            raise ValueError("eval_draws must be positive")
        self.dgp.validate()
        self.estimator_options.validate()
        self.set_grid.validate()
        self.test_options.validate()


def _encode(value: Any) -> Any:
    if isinstance(value, Theta):
        return value.to_dict()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, dict):
        return {k: _encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    return value


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    """Plain-JSON view of a RunConfig."""
    return dataclass_to_dict(config)


def dataclass_to_dict(obj: Any) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, Theta):
            out[f.name] = value.to_dict()
        elif hasattr(value, "__dataclass_fields__"):
            out[f.name] = dataclass_to_dict(value)
        else:
            out[f.name] = _encode(value)
    return out


def dgp_from_dict(data: Dict[str, Any]) -> DgpConfig:
    data = dict(data)
    if "theta_true" in data and not isinstance(data["theta_true"], Theta):
        data["theta_true"] = Theta.from_dict(data["theta_true"])
    if data.get("latent_gamma") is not None and not isinstance(
        data["latent_gamma"], LatentGammaSpec
    ):
        data["latent_gamma"] = LatentGammaSpec(**data["latent_gamma"])
    return DgpConfig(**data)


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Inverse of config_to_dict."""
    data = dict(data)
    if "dgp" in data:
        data["dgp"] = dgp_from_dict(data["dgp"])
    if "estimator_options" in data:
        opts = dict(data["estimator_options"])
        if "ccp" in opts:
            opts["ccp"] = CcpOptions(**opts["ccp"])
        data["estimator_options"] = EstimatorOptions(**opts)
    if "set_grid" in data:
        data["set_grid"] = SetGridSpec(**data["set_grid"])
    if "test_options" in data:
        data["test_options"] = TestOptions(**data["test_options"])
    return RunConfig(**data)


def save_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(config), f, indent=2, sort_keys=True)
    return path


def read_config_file(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    # A bare DGP config is accepted as shorthand for a simulate run.
    if "design" in data and "dgp" not in data:
        return RunConfig(task="simulate", dgp=dgp_from_dict(data))
    return config_from_dict(data)


def load_config(
    config_path: Optional[str] = None,
    output_dir: Optional[str] = None,
    threads: Optional[int] = None,
    cache_dir: Optional[str] = None,
    **overrides: Any,
) -> RunConfig:
    """
    Load configuration from a JSON file, environment variables and CLI overrides.

    CLI arguments take precedence over environment variables, which take
    precedence over the file.

    Args:
        config_path: Optional JSON file with a RunConfig or a bare DgpConfig
        output_dir: Override for the output directory
        threads: Override for the parallelism cap
        cache_dir: Override for the replication cache directory
        **overrides: Further RunConfig fields (task, replications, base_seed, ...)

    Returns:
        Validated RunConfig

    Raises:
        ValueError: If a setting is invalid
    """
    load_dotenv()

    config = read_config_file(config_path) if config_path else RunConfig()

    env_threads = os.getenv("BUNDLECHOICE_THREADS")
    env_output = os.getenv("BUNDLECHOICE_OUTPUT_DIR")
    env_cache = os.getenv("BUNDLECHOICE_CACHE_DIR")

    if threads is not None:
        config.threads = int(threads)
    elif env_threads:
        try:
            config.threads = int(env_threads)
        except ValueError:
            raise ValueError(f"BUNDLECHOICE_THREADS must be an integer, got {env_threads!r}")

    if output_dir:
        config.output_dir = Path(output_dir)
    elif env_output:
        config.output_dir = Path(env_output)

    if cache_dir:
        config.cache_dir = Path(cache_dir)
    elif env_cache:
        config.cache_dir = Path(env_cache)

    for key, value in overrides.items():
        if value is None:
            continue
        if not hasattr(config, key):
            raise ValueError(f"unknown configuration key: {key}")
        setattr(config, key, value)

    config.validate()
    return config

