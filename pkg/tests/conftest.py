"""Pytest configuration and shared fixtures."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to Python path for test imports
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from bundlechoice.ccp import CcpTable, population_ccp_table  # noqa: E402
from bundlechoice.dgp import DiscreteInstance, population_ccps, random_discrete_instance  # noqa: E402


@pytest.fixture
def instance() -> DiscreteInstance:
    """A discrete instance with exact CCPs available."""
    return random_discrete_instance(np.random.default_rng(12), n_types=6, t_len=2)


@pytest.fixture
def table(instance: DiscreteInstance) -> CcpTable:
    """Population CCPs of the instance."""
    return population_ccp_table(population_ccps(instance))
