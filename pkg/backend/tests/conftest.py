import numpy as np
import pandas as pd
import pytest

from distributions import RepairVector, Support, make_simplex
from models import RunConfig, SyntheticSpec
from projection import WeightedDataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240518)


@pytest.fixture
def random_simplex():
    """Factory: a strictly positive random SimplexVector on a 0..n-1 grid."""
    def make(rng, n, support=None):
        support = support or Support.grid(0, n - 1)
        values = rng.uniform(0.05, 1.0, size=n)
        return make_simplex(values / values.sum(), support)
    return make


@pytest.fixture
def random_groups():
    """Factory: (P, P0, P1, V) with P the pi0-mixture of two random group conditionals."""
    def make(rng, n):
        support = Support.grid(0, n - 1)
        pi0 = rng.uniform(0.2, 0.8)
        a, b = rng.uniform(0.05, 1.0, size=(2, n))
        p0, p1 = a / a.sum(), b / b.sum()
        p = pi0 * p0 + (1 - pi0) * p1
        px = make_simplex(p, support)
        return (px, make_simplex(p0, support), make_simplex(p1, support),
                RepairVector((p0 - p1) / px.values, support))
    return make


@pytest.fixture
def observations():
    """Six samples on two points: one (i, s0), two (i, s1), two (i', s0), one (i', s1)."""
    frame = pd.DataFrame({
        "x": [0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        "s": [0, 1, 1, 0, 0, 1],
        "y": [1, 0, 1, 1, 0, 0],
    })
    return WeightedDataset(frame, ("x",), "s", "y")


@pytest.fixture
def small_spec():
    return SyntheticSpec(samples=4000, seed=7)


@pytest.fixture
def synthetic_config():
    return RunConfig()


@pytest.fixture(scope="session")
def synthetic_runs():
    """Default synthetic instance solved by the baseline and by Lambda-repairs (shared across tests)."""
    from pipeline import run_repair

    spec = SyntheticSpec()
    runs = {"baseline": run_repair(spec, RunConfig(), "baseline")}
    for lam in (0.0, 1e-3, 1e-2):
        runs[lam] = run_repair(spec, RunConfig(lam=lam), "dykstra")
    return runs
