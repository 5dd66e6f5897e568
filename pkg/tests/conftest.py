import numpy as np
import pytest

from geomix.core import BoundaryParams, RandomSeed


@pytest.fixture
def bounds():
    return BoundaryParams(0.0, 2.0)


@pytest.fixture
def unit_bounds():
    return BoundaryParams(0.0, 1.0)


def assert_within_se(estimate, target, se, n_se, label=""):
    """Monte Carlo comparison in standard-error bands, never absolute."""
    estimate = np.asarray(estimate, dtype=float)
    target = np.asarray(target, dtype=float)
    se = np.asarray(se, dtype=float)
    gap = np.abs(estimate - target)
    ok = gap <= n_se * se
    # a zero-variance estimator must match exactly
    ok |= (se == 0) & (gap == 0)
    assert np.all(ok), (
        f"{label}: estimate {estimate} vs target {target} "
        f"deviates by {gap / np.where(se > 0, se, 1.0)} se (band {n_se})"
    )


@pytest.fixture
def seed():
    return RandomSeed(20240801, 0)
