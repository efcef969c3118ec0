import numpy as np
import pytest

from fracaffine.measures import (
    GridConfig,
    GridMeasure,
    MeasureSpec,
    discretize_pair,
)


@pytest.fixture
def unit_atom():
    """Single unit-mass atom at x = 1, the toy model of most examples."""
    return GridMeasure(x=[1.0], w=[1.0])


@pytest.fixture
def pair_grid():
    """A (mu, nu) power-law pair on 12 shared atoms over 3 decades."""
    mu = MeasureSpec("custom_power_law", c=1.0, alpha=0.8)
    nu = MeasureSpec("custom_power_law", c=0.7, alpha=0.3)
    return discretize_pair(mu, nu, GridConfig(1e-2, 1e1, 12))


def rand_grid_pair(rng, n):
    """Random shared-atom (mu, nu) grid with positive weights."""
    atoms = np.sort(10.0 ** rng.uniform(-2, 1, n))
    while np.any(np.diff(atoms) <= 0):
        atoms = np.sort(10.0 ** rng.uniform(-2, 1, n))
    w_mu = rng.uniform(0.05, 1.0, n)
    w_nu = rng.uniform(0.05, 1.0, n)
    gm_mu = GridMeasure(x=atoms, w=w_mu, p=w_nu / w_mu)
    gm_nu = GridMeasure(x=atoms, w=w_nu)
    return gm_mu, gm_nu
