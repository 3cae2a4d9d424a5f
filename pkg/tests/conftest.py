"""Shared fixtures: the expensive ensembles are built once per session."""

import numpy as np
import pytest

from dustlab import ModelParams
from dustlab.sde import RngSpec, first_passage_times, simulate_ito

SEED = 20250810


@pytest.fixture(scope="session")
def params():
    return ModelParams.create(G=1.0, rho0=1.0, u_eps=2.0)


@pytest.fixture(scope="session")
def main_ens(params):
    """Capped Ito ensemble used by the martingale-type suites."""
    return simulate_ito(params, u_eps=2.0, n_paths=10000, dt=2e-6,
                        horizon=0.05, cap=16.0, rng=RngSpec(SEED))


@pytest.fixture(scope="session")
def full_ens(params):
    """Smaller ensemble with stride-1 path storage (time change needs the
    per-step predictable compensator; continuity uses the fine grid)."""
    return simulate_ito(params, u_eps=2.0, n_paths=400, dt=1e-6,
                        horizon=0.015, cap=16.0, rng=RngSpec(SEED + 1),
                        store="full", store_stride=1)


@pytest.fixture(scope="session")
def hitting_sample(params):
    """Exact-solution blow-up times at the largest horizon."""
    return first_passage_times(params, 2.0, n_paths=10000, horizon=10.0,
                               rng=RngSpec(SEED + 2))


@pytest.fixture(scope="session")
def fp_setup():
    """Forward-PDE cross-validation pair (gentler density for the gate)."""
    from dustlab.fokker_planck import kfp_solve
    p = ModelParams.create(G=1.0, rho0=0.5, u_eps=1.4)
    grid = kfp_solve(p, 1.4, u_max=60.0, cells=1600, horizon=0.01, dt=1e-5)
    ens = simulate_ito(p, u_eps=1.4, n_paths=100000, dt=4e-6, horizon=0.01,
                       cap=60.0, rng=RngSpec(424242),
                       snapshots=[0.01], block_size=25000)
    return p, grid, ens
