"""Interior pressure, compactness limit, Lane-Emden polytropes."""

import math

import numpy as np
import pytest

from dustlab import (StarConfig, buchdahl_check, interior_pressure,
                     lane_emden_solve, polytrope_mass_radius)
from dustlab.errors import CompactnessError, NoSurfaceError


def pc_formula(c):
    """Direct evaluation of the central-pressure closed form."""
    return (1 - math.sqrt(1 - c)) / (3 * math.sqrt(1 - c) - 1)


def test_surface_pressure_vanishes():
    cfg = StarConfig.from_compactness(0.5)
    assert interior_pressure(cfg, cfg.R) == 0.0


def test_central_pressure_half_compactness():
    cfg = StarConfig.from_compactness(0.5)
    pc = interior_pressure(cfg, 0.0)
    assert abs(pc / cfg.rho0 - pc_formula(0.5)) < 1e-14
    assert abs(pc / cfg.rho0 - 0.26121) < 1e-5


def test_central_pressure_blowup_near_limit():
    cfg = StarConfig.from_compactness(8.0 / 9.0 - 1e-6)
    pc = interior_pressure(cfg, 0.0)
    assert pc > 1e5 * cfg.rho0


def test_compactness_error_at_limit():
    cfg = StarConfig.from_compactness(8.0 / 9.0)
    with pytest.raises(CompactnessError):
        interior_pressure(cfg, 0.0)


def test_pressure_monotone_decreasing():
    cfg = StarConfig.from_compactness(0.7)
    r = np.linspace(0.0, cfg.R, 1000)
    p = interior_pressure(cfg, r)
    assert np.all(np.diff(p) < 0)


def test_buchdahl_verdicts():
    assert buchdahl_check(StarConfig.from_compactness(0.5))["stable"]
    assert not buchdahl_check(StarConfig.from_compactness(8.0 / 9.0))["stable"]
    res = buchdahl_check(StarConfig.from_compactness(0.1))
    # direct evaluation of the closed form: (1-sqrt(0.9))/(3 sqrt(0.9)-1)
    cfg = StarConfig.from_compactness(0.1)
    assert abs(res["central_pressure"] / cfg.rho0 - pc_formula(0.1)) < 1e-14
    assert abs(res["central_pressure"] / cfg.rho0 - 0.0277987) < 1e-6


def test_buchdahl_center_consistency():
    cfg = StarConfig.from_compactness(0.3)
    assert buchdahl_check(cfg)["central_pressure"] == \
        interior_pressure(cfg, 0.0)


def test_horizon_rejected():
    with pytest.raises(ValueError):
        StarConfig(M=1.0, R=2.0)  # 2M/R = 1


def test_lane_emden_analytic_n0():
    sol = lane_emden_solve(0)
    assert abs(sol.xi1 - math.sqrt(6)) < 1e-8
    assert abs(sol.mu1 - 2 * math.sqrt(6)) < 1e-8
    inner = sol.xi > 0
    err = np.abs(sol.theta[inner] - (1 - sol.xi[inner] ** 2 / 6))
    assert err.max() < 1e-8


def test_lane_emden_analytic_n1():
    sol = lane_emden_solve(1)
    assert abs(sol.xi1 - math.pi) < 1e-8
    assert abs(sol.mu1 - math.pi) < 1e-8
    inner = sol.xi > 0
    err = np.abs(sol.theta[inner] - np.sin(sol.xi[inner]) / sol.xi[inner])
    assert err.max() < 1e-8


def test_lane_emden_n3_reference_values():
    sol = lane_emden_solve(3)
    assert abs(sol.xi1 - 6.89685) < 5e-4
    assert abs(sol.mu1 - 2.01824) < 5e-4


def test_lane_emden_boundary_conditions():
    sol = lane_emden_solve(1.5)
    assert sol.theta[0] == 1.0 and sol.dtheta[0] == 0.0
    # theta positive strictly inside the surface
    assert np.all(sol.theta[:-1] > 0)


def test_lane_emden_residual():
    for n in (0, 1, 3):
        sol = lane_emden_solve(n)
        assert sol.residual() < 1e-8


def test_lane_emden_mass_integral_identity():
    for n in (0, 1, 3):
        sol = lane_emden_solve(n)
        quad = sol.mass_integral_quadrature()
        assert abs(quad - sol.mu1) < 1e-6


def test_lane_emden_no_surface():
    sol = lane_emden_solve(5)
    assert not sol.complete
    assert sol.xi1 is None
    assert sol.xi[-1] >= 100.0 - 1e-9
    with pytest.raises(NoSurfaceError):
        polytrope_mass_radius(sol, 1.0, 1.0)


def test_polytrope_n1_radius():
    sol = lane_emden_solve(1)
    res = polytrope_mass_radius(sol, kappa_eos=1.0, rho_c=1.0)
    alpha = math.sqrt(1.0 / (2 * math.pi))
    assert abs(res["alpha"] - alpha) < 1e-12
    assert abs(res["R"] - alpha * math.pi) < 1e-7


def test_polytrope_n0_uniform_density():
    sol = lane_emden_solve(0)
    res = polytrope_mass_radius(sol, kappa_eos=1.0, rho_c=2.0)
    assert abs(res["M"] - 4 * math.pi / 3 * 2.0 * res["R"] ** 3) < 1e-12


@pytest.mark.parametrize("n", [1, 1.5, 3])
def test_polytrope_density_scaling(n):
    sol = lane_emden_solve(n)
    gamma = 1 + 1.0 / n
    m1 = polytrope_mass_radius(sol, 1.0, 1.0)["M"]
    m2 = polytrope_mass_radius(sol, 1.0, 2.0)["M"]
    assert abs(m2 / m1 - 2 ** ((3 * gamma - 4) / 2)) < 1e-10


def test_radius_shrinks_with_vanishing_pressure():
    """Monotone limit: the equilibrium radius shrinks as the central
    pressure is dialed to zero (zero pressure cannot hold any star up)."""
    sols = lane_emden_solve(1)
    radii = [polytrope_mass_radius(sols, kappa_eos=k, rho_c=1.0)["R"]
             for k in (1.0, 0.5, 0.1, 0.01)]
    assert all(r2 < r1 for r1, r2 in zip(radii, radii[1:]))
    assert radii[-1] < 0.2 * radii[0]
