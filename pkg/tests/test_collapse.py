"""Deterministic collapse core: closed forms, ODE oracle, curvature."""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from dustlab import (CollapseState, ModelParams, collapse_phase,
                     collapse_time, cycloid_eval, implicit_time_of_u,
                     kretschmann, newtonian_freefall_check,
                     solve_density_ode)
from dustlab.collapse import (density_from_phase_remaining,
                              growth_coefficient, phase_remaining)
from dustlab.errors import ConfigError, DomainError, SingularStartWarning


def test_collapse_time_closed_form(params):
    t = collapse_time(params)
    assert abs(t - math.sqrt(3 * math.pi / 32)) < 1e-9


def test_collapse_time_unit_rate():
    # kappa = 1 requires rho0 = 3/(8 pi)
    p = ModelParams.create(G=1.0, rho0=3.0 / (8 * math.pi), eps_frac=0.01)
    assert abs(p.kappa - 1.0) < 1e-14
    assert abs(collapse_time(p) - math.pi / 2) < 1e-14


def test_collapse_time_density_scaling():
    p1 = ModelParams.create(rho0=1.0, eps_frac=0.01)
    p4 = ModelParams.create(rho0=4.0, eps_frac=0.01)
    assert abs(collapse_time(p4) - 0.5 * collapse_time(p1)) < 1e-14


def test_cycloid_endpoints(params):
    s0 = cycloid_eval(params, 0.0)
    assert s0.R == 1.0 and s0.t == 0.0 and s0.u == 1.0
    s1 = cycloid_eval(params, math.pi)
    assert s1.R == 0.0 and math.isinf(s1.u)
    assert abs(s1.t - collapse_time(params)) < 1e-15


def test_cycloid_midpoint_matches_implicit(params):
    s = cycloid_eval(params, math.pi / 2)
    assert abs(s.R - 0.5) < 1e-15
    assert abs(s.t - 0.444097545195018) < 1e-6
    assert abs(s.t - float(implicit_time_of_u(params, 2.0))) < 1e-12


def test_cycloid_domain(params):
    with pytest.raises(DomainError):
        cycloid_eval(params, -0.1)


def test_implicit_time_endpoints(params):
    assert implicit_time_of_u(params, 1.0) == 0.0
    # F(2) = 1/2 + pi/4
    t2 = float(implicit_time_of_u(params, 2.0))
    assert abs(t2 - (0.5 + math.pi / 4) / params.sqrt_kappa) < 1e-14
    t_big = float(implicit_time_of_u(params, 1e12))
    assert abs(t_big - collapse_time(params)) < 1e-5


def test_implicit_time_monotone(params):
    us = np.geomspace(1.0 + 1e-9, 1e9, 300)
    ts = implicit_time_of_u(params, us)
    assert np.all(np.diff(ts) > 0)


def test_phase_map_roundtrip():
    us = np.geomspace(1e-6, 1e6 - 1.0, 400) + 1.0
    back = density_from_phase_remaining(phase_remaining(us))
    assert np.max(np.abs(back - us) / us) < 1e-10
    # plain-phase roundtrip holds on the moderate range
    from dustlab.collapse import density_from_phase
    us = np.geomspace(1e-6, 999.0, 200) + 1.0
    back = density_from_phase(collapse_phase(us))
    assert np.max(np.abs(back - us) / us) < 1e-10


def test_density_ode_matches_implicit_inverse(params):
    traj = solve_density_ode(params, u0=1.0 + 1e-12, t_end=0.4)
    u_end = traj.u[-1]
    target = params.sqrt_kappa * 0.4
    u_ref = brentq(lambda u: float(collapse_phase(u)) - target, 1.0 + 1e-15,
                   1e6, xtol=1e-13, rtol=1e-15)
    assert abs(u_end - u_ref) / u_ref < 1e-6
    assert traj.max_phase_residual < 1e-8


def test_density_ode_blowup_translation(params):
    # starting at u0 = 2, the blow-up must land at t_star on the aligned clock
    traj = solve_density_ode(params, u0=2.0)
    assert traj.blown_up
    assert abs(traj.blowup_time - params.t_star) < 1e-3


def test_density_ode_fixed_step_order(params):
    # halving the step of the fixed-step integrator shrinks the error ~16x;
    # the reference is the implicit solution inverted by root finding
    t_end = 0.4
    t0 = float(implicit_time_of_u(params, 1.5))
    target = brentq(lambda u: float(collapse_phase(u))
                    - params.sqrt_kappa * t_end, 1.0 + 1e-15, 1e6,
                    xtol=1e-14, rtol=1e-15)
    errs = []
    for h in (2e-2, 1e-2):
        traj = solve_density_ode(params, u0=1.5, t_end=t_end, t0=t0,
                                 step_policy=("fixed", h))
        errs.append(abs(traj.u[-1] - target))
    ratio = errs[0] / errs[1]
    assert 10.0 < ratio < 25.0


def test_density_ode_singular_start_warns(params):
    with pytest.warns(SingularStartWarning):
        solve_density_ode(params, u0=1.0, t_end=0.01)


def test_density_ode_monotone(params):
    traj = solve_density_ode(params, u0=1.01, t_end=0.5)
    sel = traj.u < 1e9
    assert np.all(np.diff(traj.u[sel]) > 0)


def test_scale_factor_duality(params):
    """Co-integrated u and R equations keep u * R = 1."""
    sk = params.sqrt_kappa

    def rhs(t, y):
        u, R = y
        du = float(growth_coefficient(u, params.kappa))
        dR = -sk * math.sqrt(max(1.0 / R - 1.0, 0.0))
        return [du, dR]

    u0 = 1.0 + 1e-6
    t0 = float(implicit_time_of_u(params, u0))
    stop = lambda t, y: y[0] - 10.0
    stop.terminal = True
    sol = solve_ivp(rhs, (t0, params.t_star), [u0, 1.0 / u0], rtol=1e-12,
                    atol=1e-14, events=stop)
    prod = sol.y[0] * sol.y[1]
    assert np.max(np.abs(prod - 1.0)) < 1e-9


def test_energy_conservation_state(params):
    s = CollapseState.from_u(params, 0.1, 3.7)
    assert s.rho == params.rho0 * 3.7 ** 3  # definitional identity
    assert abs(s.rho * 3.7 ** -3 - params.rho0) < 1e-15


def test_kretschmann_values(params):
    k2 = params.kappa ** 2
    assert abs(float(kretschmann(params, 1.0)) - 4 * k2) < 1e-12
    assert abs(float(kretschmann(params, 2.0)) - 192 * k2) < 1e-9
    u = 1e8
    assert abs(float(kretschmann(params, u)) / u ** 6 - 4 * k2) < 1e-4
    us = np.geomspace(1.0, 1e6, 200)
    assert np.all(np.diff(kretschmann(params, us)) > 0)


def test_kretschmann_symbolic_oracle(params):
    """Eliminate the time derivatives symbolically and compare."""
    sympy = pytest.importorskip("sympy")
    u, k = sympy.symbols("u k", positive=True)
    R = 1 / u
    Rdot2 = k * (1 / R - 1)
    Rdd = -k / (2 * R ** 2)
    K = sympy.simplify((12 * R ** 2 * Rdd ** 2 + (k - Rdot2) ** 2) / R ** 4)
    for uv in (1.0, 2.0, 3.5, 10.0):
        expected = float(K.subs({u: uv, k: params.kappa}))
        assert abs(float(kretschmann(params, uv)) - expected) \
            < 1e-10 * expected


def test_newtonian_freefall(params):
    rep = newtonian_freefall_check(params)
    assert rep["error"] < 1e-4
    assert rep["cycloid_residual"] < 1e-8
    assert rep["initial_velocity"] == 0.0


def test_params_validation():
    with pytest.raises(ConfigError):
        ModelParams.create(G=1.0, rho0=1.0)  # no partition specifier
    with pytest.raises(ConfigError):
        ModelParams.create(eps=0.6, eps_frac=0.01)
    with pytest.raises(ConfigError):
        ModelParams.create(eps=-0.1)
    with pytest.raises(ConfigError):
        ModelParams(G=1.0, rho0=1.0, kappa=1.0, t_star=1.0, t_eps=2.0,
                    eps=-1.0)


def test_params_u_eps_roundtrip():
    p = ModelParams.create(u_eps=2.0)
    assert abs(p.u_eps - 2.0) < 1e-12
    assert abs(p.eps - (params_level := (math.pi / 2 - (0.5 + math.pi / 4))
                        / p.sqrt_kappa)) < 1e-15
    # the remaining deterministic time equals the hitting level of the
    # exact stochastic solution
    from dustlab.sde import hitting_level
    assert abs(hitting_level(p, 2.0) - p.eps) < 1e-15
