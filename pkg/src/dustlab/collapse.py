"""Deterministic collapse core for a pressureless, uniform dust star.

The collapse of a dust sphere with normalized initial radius R(0) = 1 is
governed by the scale-factor equation

    dR/dt = -sqrt(kappa) * sqrt(1/R - 1),     kappa = 8*pi*G*rho0/3,

or equivalently, in terms of the density function u = (rho/rho0)^(1/3) = 1/R,

    du/dt = sqrt(kappa) * u^2 * sqrt(u - 1).

Everything here is expressed through the monotone phase map

    F(u) = sqrt(u-1)/u + arctan(sqrt(u-1)),    F: [1, inf) -> [0, pi/2),

which satisfies F(u(t)) = sqrt(kappa)*t along any collapse trajectory and
provides an exact a-posteriori oracle for the integrators.  Total collapse
(u -> inf) happens at t* = pi / (2*sqrt(kappa)) = sqrt(3*pi/(32*G*rho0)).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import ConfigError, DomainError, SingularStartWarning

HALF_PI = math.pi / 2.0

# u0 = 1 sits on a square-root branch point of the growth coefficient; the
# default start is nudged off it by this amount.
SINGULAR_START_OFFSET = 1e-12


# ---------------------------------------------------------------------------
# model coefficients
# ---------------------------------------------------------------------------

def growth_coefficient(u, kappa):
    """Collapse rate du/dt = sqrt(kappa) * u^2 * sqrt(u-1).

    Doubles as the multiplicative-noise coefficient of the stochastic
    extension.  Accepts scalars or arrays; values below u=1 are treated
    as sitting on the boundary (coefficient 0).
    """
    u = np.asarray(u, dtype=float)
    x = np.maximum(u - 1.0, 0.0)
    return np.sqrt(kappa) * u * u * np.sqrt(x)


def growth_coefficient_sq(u, kappa):
    """Squared coefficient kappa * u^4 * (u-1), clipped to 0 below u=1."""
    u = np.asarray(u, dtype=float)
    return kappa * u ** 4 * np.maximum(u - 1.0, 0.0)


def growth_coefficient_prime(u, kappa):
    """d/du of the growth coefficient: sqrt(kappa) * u * (5u-4) / (2*sqrt(u-1))."""
    u = np.asarray(u, dtype=float)
    return np.sqrt(kappa) * u * (5.0 * u - 4.0) / (2.0 * np.sqrt(u - 1.0))


def stratonovich_drift(u, kappa):
    """Ito-equivalent drift of the midpoint-convention SDE: kappa*u^3*(5u-4)/2.

    This is the product of the coefficient and its derivative; the square
    roots cancel, so it is polynomial and finite for every u >= 0.
    """
    u = np.asarray(u, dtype=float)
    return kappa * u ** 3 * (5.0 * u - 4.0) / 2.0


def kretschmann(params, u):
    """Curvature invariant K(u) = 4*kappa^2 * u^4 * (u^2 - u + 1).

    Obtained by eliminating dR/dt and d2R/dt2 from the curvature scalar of
    the interior metric using the collapse equations; strictly increasing
    in u and diverging as u -> inf.
    """
    u = np.asarray(u, dtype=float)
    k2 = params.kappa ** 2
    return 4.0 * k2 * u ** 4 * (u * u - u + 1.0)


# ---------------------------------------------------------------------------
# phase map and inverses
# ---------------------------------------------------------------------------

def collapse_phase(u):
    """Phase F(u) = sqrt(u-1)/u + arctan(sqrt(u-1)) in [0, pi/2).

    F(u(t)) = sqrt(kappa)*t along the collapse; F(1) = 0 and F -> pi/2 as
    u -> inf.  For large u, use :func:`phase_remaining` instead: the value
    here saturates at pi/2 to within float spacing.
    """
    u = np.asarray(u, dtype=float)
    s = np.sqrt(np.maximum(u - 1.0, 0.0))
    return s / u + np.arctan(s)


def phase_remaining(u):
    """Complementary phase pi/2 - F(u), computed without cancellation.

    With x = 1/sqrt(u-1) this equals arctan(x) - x/(1+x^2); for small x
    the two terms cancel to O(x^3), so the tail is summed as the series
    sum_k (-1)^(k+1) * 2k/(2k+1) * x^(2k+1), keeping full relative
    accuracy for arbitrarily large u (the value decays like u^(-3/2)/6).
    """
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u).astype(float)
    out = np.empty_like(u)
    s2 = np.maximum(u - 1.0, 0.0)
    at_boundary = s2 == 0.0
    out[at_boundary] = HALF_PI
    direct = (~at_boundary) & (s2 <= 16.0)
    if direct.any():
        s = np.sqrt(s2[direct])
        out[direct] = np.arctan(1.0 / s) - s / u[direct]
    tail = s2 > 16.0
    if tail.any():
        x2 = 1.0 / s2[tail]
        x = np.sqrt(x2)
        acc = np.zeros_like(x)
        power = x * x2  # x^3
        sign = 1.0
        for k in range(1, 30):
            term = sign * (2.0 * k / (2.0 * k + 1.0)) * power
            acc += term
            if np.all(np.abs(term) <= 1e-18 * np.abs(acc)):
                break
            power *= x2
            sign = -sign
        out[tail] = acc
    return out[0] if scalar else out


def density_from_phase_remaining(gap):
    """Inverse of :func:`phase_remaining` on (0, pi/2].

    Monotone decreasing; well conditioned in relative terms for all gaps,
    which makes the round trip u -> pi/2 - F(u) -> u stable even for
    u ~ 1e6 and beyond.
    """
    gap = np.asarray(gap, dtype=float)
    scalar = gap.ndim == 0
    gap = np.atleast_1d(gap)
    if np.any(gap <= 0.0) or np.any(gap > HALF_PI + 1e-15):
        raise ValueError("phase gap must lie in (0, pi/2]")
    out = np.empty_like(gap)
    for i, g in enumerate(gap):
        if g >= HALF_PI:
            out[i] = 1.0
            continue
        # asymptotic seed u ~ (6g)^(-2/3) for small gaps, then bracketed root
        hi = max(4.0, 4.0 * (6.0 * g) ** (-2.0 / 3.0))
        out[i] = brentq(lambda v: phase_remaining(v) - g, 1.0 + 1e-15, hi,
                        xtol=1e-300, rtol=8.881784197001252e-16, maxiter=200)
    return out[0] if scalar else out


def density_from_phase(phase):
    """Inverse of :func:`collapse_phase` on [0, pi/2)."""
    phase = np.asarray(phase, dtype=float)
    if np.any(phase < 0.0) or np.any(phase >= HALF_PI):
        raise ValueError("phase must lie in [0, pi/2)")
    return density_from_phase_remaining(HALF_PI - phase)


# ---------------------------------------------------------------------------
# model parameters and states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Physical constants plus the deterministic/stochastic time partition.

    ``t_eps`` is the switch-on time of the noise; ``eps = t_star - t_eps``
    is the remaining deterministic time that the noise replaces.
    """

    G: float
    rho0: float
    kappa: float
    t_star: float
    t_eps: float
    eps: float

    def __post_init__(self):
        if self.G <= 0 or self.rho0 <= 0 or self.kappa <= 0:
            raise ConfigError("G, rho0 and kappa must be positive")
        if not (0.0 < self.t_eps < self.t_star):
            raise ConfigError("switch-on time must satisfy 0 < t_eps < t_star")

    @property
    def sqrt_kappa(self):
        return math.sqrt(self.kappa)

    @property
    def u_eps(self):
        """Density function value at the switch-on time."""
        return float(density_from_phase_remaining(self.eps * self.sqrt_kappa))

    @staticmethod
    def create(G=1.0, rho0=1.0, eps=None, t_eps=None, u_eps=None, eps_frac=None):
        """Build parameters from one of eps, t_eps, u_eps or eps_frac.

        Exactly one partition specifier must be given.  ``u_eps`` fixes the
        partition so the deterministic leg ends at that density value.
        """
        given = [x is not None for x in (eps, t_eps, u_eps, eps_frac)]
        if sum(given) != 1:
            raise ConfigError("specify exactly one of eps, t_eps, u_eps, eps_frac")
        kappa = 8.0 * math.pi * G * rho0 / 3.0
        t_star = HALF_PI / math.sqrt(kappa)
        if eps_frac is not None:
            eps = eps_frac * t_star
        if u_eps is not None:
            eps = float(phase_remaining(u_eps)) / math.sqrt(kappa)
        if t_eps is not None:
            eps = t_star - t_eps
        return ModelParams(G=G, rho0=rho0, kappa=kappa, t_star=t_star,
                           t_eps=t_star - eps, eps=eps)


@dataclass(frozen=True)
class CollapseState:
    """One point of a collapse trajectory (comoving proper time)."""

    t: float
    R: float
    u: float
    rho: float

    @staticmethod
    def from_u(params, t, u):
        R = math.inf if u == 0 else 1.0 / u
        return CollapseState(t=t, R=R, u=u, rho=params.rho0 * u ** 3)


@dataclass
class DensityTrajectory:
    """Accepted states of the density-function ODE plus blow-up metadata."""

    t: np.ndarray
    u: np.ndarray
    params: ModelParams
    blown_up: bool = False
    blowup_time: float | None = None
    max_phase_residual: float = 0.0
    stalled: bool = False  # integrator died inside the blow-up spike

    def states(self):
        return [CollapseState.from_u(self.params, float(ti), float(ui))
                for ti, ui in zip(self.t, self.u)]

    @property
    def R(self):
        return 1.0 / self.u


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def collapse_time(params):
    """Total comoving collapse time pi/(2*sqrt(kappa)) = sqrt(3*pi/(32*G*rho0))."""
    return HALF_PI / params.sqrt_kappa


def cycloid_eval(params, zeta):
    """Evaluate the closed-form cycloid solution at parameter angle zeta.

    R = (1 + cos(zeta))/2 and t = (zeta + sin(zeta)) / (2*sqrt(kappa)) for
    zeta in [0, pi]; zeta = pi is total collapse (u flagged infinite).
    """
    if not 0.0 <= zeta <= math.pi:
        raise DomainError(f"cycloid angle must lie in [0, pi], got {zeta}")
    R = 0.5 * (1.0 + math.cos(zeta))
    t = 0.5 * (zeta + math.sin(zeta)) / params.sqrt_kappa
    u = math.inf if R == 0.0 else 1.0 / R
    rho = math.inf if R == 0.0 else params.rho0 * u ** 3
    return CollapseState(t=t, R=R, u=u, rho=rho)


def implicit_time_of_u(params, u):
    """Time at which the collapse reaches density function value u.

    t(u) = F(u)/sqrt(kappa); monotone increasing with t(1) = 0 and
    t(inf) = t_star.
    """
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 1.0):
        raise ValueError("density function is defined for u >= 1")
    return collapse_phase(u_arr) / params.sqrt_kappa


def solve_density_ode(params, u0=1.0 + SINGULAR_START_OFFSET, t_end=None,
                      step_policy="adaptive", t0=None, u_detect=1e9,
                      rtol=1e-10, atol=1e-12):
    """Integrate du/dt = sqrt(kappa)*u^2*sqrt(u-1) with blow-up detection.

    ``step_policy`` is either "adaptive" (embedded 4(5) pair) or a tuple
    ("fixed", h) for a fixed-step classical RK4 (useful for order checks).
    The clock is aligned with the implicit solution: if ``t0`` is None it
    is set to F(u0)/sqrt(kappa), so F(u(t)) = sqrt(kappa)*t holds exactly
    along the trajectory; each accepted state is verified against that
    oracle and the maximum residual is stored on the result.

    Blow-up is declared when u exceeds ``u_detect``.  If the stepper stalls
    inside the terminal spike (step size underflow with u already huge) the
    stall time is reported as the blow-up time; the remaining true time at
    that point is far below any reported tolerance.
    """
    if u0 < 1.0:
        raise ValueError("u0 must be >= 1")
    if u0 == 1.0:
        warnings.warn("u0 = 1 is a square-root branch point; nudging start to "
                      f"1 + {SINGULAR_START_OFFSET}", SingularStartWarning)
        u0 = 1.0 + SINGULAR_START_OFFSET
    sk = params.sqrt_kappa
    if t0 is None:
        t0 = float(collapse_phase(u0)) / sk
    if t_end is None:
        t_end = params.t_star * 1.05

    rhs = lambda t, y: [float(growth_coefficient(y[0], params.kappa))]

    if step_policy == "adaptive":
        # integrate w = sqrt(u-1): dw/dt = sqrt(kappa) (1+w^2)^2 / 2 is
        # smooth through the branch point, so the error control holds the
        # phase accuracy down to u0 = 1 + 1e-12 starts
        sk_half = 0.5 * sk
        rhs_w = lambda t, y: [sk_half * (1.0 + y[0] * y[0]) ** 2]
        w_detect = math.sqrt(u_detect - 1.0)
        hit = lambda t, y: y[0] - w_detect
        hit.terminal = True
        hit.direction = 1
        w0 = math.sqrt(u0 - 1.0)
        sol = solve_ivp(rhs_w, (t0, t_end), [w0], method="RK45",
                        rtol=rtol, atol=1e-14, events=hit)
        t = sol.t
        u = 1.0 + sol.y[0] ** 2
        blown = len(sol.t_events[0]) > 0
        stalled = sol.status == -1
        blowup_time = None
        if blown:
            blowup_time = float(sol.t_events[0][0])
        elif stalled and u[-1] > 1e6:
            # step-size underflow inside the spike: effectively blown up
            blown, blowup_time = True, float(t[-1])
    elif isinstance(step_policy, tuple) and step_policy[0] == "fixed":
        h = float(step_policy[1])
        ts, us = [t0], [u0]
        t, u = t0, u0
        blown, stalled, blowup_time = False, False, None
        while t < t_end - 1e-15:
            hh = min(h, t_end - t)
            k1 = rhs(t, [u])[0]
            k2 = rhs(t + hh / 2, [u + hh / 2 * k1])[0]
            k3 = rhs(t + hh / 2, [u + hh / 2 * k2])[0]
            k4 = rhs(t + hh, [u + hh * k3])[0]
            u = u + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t + hh
            ts.append(t)
            us.append(u)
            if u > u_detect:
                blown, blowup_time = True, t
                break
        t, u = np.array(ts), np.array(us)
    else:
        raise ConfigError(f"unknown step policy: {step_policy!r}")

    traj = DensityTrajectory(t=t, u=u, params=params, blown_up=blown,
                             blowup_time=blowup_time, stalled=stalled
                             if step_policy == "adaptive" else False)
    finite = u < 1e12
    res = np.abs(collapse_phase(u[finite]) - sk * t[finite])
    traj.max_phase_residual = float(res.max()) if res.size else 0.0
    return traj


def newtonian_freefall_check(params, r_floor=1e-9):
    """Integrate the free-fall radius equation and compare to the closed form.

    dr/dt = -sqrt(kappa)*sqrt(1/r - 1) from r(0) = 1; the shell reaches the
    floor at the free-fall time, which must equal pi/(2*sqrt(kappa)).
    Returns a dict with the measured time, the closed form, the error, and
    the maximum residual of the cycloid in the radius equation.
    """
    sk = params.sqrt_kappa
    start = 1.0 - 1e-10

    def rhs(t, y):
        r = max(min(y[0], 1.0), r_floor)
        return [-sk * math.sqrt(max(1.0 / r - 1.0, 0.0))]

    floor_hit = lambda t, y: y[0] - r_floor
    floor_hit.terminal = True
    floor_hit.direction = -1
    sol = solve_ivp(rhs, (0.0, 1.2 * params.t_star), [start], method="RK45",
                    rtol=1e-10, atol=1e-13, events=floor_hit)
    if len(sol.t_events[0]):
        t_hit = float(sol.t_events[0][0])
    else:
        t_hit = float(sol.t[-1])
    # remaining fall time from the floor, via the phase map
    t_rest = float(phase_remaining(1.0 / r_floor)) / sk
    t_ff = t_hit + t_rest

    zeta = np.linspace(0.01, math.pi - 0.01, 512)
    r = 0.5 * (1.0 + np.cos(zeta))
    drdt = -sk * np.sin(zeta) / (1.0 + np.cos(zeta))
    residual = np.abs(drdt + sk * np.sqrt(1.0 / r - 1.0))

    closed = collapse_time(params)
    return {
        "freefall_time": t_ff,
        "closed_form": closed,
        "error": abs(t_ff - closed),
        "cycloid_residual": float(residual.max()),
        "initial_velocity": 0.0,
    }
