"""Stellar-equilibrium quantities: interior pressure, compactness limit,
Lane-Emden polytropes.

Everything uses geometric units with G = 1 unless a different constant is
supplied explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq

from .errors import CompactnessError, NoSurfaceError

# Static stars require compactness 2M/R below this value for finite
# central pressure (the 3*sqrt(1-2M/R) = 1 root).
PRESSURE_LIMIT_COMPACTNESS = 8.0 / 9.0


@dataclass(frozen=True)
class StarConfig:
    """Uniform-density star of mass M and radius R (geometric units)."""

    M: float
    R: float
    G: float = 1.0

    def __post_init__(self):
        if self.M <= 0 or self.R <= 0:
            raise ValueError("mass and radius must be positive")
        if self.compactness >= 1.0:
            raise ValueError("configuration at or inside the horizon (2M/R >= 1)")

    @property
    def compactness(self):
        """2GM/R."""
        return 2.0 * self.G * self.M / self.R

    @property
    def rho0(self):
        """Uniform density 3M/(4 pi R^3)."""
        return 3.0 * self.M / (4.0 * math.pi * self.R ** 3)

    @staticmethod
    def from_compactness(compactness, R=1.0, G=1.0):
        return StarConfig(M=compactness * R / (2.0 * G), R=R, G=G)


def interior_pressure(cfg, r):
    """Pressure profile of the uniform-density interior solution.

    p(r) = rho0 * [sqrt(1-2Mr^2/R^3) - sqrt(1-2M/R)]
                / [3*sqrt(1-2M/R) - sqrt(1-2Mr^2/R^3)]

    Vanishes at the surface and reduces to the standard central-pressure
    formula at r = 0.  Raises CompactnessError at or beyond 2M/R = 8/9,
    where the central pressure diverges.
    """
    c = cfg.compactness
    if c >= PRESSURE_LIMIT_COMPACTNESS:
        raise CompactnessError(
            f"2M/R = {c:.6f} >= 8/9: no static interior solution")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > cfg.R):
        raise ValueError("radius must lie in [0, R]")
    inner = np.sqrt(1.0 - c * (r / cfg.R) ** 2)
    surf = math.sqrt(1.0 - c)
    p = cfg.rho0 * (inner - surf) / (3.0 * surf - inner)
    return p if p.ndim else float(p)


def buchdahl_check(cfg):
    """Classify a configuration against the compactness limit 2M/R < 8/9.

    Returns a dict with the compactness, a stability verdict, and the
    central pressure (None when unstable, where it has no finite value).
    """
    c = cfg.compactness
    stable = c < PRESSURE_LIMIT_COMPACTNESS
    p_c = float(interior_pressure(cfg, 0.0)) if stable else None
    return {"compactness": c, "stable": stable, "central_pressure": p_c}


@dataclass
class LaneEmdenSolution:
    """Dimensionless polytrope profile theta(xi) with surface metadata.

    ``complete`` is False when no surface was found within the xi budget
    (polytropic index >= 5); xi1 and mu1 are then None and the stored grid
    is the partial profile.
    """

    n: float
    xi: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray
    xi1: float | None
    mu1: float | None
    complete: bool

    def mass_integral_quadrature(self):
        """Evaluate integral of theta^n xi^2 dxi over [0, xi1] numerically.

        Independent cross-check of mu1 = -xi1^2 theta'(xi1).
        """
        if not self.complete:
            raise NoSurfaceError("no surface: mass integral undefined")
        th = np.clip(self.theta, 0.0, None)
        integrand = th ** self.n * self.xi ** 2
        return float(simpson(integrand, x=self.xi))

    def residual(self):
        """Max defect of theta'' + (2/xi) theta' + theta^n on the grid.

        theta'' is reconstructed from the stored profile with a five-point
        fourth-order stencil on the uniform part of the grid (the final,
        root-refined surface point is excluded), independent of the
        right-hand side used during integration.
        """
        xi, th, dth = self.xi[:-1], self.theta[:-1], self.dtheta[:-1]
        h = xi[2] - xi[1]
        d2 = (-th[:-4] + 16 * th[1:-3] - 30 * th[2:-2] + 16 * th[3:-1]
              - th[4:]) / (12.0 * h * h)
        xi_c, th_c, dth_c = xi[2:-2], th[2:-2], dth[2:-2]
        good = (xi_c > 0.05) & (th_c > 1e-6)
        defect = d2[good] + 2.0 / xi_c[good] * dth_c[good] \
            + th_c[good] ** self.n
        return float(np.abs(defect).max())


def _lane_emden_rhs(x, y, n):
    theta, dtheta = y
    return np.array([dtheta, -2.0 / x * dtheta - max(theta, 0.0) ** n])


def _rk4_span(x0, y0, dx, n, nsub=8):
    """Classical RK4 over [x0, x0+dx] in nsub substeps."""
    y = y0.copy()
    x = x0
    if dx == 0.0:
        return y
    h = dx / nsub
    for _ in range(nsub):
        k1 = _lane_emden_rhs(x, y, n)
        k2 = _lane_emden_rhs(x + h / 2, y + h / 2 * k1, n)
        k3 = _lane_emden_rhs(x + h / 2, y + h / 2 * k2, n)
        k4 = _lane_emden_rhs(x + h, y + h * k3, n)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        x += h
    return y


def lane_emden_solve(n, step=1e-3, xi_max=100.0):
    """Integrate the Lane-Emden equation to the first zero of theta.

    Series start theta = 1 - xi^2/6 + n xi^4/120 on [0, 1e-3] avoids the
    coordinate singularity at the origin; classical RK4 afterwards.  The
    zero crossing is bracketed by the march and refined by a root solve on
    sub-integrations, then mu1 = -xi1^2 theta'(xi1).

    For n >= 5 (or any profile without a zero within ``xi_max``) the
    partial profile is returned flagged incomplete.
    """
    if n < 0:
        raise ValueError("polytropic index must be >= 0")
    if step <= 0:
        raise ValueError("step must be positive")
    xi0 = 1e-3
    y = np.array([1.0 - xi0 ** 2 / 6.0 + n * xi0 ** 4 / 120.0,
                  -xi0 / 3.0 + n * xi0 ** 3 / 30.0])
    xs = [0.0, xi0]
    ths = [1.0, y[0]]
    dths = [0.0, y[1]]
    xi = xi0
    while xi < xi_max:
        h = min(step, xi_max - xi)
        y_new = _rk4_span(xi, y, h, n, nsub=1)
        if y_new[0] <= 0.0:
            root = brentq(lambda dx: _rk4_span(xi, y, dx, n)[0], 1e-16, h,
                          xtol=1e-15)
            y_surf = _rk4_span(xi, y, root, n)
            xi1 = xi + root
            xs.append(xi1)
            ths.append(0.0)
            dths.append(y_surf[1])
            return LaneEmdenSolution(
                n=n, xi=np.array(xs), theta=np.array(ths),
                dtheta=np.array(dths), xi1=xi1,
                mu1=-xi1 ** 2 * y_surf[1], complete=True)
        y = y_new
        xi += h
        xs.append(xi)
        ths.append(y[0])
        dths.append(y[1])
    return LaneEmdenSolution(n=n, xi=np.array(xs), theta=np.array(ths),
                             dtheta=np.array(dths), xi1=None, mu1=None,
                             complete=False)


def polytrope_mass_radius(solution, kappa_eos, rho_c, G=1.0):
    """Physical radius and mass of a polytrope from its dimensionless profile.

    R = alpha * xi1 with alpha^2 = kappa_eos*gamma/(4 pi G (gamma-1)) *
    rho_c^(gamma-2), gamma = 1 + 1/n, and

    M = 4 pi rho_c^((3 gamma - 4)/2) * |kappa_eos*gamma/(4 pi G (gamma-1))|^(3/2) * mu1.

    The incompressible case n = 0 is handled separately with rho = rho_c
    throughout: kappa_eos is then the ratio p_c/rho_c and
    M = (4 pi / 3) rho_c R^3.
    """
    if not solution.complete:
        raise NoSurfaceError(
            f"polytrope n={solution.n} has no finite surface")
    n = solution.n
    if n == 0:
        alpha = math.sqrt(kappa_eos / (4.0 * math.pi * G * rho_c))
        R = alpha * solution.xi1
        M = 4.0 * math.pi / 3.0 * rho_c * R ** 3
        return {"R": R, "M": M, "alpha": alpha}
    gamma = 1.0 + 1.0 / n
    scale = kappa_eos * gamma / (4.0 * math.pi * G * (gamma - 1.0))
    alpha = math.sqrt(scale) * rho_c ** ((gamma - 2.0) / 2.0)
    R = alpha * solution.xi1
    M = (4.0 * math.pi * rho_c ** ((3.0 * gamma - 4.0) / 2.0)
         * abs(scale) ** 1.5 * solution.mu1)
    return {"R": R, "M": M, "alpha": alpha}
