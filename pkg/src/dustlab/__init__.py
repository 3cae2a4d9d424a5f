"""dustlab: numerical laboratory for pressureless dust collapse and its
noise-controlled stochastic extension.

The deterministic model collapses to infinite density in finite comoving
time; switching on multiplicative white noise just before the blow-up
produces a diffusion whose behavior depends on the stochastic convention:
driftless (left-endpoint) dynamics never blow up and stay a true
martingale, while the midpoint convention blows up almost surely but only
after an infinite expected waiting time.  This package simulates both and
verifies every analytically checkable statement about them.
"""

__version__ = "0.1.0"

from .collapse import (CollapseState, ModelParams, collapse_phase,
                       collapse_time, cycloid_eval, density_from_phase,
                       density_from_phase_remaining, growth_coefficient,
                       growth_coefficient_sq, implicit_time_of_u,
                       kretschmann, newtonian_freefall_check,
                       phase_remaining, solve_density_ode)
from .equilibrium import (LaneEmdenSolution, StarConfig, buchdahl_check,
                          interior_pressure, lane_emden_solve,
                          polytrope_mass_radius)
from .sde import (Ensemble, FirstPassageSample, RngSpec, SamplePath,
                  first_passage_times, gbm_constant_sigma_moments,
                  gbm_transform, hitting_level, hybrid_drive,
                  ito_stratonovich_drift, quadratic_variation, simulate_ito,
                  simulate_stratonovich)
from .fokker_planck import (DensityGrid, MomentSeries, hermite_expansion,
                            kfp_moment_ode, kfp_solve, om_action,
                            stationary_density)
from .reports import AnalysisReport, CheckResult, QuadratureReport
