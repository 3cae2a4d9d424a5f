"""Verification-suite behavior: quadrature tests, ensemble suites,
first-passage statistics."""

import math

import numpy as np
import pytest

from dustlab import ModelParams
from dustlab.analysis import (classify_ladder, collapse_coefficient_fn,
                              count_upcrossings, dds_time_change_check,
                              delbaen_shirakawa_test, doob_maximal_suite,
                              engelbert_schmidt_test,
                              exponential_martingale_mean_check, feller_test,
                              first_passage_cdf, first_passage_density,
                              first_passage_suite, kretschmann_expectation,
                              lyapunov_suite, martingale_suite,
                              median_hitting_time, moment_suite, panel_quad,
                              scale_function_exits, stratonovich_drift_fn,
                              upcrossing_suite, continuity_suite,
                              exit_probability_mc)
from dustlab.errors import InsufficientData, InsufficientPaths
from dustlab.sde import RngSpec, simulate_ito

SEED = 515151


# ---------------------------------------------------------------------------
# quadrature machinery
# ---------------------------------------------------------------------------

def ds_antiderivative(x):
    """Exact antiderivative of 1/(x^3 (x-1)) for x > 1."""
    return math.log(x - 1.0) - math.log(x) + 1.0 / x + 1.0 / (2 * x * x)


def test_panel_quad_wide_range():
    val, _ = panel_quad(lambda x: 1.0 / (x ** 3 * (x - 1.0)), 1.001, 1e6)
    exact = ds_antiderivative(1e6) - ds_antiderivative(1.001)
    assert abs(val - exact) < 1e-9


def test_classify_ladder():
    x = np.array([1e2, 1e3, 1e4, 1e5])
    assert classify_ladder(x, 3.0 + 2.0 * np.log(x))[0] == "diverges-log"
    assert classify_ladder(x, 1.0 + 0.5 * x)[0] == "diverges-linear"
    cls, lim = classify_ladder(x, np.array([4.9, 4.99999, 5.0, 5.0]))
    assert cls == "converges" and abs(lim - 5.0) < 1e-12


def test_delbaen_shirakawa_collapse(params):
    """Ladder values match the endpoint antiderivative; verdict martingale.

    The exact value at delta = 1e-3 is 5.410752 (the small-delta asymptote
    -1.5 - ln(delta) sits 3*delta below it); at delta = 1e-6 the asymptote
    is exact to 3e-6 and the constant -1.5 is recovered.
    """
    coef = collapse_coefficient_fn(params)
    rep = delbaen_shirakawa_test(coef, deltas=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5,
                                               1e-6))
    assert rep.verdict == "true martingale"
    assert rep.classification == "diverges-log"
    k = params.kappa
    for delta, value in zip(rep.cutoffs, rep.values):
        d = 1.0 / delta
        exact = (ds_antiderivative(1e6) - ds_antiderivative(1.0 + d)) / k
        assert abs(value - exact) * k < 1e-3
    # constant recovery at the smallest delta
    c_est = rep.values[-1] * k + math.log(1e-6)
    assert abs(c_est - (-1.5)) < 1e-3


def test_delbaen_shirakawa_exponential_examples():
    shrinking = delbaen_shirakawa_test(lambda x: np.exp(-x), floor=1.0,
                                       upper_ladder=(4.0, 6.0, 8.0, 10.0),
                                       name="exp-decaying")
    assert shrinking.verdict == "true martingale"
    growing = delbaen_shirakawa_test(lambda x: np.exp(x), floor=1.0,
                                     upper_ladder=(4.0, 8.0, 12.0, 16.0),
                                     name="exp-growing")
    assert growing.verdict == "not a true martingale"
    assert growing.classification == "converges"


def test_engelbert_schmidt_collapse(params):
    coef = collapse_coefficient_fn(params)
    rep = engelbert_schmidt_test(coef, (1.001, 1e4), name="collapse")
    assert rep.passed
    assert "exists" in rep.notes[0]


def test_engelbert_schmidt_linear_zero():
    rep = engelbert_schmidt_test(lambda x: x - 5.0, (1.0, 10.0),
                                 box_check=False)
    ck = rep.checks[0]
    assert ck.passed  # S = {5} inside N = {5}
    assert "5.0" in ck.note


def test_engelbert_schmidt_holder_exponents():
    # integrable inverse square (exponent 0.1): no singular point
    rep = engelbert_schmidt_test(lambda x: abs(x - 5.0) ** 0.1, (1.0, 10.0),
                                 box_check=False)
    assert rep.passed
    # exponent 0.6 forced nonzero at the dip: singular but not a zero
    rep2 = engelbert_schmidt_test(
        lambda x: abs(x - 5.0) ** 0.6 + 1e-6, (1.0, 10.0), box_check=False)
    assert not rep2.passed


def test_feller_collapse_driftless(params):
    coef = collapse_coefficient_fn(params)
    rep = feller_test(coef, 2.0)
    assert rep.verdict == "no explosion"
    # chord slopes stable within 1%
    drift = float(rep.notes[0].split()[-1])
    assert drift < 0.01
    # the inner integral converges to the closed-form constant
    inner, _ = panel_quad(lambda x: 1.0 / coef(x) ** 2, 2.0, 1e9)
    assert abs(inner * params.kappa - 0.026480513893278622) < 1e-6


def test_feller_midpoint_drift_explodes(params):
    coef = collapse_coefficient_fn(params)
    drift = stratonovich_drift_fn(params)
    rep = feller_test(coef, 2.0, drift=drift)
    assert rep.verdict == "explodes"
    # doubling the cutoff changes the reciprocal integral below 1e-3
    v1, _ = panel_quad(lambda x: 1.0 / drift(x), 2.0, 1e4)
    v2, _ = panel_quad(lambda x: 1.0 / drift(x), 2.0, 2e4)
    assert abs(v2 - v1) < 1e-3


def test_feller_riccati_example():
    rep = feller_test(lambda x: 1.0 + x * x, 0.0, name="riccati")
    assert rep.verdict == "no explosion"
    assert rep.classification == "diverges-linear"


def test_scale_function_exits_zero_drift():
    res = scale_function_exits(lambda x: x, (2.0, 6.0), 3.0)
    assert res["p_exit_high"] == 0.25
    assert scale_function_exits(lambda x: x, (2.0, 6.0), 2.0)["p_exit_high"] \
        == 0.0


def test_scale_function_exits_with_drift():
    """Constant-coefficient positive drift raises the upper-exit odds."""
    res = scale_function_exits(lambda x: 1.0, (0.0, 2.0), 1.0,
                               drift=lambda x: 1.0)
    # dX = dt + dB: P(hit 2 first from 1) = (1 - e^-2)/(1 - e^-4)
    expected = (1 - math.exp(-2.0)) / (1 - math.exp(-4.0))
    assert abs(res["p_exit_high"] - expected) < 1e-6


def test_exit_probability_mc(params):
    mc = exit_probability_mc(params, (2.0, 6.0), 3.0, 4000, RngSpec(SEED))
    assert abs(mc["p_exit_high"] - 0.25) <= 3 * mc["stderr"]


# ---------------------------------------------------------------------------
# ensemble suites
# ---------------------------------------------------------------------------

def test_martingale_suite_passes(main_ens):
    rep = martingale_suite(main_ens)
    assert rep.verdict == "pass"


def test_martingale_suite_detects_drift(params):
    ens = simulate_ito(params, u_eps=2.0, n_paths=2000, dt=1e-5,
                       horizon=0.02, cap=16.0, rng=RngSpec(SEED + 1),
                       extra_drift=30.0)
    rep = martingale_suite(ens)
    assert rep.verdict == "fail"


def test_martingale_suite_needs_paths(params):
    ens = simulate_ito(params, u_eps=2.0, n_paths=50, dt=1e-4, horizon=0.01,
                       cap=16.0, rng=RngSpec(SEED + 2))
    with pytest.raises(InsufficientPaths):
        martingale_suite(ens)


def test_moment_suite(main_ens):
    rep = moment_suite(main_ens)
    assert rep.verdict == "pass"
    names = {c.name for c in rep.checks}
    assert {"moment-bound-p2", "moment-bound-p3", "moment-bound-p4",
            "isometry-p2", "p1-reduces-to-mean",
            "log-norm-interpolation"} <= names
    assert any("blows up" in n for n in rep.notes)


def test_doob_suite(main_ens):
    rep = doob_maximal_suite(main_ens)
    assert rep.verdict == "pass"


def test_doob_vacuous_event(main_ens):
    """Impossible QV conditioning gives an empty event: vacuous pass."""
    rep = doob_maximal_suite(main_ens, bernstein=((2.0, 1e-12),))
    ck = [c for c in rep.checks if c.name.startswith("bernstein")][0]
    assert ck.passed and ck.measured == 0.0


def test_upcrossing_suite(main_ens):
    rep = upcrossing_suite(main_ens, (2.0, 2.2))
    assert rep.verdict == "pass"
    by_name = {c.name: c for c in rep.checks}
    assert by_name["upcrossing-bound"].bound <= 21.0
    assert by_name["narrow-cell-positive"].measured > 0


def test_upcrossing_counter():
    v = np.array([1.0, 3.0, 0.5, 4.0, 0.2, 5.0, 2.0])
    assert count_upcrossings(v, 1.0, 2.5) == 2
    assert count_upcrossings(np.full(10, 1.5), 1.0, 2.0) == 0


def test_lyapunov_suite(params, main_ens):
    rep = lyapunov_suite(params, main_ens)
    assert rep.verdict == "pass"
    at2 = [c for c in rep.checks if c.name == "generator-at-2"][0]
    assert abs(at2.measured + 8 * params.kappa / 9) < 1e-12


def test_continuity_suite(params, main_ens):
    rep = continuity_suite(main_ens, params=params)
    assert rep.verdict == "pass"
    by_name = {c.name: c for c in rep.checks}
    assert abs(by_name["increment-scaling"].measured - 1.0) <= 0.1
    assert abs(by_name["deterministic-leg-scaling"].measured - 2.0) <= 0.05


def test_kretschmann_suite(main_ens):
    rep = kretschmann_expectation(main_ens)
    assert rep.verdict == "pass"


def test_kretschmann_noise_off(params):
    """Degenerate ensemble: the expectation equals the deterministic value."""
    from dustlab import kretschmann
    from dustlab.sde import hybrid_drive
    path = hybrid_drive(params, noise_scale=0.0, horizon=params.t_eps + 0.01,
                        rng=RngSpec(1))
    t_q = params.t_eps + 0.005
    i = int(np.searchsorted(path.t, t_q))
    u_det = path.u[i]
    from dustlab.collapse import density_from_phase
    u_ref = float(density_from_phase(params.sqrt_kappa * path.t[i]))
    assert abs(float(kretschmann(params, u_det))
               / float(kretschmann(params, u_ref)) - 1.0) < 1e-6


def test_dds_suite(full_ens):
    rep = dds_time_change_check(full_ens)
    assert rep.verdict == "pass"
    n = int(rep.inputs_digest is not None)  # structural smoke
    by_name = {c.name: c for c in rep.checks}
    assert 0.95 <= by_name["variance"].measured <= 1.05
    assert abs(by_name["excess-kurtosis"].measured) < 0.15


def test_dds_pure_brownian(params):
    ens = simulate_ito(params, u_eps=2.0, n_paths=300, dt=1e-5, horizon=0.05,
                       cap=1e6, rng=RngSpec(SEED + 3), store="full",
                       store_stride=5, psi_override=1.0)
    rep = dds_time_change_check(ens, target_increments=40000,
                                min_pooled=5000)
    assert rep.verdict == "pass"


def test_dds_rejects_deterministic(params):
    ens = simulate_ito(params, u_eps=2.0, n_paths=100, dt=1e-4, horizon=0.01,
                       cap=1e6, rng=RngSpec(SEED + 4), store="full",
                       store_stride=1, noise_scale=0.0)
    with pytest.raises(InsufficientData):
        dds_time_change_check(ens)


def test_exponential_martingale_mean(full_ens):
    rep = exponential_martingale_mean_check(full_ens)
    assert rep.verdict == "pass"


# ---------------------------------------------------------------------------
# first passage
# ---------------------------------------------------------------------------

def test_first_passage_closed_forms(params):
    from dustlab.sde import hitting_level
    L = hitting_level(params, 2.0)
    assert abs(first_passage_cdf(np.asarray([10.0]), L)[0] - 0.9751) < 1e-4
    assert abs(median_hitting_time(L) - 2.198109 * L * L) < 1e-6 * L * L
    # the density is the derivative of the law: relative defect below 1e-6
    ts = np.geomspace(1e-4, 10.0, 200)
    h = 1e-5 * ts
    dcdf = (first_passage_cdf(ts + h, L) - first_passage_cdf(ts - h, L)) \
        / (2 * h)
    dens = first_passage_density(ts, L)
    sel = dens > 1e-300
    assert np.max(np.abs(dcdf[sel] / dens[sel] - 1.0)) < 1e-6


def test_first_passage_density_normalized(params):
    from dustlab.sde import hitting_level
    from scipy import integrate as sint
    L = hitting_level(params, 2.0)
    val, _ = sint.quad(lambda t: first_passage_density(np.asarray([t]), L)[0],
                       0.0, np.inf, limit=200)
    assert abs(val - 1.0) < 1e-8


def test_first_passage_suite(params, hitting_sample):
    rep = first_passage_suite(params, 2.0, hitting_sample)
    assert rep.verdict == "pass"
    by_name = {c.name: c for c in rep.checks}
    assert by_name["ks-distance"].measured < 0.02
    assert abs(by_name["censored-mean-exponent"].measured - 0.5) <= 0.1


def test_immediate_blowup_at_large_start(params):
    """L -> 0 as u_eps grows: blow-up is immediate in the limit."""
    from dustlab.sde import hitting_level
    levels = [hitting_level(params, u) for u in (1e2, 1e4, 1e6)]
    assert all(l2 < l1 for l1, l2 in zip(levels, levels[1:]))
    assert first_passage_cdf(np.asarray([1e-6]), levels[-1])[0] > 0.999
