"""Verification suites for the stochastic collapse model.

Each suite consumes an ensemble (or runs a deterministic quadrature) and
returns an :class:`~dustlab.reports.AnalysisReport` whose checks pair every
Monte-Carlo estimate with its standard error and the bound it was tested
against.  Martingale statements are tested on the stopped (capped) process;
growth constants are cap-relative, so exponential bounds are compared in
log space.

Two-sided statistical checks pass within 4 standard errors of the target;
one-sided bound checks allow a 3-standard-error margin on the estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import erfc, erfcinv

from .collapse import (ModelParams, collapse_phase, growth_coefficient,
                       growth_coefficient_sq, kretschmann, phase_remaining,
                       solve_density_ode)
from .errors import InsufficientData, InsufficientPaths, QuadratureError
from .reports import AnalysisReport, QuadratureReport, digest_inputs
from .sde import (Ensemble, FirstPassageSample, RngSpec, first_passage_times,
                  hitting_level, growth_coefficient as _gc)  # noqa: F401


def collapse_coefficient_fn(params):
    """The model's noise coefficient as a plain callable of u."""
    return lambda u: growth_coefficient(u, params.kappa)


def stratonovich_drift_fn(params):
    from .collapse import stratonovich_drift
    return lambda u: stratonovich_drift(u, params.kappa)


def linear_growth_constant(params, cap):
    """Interval constant K with coef(u)^2 <= K u^2 on [1, cap].

    K = max over the interval of kappa u^2 (u-1) = kappa cap^2 (cap-1);
    all moment bounds below are relative to this cap-dependent constant.
    """
    return params.kappa * cap ** 2 * (cap - 1.0)


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------

def panel_quad(f, a, b, panels_per_decade=4, min_panels=8):
    """Adaptive quadrature over [a, b] split into logarithmic panels.

    Wide-range integrands (many decades) defeat a single quad call; each
    log panel is integrated separately and panel failures are surfaced as
    QuadratureError.
    """
    if not (b > a > 0):
        raise ValueError("need 0 < a < b")
    n = max(min_panels, int(math.ceil(
        math.log10(b / a) * panels_per_decade)) + 1)
    edges = np.geomspace(a, b, n + 1)
    total, err = 0.0, 0.0
    import warnings as _warnings
    for lo, hi in zip(edges[:-1], edges[1:]):
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, e = integrate.quad(f, lo, hi, limit=200)
        total += val
        err += abs(e)
    if not math.isfinite(total):
        raise QuadratureError("panel quadrature produced a non-finite value")
    return total, err


def classify_ladder(cutoffs, values, r2_threshold=0.999, rel_tol=1e-6):
    """Deterministic divergence classification of a cutoff ladder.

    Convergence is declared when the tail increments shrink to a vanishing
    fraction of the value.  Divergent ladders are fitted by least squares
    against affine-in-log and affine-in-cutoff models; the better model
    wins when its R^2 exceeds the threshold, ties are inconclusive.
    Returns (classification, fitted) where fitted is the limit (converged)
    or the leading growth coefficient.
    """
    x = np.asarray(cutoffs, dtype=float)
    v = np.asarray(values, dtype=float)
    dv = np.abs(np.diff(v))
    scale = max(abs(v[-1]), 1e-300)
    if dv[-1] <= rel_tol * scale and dv[-1] <= dv[0] + 1e-300:
        return "converges", float(v[-1])

    def r2(design):
        coef, res, *_ = np.linalg.lstsq(design, v, rcond=None)
        fit = design @ coef
        ss_res = float(np.sum((v - fit) ** 2))
        ss_tot = float(np.sum((v - v.mean()) ** 2))
        return (1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0), coef

    ones = np.ones_like(x)
    r2_log, c_log = r2(np.column_stack([ones, np.log(x)]))
    r2_lin, c_lin = r2(np.column_stack([ones, x]))
    if r2_log > r2_lin and r2_log > r2_threshold:
        return "diverges-log", float(c_log[1])
    if r2_lin > r2_log and r2_lin > r2_threshold:
        return "diverges-linear", float(c_lin[1])
    if max(r2_log, r2_lin) > r2_threshold and abs(r2_log - r2_lin) < 1e-12:
        return "inconclusive", None
    return "inconclusive", None


# ---------------------------------------------------------------------------
# martingale classification quadratures
# ---------------------------------------------------------------------------

def delbaen_shirakawa_test(coef, floor=1.0, deltas=(1e-1, 1e-2, 1e-3, 1e-4,
                                                    1e-5, 1e-6),
                           upper=1e6, upper_ladder=None, name="coefficient"):
    """Integral test for the true-martingale property of a driftless SDE.

    Computes I = integral of x / coef(x)^2 over the state space; the
    diffusion is a true martingale exactly when I diverges.  Divergence at
    the lower endpoint is probed by shrinking ``deltas`` above the floor;
    divergence at infinity by an increasing ``upper_ladder``.
    """
    f = lambda x: x / coef(x) ** 2
    report = QuadratureReport(integrand=f"x/{name}(x)^2",
                              domain=f"({floor}, {upper}]")
    if upper_ladder is not None:
        lo = floor + (deltas[-1] if deltas else 1e-6)
        for U in upper_ladder:
            val, _ = panel_quad(f, lo, U)
            report.cutoffs.append(U)
            report.values.append(val)
        cls, fitted = classify_ladder(report.cutoffs, report.values)
    else:
        for d in sorted(deltas, reverse=True):
            val, _ = panel_quad(f, floor + d, upper)
            report.cutoffs.append(1.0 / d)
            report.values.append(val)
        cls, fitted = classify_ladder(report.cutoffs, report.values)
    report.classification = cls
    report.fitted = fitted
    # the martingale verdict follows divergence of the (monotone) ladder
    # even when its growth shape matches none of the fitted models
    v = np.asarray(report.values)
    diverging = cls.startswith("diverges") or (
        cls == "inconclusive" and np.all(np.diff(v) > 0)
        and v[-1] > 2.0 * abs(v[0]) + 1e-12)
    if cls == "converges":
        report.verdict = "not a true martingale"
    elif diverging:
        report.verdict = "true martingale"
    else:
        report.verdict = "inconclusive"
    return report


def engelbert_schmidt_test(coef, interval, n_grid=2001, zero_tol=1e-12,
                           window_fracs=(1e-1, 1e-2, 1e-3, 1e-4),
                           box_check=True, name="coefficient"):
    """Existence test for weak non-exploding solutions of dX = coef(X) dB.

    Builds the zero set N = {coef = 0} and the singular set S of points
    whose neighborhoods make 1/coef^2 non-integrable, both on a grid; a
    weak non-exploding solution exists exactly when S is contained in N.
    Candidate singular points are the local minima of |coef|; local
    integrability is probed by a shrinking-core quadrature ladder.
    """
    from scipy.optimize import brentq as _brentq, minimize_scalar

    a, b = interval
    grid = np.linspace(a, b, n_grid)
    raw = np.asarray([coef(x) for x in grid], dtype=float)
    vals = np.abs(raw)
    scale = vals.max()
    report = AnalysisReport(suite="engelbert-schmidt",
                            inputs_digest=digest_inputs(interval=interval,
                                                        name=name))
    zeros = []
    candidates = []
    # sign changes refine to exact zeros
    for i in np.where(np.sign(raw[:-1]) * np.sign(raw[1:]) < 0)[0]:
        x0 = float(_brentq(coef, grid[i], grid[i + 1], xtol=1e-12))
        zeros.append(x0)
        candidates.append(x0)
    # dips of |coef| refine to their sub-grid minimum
    for i in range(1, n_grid - 1):
        if vals[i] <= vals[i - 1] and vals[i] <= vals[i + 1] \
                and vals[i] < 0.2 * scale:
            res = minimize_scalar(lambda x: abs(coef(x)),
                                  bounds=(grid[i - 1], grid[i + 1]),
                                  method="bounded",
                                  options={"xatol": 1e-12})
            x0, v0 = float(res.x), float(res.fun)
            if v0 <= zero_tol * scale:
                zeros.append(x0)
            if v0 < 0.05 * scale:
                candidates.append(x0)
    zeros = sorted(set(round(z, 9) for z in zeros))
    candidates = sorted(set(round(c, 9) for c in candidates))
    singular = []
    m = 0.25 * (b - a)
    inv_sq = lambda s: 1.0 / coef(s) ** 2
    for x0 in candidates:
        ladder = []
        for frac in window_fracs:
            c = frac * m
            total = 0.0
            lo, hi = max(a, x0 - m), x0 - c
            if hi > lo:
                total += panel_quad(inv_sq, lo, hi)[0]
            lo, hi = x0 + c, min(b, x0 + m)
            if hi > lo:
                total += panel_quad(inv_sq, lo, hi)[0]
            ladder.append(total)
        # integrable neighborhoods saturate: successive increments of the
        # shrinking-core ladder collapse geometrically.  A sustained
        # increment ratio marks a non-integrable (singular) point.
        d1 = ladder[-1] - ladder[-2]
        d0 = ladder[-2] - ladder[-3]
        if d0 > 0 and d1 / d0 >= 0.5 and d1 > 1e-9 * max(ladder[-1], 1.0):
            singular.append(x0)
    zero_set = set(zeros)
    sing_set = set(round(s, 9) for s in singular)
    tol = (b - a) / n_grid
    exists = all(any(abs(s - z) <= tol for z in zero_set) for s in sing_set)
    report.add("singular-set-in-zero-set", exists,
               measured=float(len(sing_set)), bound=float(len(zero_set)),
               relation="subset",
               note=f"S={sorted(sing_set)}, N={sorted(zero_set)}")
    report.notes.append(
        "weak non-exploding solution exists" if exists else
        "no weak non-exploding solution (singular point outside zero set)")
    if box_check:
        sq, _ = panel_quad(lambda s: coef(s) ** 2, a, b)
        inv = None
        try:
            inv, _ = panel_quad(lambda s: 1.0 / coef(s) ** 2, a, b)
        except QuadratureError:
            pass
        report.add("box-integrability-coef-sq", math.isfinite(sq),
                   measured=sq, relation="finite",
                   note="bounded-box integrability of the squared coefficient")
        if inv is not None:
            report.add("box-integrability-inverse-sq", math.isfinite(inv),
                       measured=inv, relation="finite",
                       note="bounded-box integrability of 1/coefficient^2")
    return report


def feller_test(coef, u_start, drift=None, ladder=(1e2, 1e3, 1e4),
                n_grid=6000, name="coefficient"):
    """Explosion test for dX = drift dt + coef dB on [u_start, infinity).

    Zero drift: the double integral FEL(U) = int_{u_start}^U du
    int_{u_start}^u coef(x)^-2 dx grows without bound exactly when the SDE
    cannot explode; linear growth of the ladder (stable chord slopes) is
    the non-explosion signature.  With drift, the criterion reduces to the
    reciprocal-drift integral: a convergent int du / drift(u) signals
    explosion.
    """
    report = QuadratureReport(
        integrand=("FEL double integral" if drift is None
                   else "1/drift reciprocal integral"),
        domain=f"[{u_start}, {max(ladder):g}]")
    if drift is None:
        umax = max(ladder)
        grid = np.geomspace(max(u_start, 1e-12), umax, n_grid)
        inv = np.asarray([1.0 / coef(x) ** 2 for x in grid])
        inner = integrate.cumulative_trapezoid(inv, grid, initial=0.0)
        fel = integrate.cumulative_trapezoid(inner, grid, initial=0.0)
        vals = np.interp(np.asarray(ladder), grid, fel)
        report.cutoffs = list(ladder)
        report.values = [float(v) for v in vals]
        slopes = np.diff(vals) / np.diff(np.asarray(ladder, dtype=float))
        drift_rel = float(np.max(np.abs(np.diff(slopes) / slopes[:-1]))) \
            if len(slopes) > 1 else 0.0
        cls, fitted = classify_ladder(report.cutoffs, report.values)
        report.classification = cls
        report.fitted = fitted
        report.verdict = ("no explosion" if cls in ("diverges-linear",
                                                    "diverges-log")
                          else "explodes" if cls == "converges"
                          else "inconclusive")
        report.notes.append(f"chord-slope relative drift {drift_rel:.3e}")
        report.notes.append(f"inner integral limit {inner[-1]:.8f}")
    else:
        vals = []
        for U in ladder:
            v, _ = panel_quad(lambda x: 1.0 / drift(x), u_start, U)
            vals.append(v)
        report.cutoffs = list(ladder)
        report.values = [float(v) for v in vals]
        cls, fitted = classify_ladder(report.cutoffs, report.values)
        report.classification = cls
        report.fitted = fitted
        report.verdict = ("explodes" if cls == "converges" else
                          "no explosion" if cls.startswith("diverges")
                          else "inconclusive")
        if cls == "converges":
            double, _ = panel_quad(lambda x: 1.0 / drift(x), ladder[-1],
                                   2 * ladder[-1])
            report.notes.append(
                f"doubling-tail change {double:.3e}")
    return report


def scale_function_exits(coef, cell, u0, drift=None, n_grid=4001):
    """Exit probabilities from a cell for dX = drift dt + coef dB.

    With zero drift the scale function is the identity and
    P(hit top first) = (u0 - a)/(b - a) exactly; with drift the harmonic
    scale density exp(-2 int drift/coef^2) is integrated numerically.
    """
    a, b = cell
    if not a <= u0 <= b:
        raise ValueError("need a <= u0 <= b")
    if drift is None:
        p_high = (u0 - a) / (b - a)
        return {"p_exit_low": 1.0 - p_high, "p_exit_high": p_high,
                "method": "identity scale function"}
    grid = np.linspace(a, b, n_grid)
    ratio = np.asarray([2.0 * drift(x) / coef(x) ** 2 for x in grid])
    theta = integrate.cumulative_trapezoid(ratio, grid, initial=0.0)
    lam = np.exp(-theta)
    cum = integrate.cumulative_trapezoid(lam, grid, initial=0.0)
    total = cum[-1]
    p_high = float(np.interp(u0, grid, cum) / total)
    return {"p_exit_low": 1.0 - p_high, "p_exit_high": p_high,
            "method": "integrating-factor scale function"}


def exit_probability_mc(params, cell, u0, n_paths, rng, dt=2.5e-7,
                        max_steps=2_000_000, block_size=2500):
    """Monte-Carlo exit frequencies from a cell for the collapse diffusion."""
    a, b = cell
    sk = params.sqrt_kappa
    sqdt = math.sqrt(dt)
    hits_high = 0
    unresolved = 0
    for b0 in range(0, n_paths, block_size):
        nb = min(block_size, n_paths - b0)
        gens = [rng.generator(i) for i in range(b0, b0 + nb)]
        u = np.full(nb, float(u0))
        alive = np.arange(nb)
        steps_done = 0
        chunk = 4096
        while len(alive) and steps_done < max_steps:
            m = min(chunk, max_steps - steps_done)
            z = np.empty((len(alive), m))
            for r, idx in enumerate(alive):
                z[r] = gens[idx].standard_normal(m)
            z *= sqdt
            ua = u[alive]
            done = np.zeros(len(alive), dtype=bool)
            for j in range(m):
                coefv = sk * ua * ua * np.sqrt(np.maximum(ua - 1.0, 0.0))
                ua = ua + np.where(done, 0.0, coefv * z[:, j])
                hi = (~done) & (ua >= b)
                lo = (~done) & (ua <= a)
                hits_high += int(hi.sum())
                done |= hi | lo
                if done.all():
                    break
            u[alive] = ua
            alive = alive[~done]
            steps_done += m
        unresolved += len(alive)
    n_eff = n_paths - unresolved
    if n_eff == 0:
        raise InsufficientData("no path exited the cell")
    p = hits_high / n_eff
    se = math.sqrt(max(p * (1 - p), 1e-12) / n_eff)
    return {"p_exit_high": p, "stderr": se, "n_resolved": n_eff,
            "unresolved": unresolved}


# ---------------------------------------------------------------------------
# ensemble suites
# ---------------------------------------------------------------------------

def martingale_suite(ens, n_groups=5, min_paths=1000):
    """Mean-preservation checks for a capped Ito ensemble.

    (a) the stopped-process mean stays at u_eps within 4 standard errors at
    every snapshot horizon; (b) regrouping paths by their value at an
    intermediate time, group-conditional later means match the group values
    (tower property); (c) long-horizon stability of the mean.
    """
    if ens.n_paths < min_paths:
        raise InsufficientPaths(f"martingale suite needs >= {min_paths} paths")
    rep = AnalysisReport(suite="martingale",
                         inputs_digest=digest_inputs(**ens.rng.record(),
                                                     n=ens.n_paths))
    target = ens.u_eps
    horizons = [j for j, t in enumerate(ens.snap_times) if t > 0]
    worst = 0.0
    for j in horizons:
        m, se = ens.mean_stderr(j)
        worst = max(worst, abs(m - target) / se)
    rep.add("mean-at-horizons", worst <= 4.0, measured=worst, bound=4.0,
            note=f"max |mean-u_eps|/stderr over {len(horizons)} horizons")

    j_mid = horizons[len(horizons) // 2]
    j_end = horizons[-1]
    u_mid = ens.u[:, j_mid]
    u_end = ens.u[:, j_end]
    qs = np.quantile(u_mid, np.linspace(0, 1, n_groups + 1))
    qs[0] -= 1e-9
    worst_g = 0.0
    for g in range(n_groups):
        sel = (u_mid > qs[g]) & (u_mid <= qs[g + 1])
        if sel.sum() < 30:
            continue
        cond = u_end[sel]
        se = cond.std(ddof=1) / math.sqrt(sel.sum())
        worst_g = max(worst_g, abs(cond.mean() - u_mid[sel].mean()) / se)
    rep.add("tower-grouped-means", worst_g <= 4.0, measured=worst_g,
            bound=4.0, note=f"{n_groups} groups by value at t={ens.snap_times[j_mid]:.4g}")

    m0, se0 = ens.mean_stderr(horizons[0])
    mT, seT = ens.mean_stderr(j_end)
    drift = abs(mT - m0) / math.hypot(se0, seT)
    rep.add("stopped-mean-stability", drift <= 4.0, measured=drift, bound=4.0,
            note="first vs last horizon (optional-stopping consistency)")
    rep.add("clamp-rate", ens.clamp_rate < 1e-4, measured=ens.clamp_rate,
            bound=1e-4, note="boundary clamps per step")
    return rep


def moment_suite(ens, p_list=(2, 3, 4), interpolation=(2, 3, 4)):
    """Moment growth against the cap-relative exponential bound.

    log E|u|^p <= p log u_eps + p(p-1)/2 * K * (t - t_eps) with the
    interval constant K of :func:`linear_growth_constant`; the p = 2 case
    is also checked against the exact isometry E u^2 = u_eps^2 +
    E int coef^2 ds, and the log-norm interpolation inequality is verified
    on the empirical moments.
    """
    rep = AnalysisReport(suite="moments",
                         inputs_digest=digest_inputs(**ens.rng.record(),
                                                     p=list(p_list)))
    K = linear_growth_constant(ens.params, ens.cap)
    horizons = [j for j, t in enumerate(ens.snap_times) if t > 0]
    for p in p_list:
        ok = True
        min_slack = math.inf
        for j in horizons:
            mp = float(np.mean(ens.u[:, j] ** p))
            log_bound = p * math.log(ens.u_eps) + \
                0.5 * p * (p - 1) * K * ens.snap_times[j]
            slack = log_bound - math.log(mp)
            min_slack = min(min_slack, slack)
            if slack < 0:
                ok = False
        rep.add(f"moment-bound-p{p}", ok, measured=min_slack, bound=0.0,
                relation=">=",
                note="min log-slack of the cap-relative bound (K=%.3e)" % K)

    j = horizons[-1]
    m2 = ens.u[:, j] ** 2
    iso = ens.u_eps ** 2 + ens.ipsisq[:, j]
    diff = m2 - iso
    se = diff.std(ddof=1) / math.sqrt(ens.n_paths)
    z = abs(diff.mean()) / se
    rep.add("isometry-p2", z <= 2.0, measured=z, bound=2.0,
            note="E u^2 vs u_eps^2 + E int coef^2 ds at the last horizon")

    m1, se1 = ens.mean_stderr(j)
    rep.add("p1-reduces-to-mean", abs(m1 - ens.u_eps) <= 4 * se1,
            measured=m1, stderr=se1, bound=ens.u_eps, relation="two-sided")

    p, alpha, beta = interpolation
    th = (1.0 / alpha - 1.0 / beta) / (1.0 / p - 1.0 / beta)
    worst = -math.inf
    for j in horizons:
        x = ens.u[:, j]
        ln_np = math.log(float(np.mean(x ** p))) / p
        ln_na = math.log(float(np.mean(x ** alpha))) / alpha
        ln_nb = math.log(float(np.mean(x ** beta))) / beta
        defect = ln_na - (th * ln_np + (1 - th) * ln_nb)
        worst = max(worst, defect)
    rep.add("log-norm-interpolation", worst <= 1e-10, measured=worst,
            bound=0.0, note=f"(p,a,b)=({p},{alpha},{beta}), theta={th:.4f}")

    # the deterministic comparison ODE y' = kappa y^4 (y-1) does blow up in
    # finite time; record the observed blow-up time
    t_aux = _aux_ode_blowup(ens.params, ens.u_eps)
    rep.notes.append("auxiliary ODE y'=kappa*y^4*(y-1) blows up at "
                     f"t-t_eps={t_aux:.3e} (square-integrability is "
                     "cap-relative)")
    return rep


def _aux_ode_blowup(params, y0):
    from scipy.integrate import solve_ivp
    hit = lambda t, y: y[0] - 1e9
    hit.terminal = True
    hit.direction = 1
    sol = solve_ivp(lambda t, y: [params.kappa * y[0] ** 4 * (y[0] - 1.0)],
                    (0.0, 10.0), [max(y0, 1.0 + 1e-9)], rtol=1e-8,
                    events=hit)
    if len(sol.t_events[0]):
        return float(sol.t_events[0][0])
    return float(sol.t[-1])


def doob_maximal_suite(ens, levels=(4.0, 8.0, 16.0),
                       bernstein=((2.0, 4.0), (4.0, 8.0)),
                       exp_betas=(0.5, 1.0, 2.0), exp_level=4.0):
    """Maximal, Bernstein-type and exponential supermartingale inequalities.

    (a) P(sup u >= z) <= u_eps / z; (b) P(sup(u - u_eps) >= a, QV <= l) <=
    exp(-a^2 / (2l)) (standard Brownian-scaling exponent; the variant with
    l^2 in the denominator is reported alongside as a note); (c)
    P(sup[(u - u_eps) - (b/2) QV] >= C) <= exp(-b C).
    """
    rep = AnalysisReport(suite="doob-maximal",
                         inputs_digest=digest_inputs(**ens.rng.record(),
                                                     levels=list(levels)))
    n = ens.n_paths
    sup_T = ens.sup[:, -1]
    for z in levels:
        p = float(np.mean(sup_T >= z))
        se = math.sqrt(max(p * (1 - p), 1e-12) / n)
        bound = ens.u_eps / z
        rep.add(f"maximal-z{z:g}", p <= bound + 3 * se, measured=p,
                stderr=se, bound=bound, note="P(sup >= z) vs u_eps/z")

    qv_T = ens.qv[:, -1]
    for a, lam in bernstein:
        event = (sup_T - ens.u_eps >= a) & (qv_T <= lam)
        p = float(np.mean(event))
        se = math.sqrt(max(p * (1 - p), 1e-12) / n)
        bound = math.exp(-a * a / (2 * lam))
        alt = math.exp(-a * a / (2 * lam * lam))
        rep.add(f"bernstein-a{a:g}-l{lam:g}", p <= bound + 3 * se,
                measured=p, stderr=se, bound=bound,
                note=f"printed-variant bound exp(-a^2/(2 l^2)) = {alt:.3e}")

    excess = ens.u - ens.u_eps
    for beta in exp_betas:
        stat = (excess - 0.5 * beta * ens.qv).max(axis=1)
        p = float(np.mean(stat >= exp_level))
        se = math.sqrt(max(p * (1 - p), 1e-12) / n)
        bound = math.exp(-beta * exp_level)
        rep.add(f"exponential-b{beta:g}", p <= bound + 3 * se, measured=p,
                stderr=se, bound=bound,
                note=f"level C={exp_level:g} over snapshot grid")
    return rep


def count_upcrossings(values, low, high):
    """Strict upcrossing count: enter below ``low``, later exceed ``high``."""
    count = 0
    below = values[0] < low
    for v in values[1:]:
        if below:
            if v > high:
                count += 1
                below = False
        elif v < low:
            below = True
    return count


def upcrossing_suite(ens, cell):
    """Expected upcrossings of a cell against the martingale bound.

    E[U(a,b)] <= (E|u(T)| + a) / (b - a); the wide-cell limit b -> cap is
    the finite proxy of the zero-upcrossings-to-infinity statement.
    Counting is on the snapshot grid (a subsampled count, hence conservative
    for the one-sided bound).
    """
    a, b = cell
    rep = AnalysisReport(suite="upcrossings",
                         inputs_digest=digest_inputs(**ens.rng.record(),
                                                     cell=list(cell)))
    counts = np.asarray([count_upcrossings(row, a, b) for row in ens.u])
    mean_u = counts.mean()
    se = counts.std(ddof=1) / math.sqrt(ens.n_paths)
    m_abs = float(np.mean(np.abs(ens.u[:, -1])))
    bound = (m_abs + a) / (b - a)
    rep.add("upcrossing-bound", mean_u <= bound + 3 * se, measured=mean_u,
            stderr=se, bound=bound, note=f"cell [{a:g},{b:g}]")
    narrow = a < ens.u_eps * 1.2
    if narrow:
        rep.add("narrow-cell-positive", mean_u > 0, measured=mean_u,
                bound=0.0, relation=">=",
                note="diffusion oscillates through a narrow cell")
    wide = np.asarray([count_upcrossings(row, a, ens.cap * 0.999)
                       for row in ens.u])
    mean_w = wide.mean()
    ratio = mean_w * (ens.cap - a) / (m_abs + a)
    rep.add("wide-cell-ratio", ratio <= 1.0 + 1e-9, measured=ratio,
            bound=1.0, note="E[U(a, cap)] * (cap-a) / (E|u|+a)")
    return rep


def lyapunov_suite(params, ens, grid=None, p_list=(1, 2)):
    """Log-compensated functional and empirical growth exponents.

    V(u) = log(1+u) satisfies generator(V) = coef^2 V''/2 <= 0 everywhere
    (V'' < 0), i.e. it is a nonnegative functional, divergent at infinity,
    with non-positive generator action: the no-explosion certificate.  The
    empirical exponent limsup (1/t) log E|u|^p is compared with the
    cap-relative bound p(p-1)K/2.
    """
    rep = AnalysisReport(suite="lyapunov",
                         inputs_digest=digest_inputs(**ens.rng.record()))
    if grid is None:
        grid = np.geomspace(1.0 + 1e-6, ens.cap, 64)
    hv = 0.5 * growth_coefficient_sq(grid, params.kappa) * \
        (-1.0 / (1.0 + grid) ** 2)
    rep.add("generator-nonpositive", bool(np.all(hv <= 0.0)),
            measured=float(hv.max()), bound=0.0,
            note="sup of generator acting on log(1+u) over the grid")
    val2 = 0.5 * growth_coefficient_sq(2.0, params.kappa) * (-1.0 / 9.0)
    rep.add("generator-at-2", abs(val2 + 8 * params.kappa / 9) < 1e-12,
            measured=float(val2), bound=-8 * params.kappa / 9,
            relation="two-sided", note="closed-form value -8 kappa / 9")
    v_vals = np.log(1.0 + grid)
    rep.add("functional-properties",
            bool(np.all(v_vals >= 0) and v_vals[-1] > v_vals[0]),
            measured=float(v_vals[0]), bound=0.0, relation=">=",
            note="log(1+u) nonnegative and increasing to infinity")

    K = linear_growth_constant(params, ens.cap)
    horizons = [j for j, t in enumerate(ens.snap_times) if t > 0]
    j0, j1 = horizons[len(horizons) // 2], horizons[-1]
    dt_fit = ens.snap_times[j1] - ens.snap_times[j0]
    for p in p_list:
        m0 = float(np.mean(ens.u[:, j0] ** p))
        m1 = float(np.mean(ens.u[:, j1] ** p))
        se0 = float(np.std(ens.u[:, j0] ** p, ddof=1)) / math.sqrt(ens.n_paths)
        se1 = float(np.std(ens.u[:, j1] ** p, ddof=1)) / math.sqrt(ens.n_paths)
        slope = (math.log(m1) - math.log(m0)) / dt_fit
        se_slope = (se0 / m0 + se1 / m1) / dt_fit
        bound = 0.5 * K * p * (p - 1)
        if p == 1:
            rep.add("exponent-p1-zero", abs(slope) <= 2 * se_slope,
                    measured=slope, stderr=se_slope, bound=0.0,
                    relation="two-sided",
                    note="martingale growth exponent vanishes")
        else:
            rep.add(f"exponent-p{p}", slope <= bound + 2 * se_slope,
                    measured=slope, stderr=se_slope, bound=bound,
                    note="empirical exponent vs p(p-1)K/2")
    return rep


def continuity_suite(ens, n_gaps=6, params=None, rel_tol=0.02):
    """Mean-square increment scaling (stochastic leg) and the smooth leg.

    Fits log E|u(t+g) - u(t)|^2 against log g over the dyadic snapshot
    ladders built into the ensemble grid; the diffusive scaling exponent
    must be 1.0 +- 0.1.  For a smooth (deterministic) trajectory the same
    fit yields exponent 2.
    """
    rep = AnalysisReport(suite="continuity",
                         inputs_digest=digest_inputs(**ens.rng.record()))
    times = ens.snap_times
    base = 10.0 * ens.dt
    gaps = base * 2.0 ** np.arange(n_gaps - 1)
    # anchors whose complete dyadic ladder exists on the snapshot grid; the
    # exponent is fitted per anchor (the anchor's diffusion level divides
    # out) and then averaged
    slopes = []
    msd0 = None
    for ai, t_a in enumerate(times):
        cols = []
        for g in gaps:
            match = np.where(np.abs(times - (t_a + g)) <= rel_tol * g)[0]
            if len(match) == 0:
                break
            cols.append(match[0])
        if len(cols) < len(gaps):
            continue
        msd = [float(np.mean((ens.u[:, c] - ens.u[:, ai]) ** 2))
               for c in cols]
        slopes.append(np.polyfit(np.log(gaps), np.log(msd), 1)[0])
        if msd0 is None:
            msd0 = msd
    if not slopes:
        raise InsufficientData("snapshot grid carries no dyadic ladder")
    slope = float(np.mean(slopes))
    used_gaps = list(gaps)
    msd = msd0
    rep.add("increment-scaling", abs(slope - 1.0) <= 0.1, measured=float(slope),
            bound=1.0, relation="two-sided",
            note=f"log-log fit over gaps {[f'{g:.1e}' for g in used_gaps]}")

    halving = msd[1] / msd[0]
    rep.add("gap-halving", abs(halving - 2.0) <= 0.2, measured=float(halving),
            bound=2.0, relation="two-sided",
            note="doubling the gap doubles the mean-square increment")

    if params is not None:
        det = solve_density_ode(params, u0=1.01, t_end=params.t_eps)
        ts = np.linspace(det.t[0], det.t[-1] * 0.98, 2048)
        us = np.interp(ts, det.t, det.u)
        h = ts[1] - ts[0]
        igaps = [2 ** k for k in range(n_gaps)]
        dmsd = [np.mean((us[g:] - us[:-g]) ** 2) for g in igaps]
        dslope = np.polyfit(np.log(np.asarray(igaps, dtype=float) * h),
                            np.log(dmsd), 1)[0]
        rep.add("deterministic-leg-scaling", abs(dslope - 2.0) <= 0.05,
                measured=float(dslope), bound=2.0, relation="two-sided",
                note="smooth pre-switch trajectory scales quadratically")
    return rep


def kretschmann_expectation(ens):
    """Curvature-invariant expectation against the moment-bound polynomial.

    E[K(u)] with K(u) = 4 kappa^2 u^4 (u^2-u+1) must be finite at every
    horizon and below 4 kappa^2 (B6 + B4), where Bp is the cap-relative
    moment bound (compared in log space; the u^5 term enters negatively and
    is dropped from the bound side).
    """
    rep = AnalysisReport(suite="kretschmann",
                         inputs_digest=digest_inputs(**ens.rng.record()))
    params = ens.params
    K = linear_growth_constant(params, ens.cap)
    horizons = [j for j, t in enumerate(ens.snap_times) if t > 0]
    ok_fin, ok_bound = True, True
    worst = -math.inf
    for j in horizons:
        ek = float(np.mean(kretschmann(params, ens.u[:, j])))
        if not math.isfinite(ek):
            ok_fin = False
            continue
        t = ens.snap_times[j]
        log_b6 = 6 * math.log(ens.u_eps) + 15.0 * K * t
        log_b4 = 4 * math.log(ens.u_eps) + 6.0 * K * t
        log_bound = math.log(4 * params.kappa ** 2) + \
            max(log_b6, log_b4) + math.log(2.0)
        worst = max(worst, math.log(ek) - log_bound)
        if math.log(ek) > log_bound:
            ok_bound = False
    rep.add("finite-at-horizons", ok_fin, note="E[K] finite everywhere")
    rep.add("moment-polynomial-bound", ok_bound, measured=worst, bound=0.0,
            note="max log(E[K]) - log(bound) over horizons")
    ek0 = float(np.mean(kretschmann(params, ens.u[:, 0])))
    rep.add("degenerate-initial", abs(ek0 - float(kretschmann(
        params, ens.u_eps))) < 1e-9 * ek0 + 1e-12, measured=ek0,
        bound=float(kretschmann(params, ens.u_eps)), relation="two-sided",
        note="point mass at switch-on")
    return rep


def dds_time_change_check(ens, target_increments=260_000, min_pooled=10_000):
    """Normality of increments after the quadratic-variation time change.

    Each path is cut into windows of equal variance budget: store-grid
    increments are consumed until the accumulated (predictable) compensator
    reaches the pooled step, the boundary increment enters with the square
    root of its budget fraction, and the remainder of that increment is
    discarded before the next window starts.  Every weight is then known
    before its innovation, so each completed window divided by the constant
    budget is standard normal for the simulated chain (exactly, up to
    boundary clamps and cap truncation).  Requires a full-storage ensemble;
    the construction is exact only at store stride 1, coarser strides leak
    an O(in-gap coefficient variation) skew.
    """
    if ens.store != "full":
        raise InsufficientData("time-change check needs full path storage")
    comp = ens.fine_ipsisq
    pooled = float(np.sum(comp[:, -1]))
    if pooled <= 0:
        raise InsufficientData("no quadratic variation to resample")
    delta = pooled / target_increments
    sq_delta = math.sqrt(delta)
    z_all = []
    for i in range(ens.n_paths):
        da = np.diff(comp[i])
        du = np.diff(ens.fine_u[i])
        acc, s = 0.0, 0.0
        zs = []
        for g in range(len(da)):
            dag = da[g]
            if dag <= 0.0:
                continue
            if acc + dag < delta:
                acc += dag
                s += du[g]
            else:
                theta = (delta - acc) / dag
                zs.append((s + math.sqrt(theta) * du[g]) / sq_delta)
                acc, s = 0.0, 0.0
        if zs:
            z_all.append(np.asarray(zs))
    if not z_all:
        raise InsufficientData("no usable time-changed increments")
    z = np.concatenate(z_all)
    n = len(z)
    if n < min_pooled:
        raise InsufficientData(f"only {n} pooled increments")
    rep = AnalysisReport(suite="dds-time-change",
                         inputs_digest=digest_inputs(**ens.rng.record(),
                                                     n=n))
    mean = float(z.mean())
    var = float(z.var(ddof=1))
    m4 = float(np.mean((z - z.mean()) ** 4))
    exkurt = m4 / var ** 2 - 3.0
    rep.add("mean", abs(mean) <= 4.0 / math.sqrt(n), measured=mean,
            bound=4.0 / math.sqrt(n), relation="two-sided",
            note=f"{n} pooled increments")
    rep.add("variance", 0.95 <= var <= 1.05, measured=var, bound=1.0,
            relation="two-sided", note="tolerance [0.95, 1.05]")
    rep.add("excess-kurtosis", abs(exkurt) <= 0.15, measured=float(exkurt),
            bound=0.0, relation="two-sided", note="tolerance 0.15")
    return rep


# ---------------------------------------------------------------------------
# first passage (exact Stratonovich solution)
# ---------------------------------------------------------------------------

def first_passage_cdf(t, level):
    """Closed-form first-passage law P(T <= t) = erfc(L / sqrt(2 t))."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = erfc(level / np.sqrt(2.0 * t[pos]))
    return out


def first_passage_density(t, level):
    """One-sided stable(1/2) first-passage density.

    p(t) = L t^(-3/2) exp(-L^2/(2t)) / sqrt(2 pi): normalized to 1 and the
    exact derivative of the closed-form law (a printed variant with
    t^(-1/2) is not normalizable and is not used).
    """
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = level * t[pos] ** (-1.5) * \
        np.exp(-level ** 2 / (2 * t[pos])) / math.sqrt(2 * math.pi)
    return out


def median_hitting_time(level):
    """Analytic median of the first-passage law: L^2 / (2 erfcinv(1/2)^2)."""
    x = float(erfcinv(0.5))
    return level ** 2 / (2.0 * x * x)


def first_passage_suite(params, u_eps, sample, horizons=(0.1, 0.3, 1.0, 3.0,
                                                         10.0),
                        ks_tolerance=0.02, exponent_tol=0.1):
    """Hitting-time statistics of the exact Stratonovich solution.

    Checks the hitting level, the Kolmogorov-Smirnov distance between the
    empirical hitting-time distribution and the closed-form law, the hit
    fraction at each horizon, the growth exponent of the censored mean (the
    square-root growth is the null-recurrence proxy: every path blows up
    but the expected time is infinite), the empirical median, and the
    histogram against the stable density.
    """
    rep = AnalysisReport(suite="first-passage",
                         inputs_digest=digest_inputs(u_eps=u_eps,
                                                     n=sample.n_paths))
    level = hitting_level(params, u_eps)
    rep.add("hitting-level", abs(sample.level - level) < 1e-12,
            measured=sample.level, bound=level, relation="two-sided",
            note="(pi/2 - F(u_eps)) / sqrt(kappa)")

    n = sample.n_paths
    hits = np.sort(sample.times[np.isfinite(sample.times)])
    cdf = first_passage_cdf(hits, level)
    i = np.arange(1, len(hits) + 1)
    ks = max(float(np.max(np.abs(i / n - cdf))),
             float(np.max(np.abs((i - 1) / n - cdf))))
    rep.add("ks-distance", ks <= ks_tolerance, measured=ks,
            bound=ks_tolerance, note=f"N={n} against erfc(L/sqrt(2t))")

    for H in horizons:
        frac = float(np.mean(sample.times <= H))
        pred = float(first_passage_cdf(np.asarray([H]), level)[0])
        se = math.sqrt(max(pred * (1 - pred), 1e-12) / n)
        rep.add(f"hit-fraction-h{H:g}", abs(frac - pred) <= 3 * se,
                measured=frac, stderr=se, bound=pred, relation="two-sided")

    means = []
    for H in horizons:
        sel = hits[hits <= H]
        means.append(float(sel.mean()))
    slope = float(np.polyfit(np.log(horizons), np.log(means), 1)[0])
    rep.add("censored-mean-exponent", abs(slope - 0.5) <= exponent_tol,
            measured=slope, bound=0.5, relation="two-sided",
            note="sqrt growth of E[T | T <= H]: infinite-mean signature")

    med_emp = float(np.quantile(sample.times, 0.5))
    med_true = median_hitting_time(level)
    dens = first_passage_density(np.asarray([med_true]), level)[0]
    se_med = 1.0 / (2.0 * dens * math.sqrt(n))
    grid_bias = 0.02 * med_true  # documented O(eta) monitoring bias
    tol = 0.01 * med_true + 3.0 * se_med + grid_bias
    rep.add("median", abs(med_emp - med_true) <= tol, measured=med_emp,
            stderr=se_med, bound=med_true, relation="two-sided",
            note="1% target widened by 3 stderr + grid bias; at N=1e4 the "
                 "median stderr alone is ~2.3%")

    edges = np.geomspace(max(hits[0], 1e-5), sample.horizon, 30)
    counts, _ = np.histogram(hits, bins=edges)
    emp_mass = counts / n
    th_mass = np.diff(first_passage_cdf(edges, level))
    tv = 0.5 * float(np.sum(np.abs(emp_mass - th_mass)))
    tv_noise = 0.4 * math.sqrt(len(edges) / n)
    rep.add("density-histogram", tv <= 3 * tv_noise + 0.01, measured=tv,
            bound=3 * tv_noise + 0.01,
            note="TV of log-binned hit times vs stable density mass")
    return rep


def exponential_martingale_mean_check(ens, y0=1.0):
    """Terminal mean of the exponential transform of stored paths.

    Applies the discrete exponential-martingale formula path by path on
    the fine grid; the terminal mean must equal y0 within 4 standard
    errors (unit-expectation property of the exponential martingale).
    """
    if ens.store != "full":
        raise InsufficientData("needs full path storage")
    dt = float(ens.fine_times[1] - ens.fine_times[0])
    u = ens.fine_u
    db = np.diff(ens.fine_driver, axis=1)
    coef = growth_coefficient(u[:, :-1], ens.params.kappa)
    expo = np.sum(coef * db - 0.5 * coef ** 2 * dt, axis=1)
    y = y0 * np.exp(expo)
    mean = float(y.mean())
    se = float(y.std(ddof=1)) / math.sqrt(len(y))
    rep = AnalysisReport(suite="exponential-martingale",
                         inputs_digest=digest_inputs(**ens.rng.record()))
    rep.add("unit-mean", abs(mean - y0) <= 4 * se, measured=mean, stderr=se,
            bound=y0, relation="two-sided",
            note="terminal mean of the exponential transform")
    return rep
