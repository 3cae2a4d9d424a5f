"""Command-line interface and batch pipeline.

Subcommands: ``equilibrium`` (lane-emden, buchdahl), ``collapse``,
``simulate``, ``analyze``, ``fp`` (solve, compare), ``pipeline`` and
``regress``.  Every run writes its resolved configuration and the package
version next to its outputs; tabular artifacts are CSV, reports are JSON,
and the report path also renders figures alongside the CSVs unless
plotting is disabled.  Worker count is controlled only by the
DUSTLAB_WORKERS environment variable and never affects numeric results.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__, analysis, fokker_planck as fp, plots
from .collapse import (ModelParams, collapse_time, cycloid_eval,
                       implicit_time_of_u, kretschmann, solve_density_ode)
from .equilibrium import StarConfig, buchdahl_check, lane_emden_solve
from .errors import ConfigError, DustlabError
from .reports import digest_inputs
from .sde import (RngSpec, first_passage_times, gbm_constant_sigma_moments,
                  simulate_ito)

DEFAULT_CONFIG = {
    "version": 1,
    "model": {"G": 1.0, "rho0": 1.0},
    "partition": {"u_eps": 2.0},
    "engine": {
        "scheme": "ito",
        "paths": 10000,
        "dt": 2e-6,
        "horizon": 0.05,
        "cap": 16.0,
        "seed": 20250810,
        "full_paths": 400,
        "full_dt": 1e-6,
        "full_horizon": 0.015,
        "hitting_paths": 10000,
        "hitting_horizon": 10.0,
        "gbm_paths": 100000,
        "exit_paths": 10000,
    },
    "suites": ["martingale", "moments", "doob", "upcrossing", "ds", "es",
               "feller", "exits", "lyapunov", "continuity", "kretschmann",
               "dds", "hitting", "gbm"],
    "fp": {
        "rho0": 0.5,
        "u_eps": 1.4,
        "u_max": 60.0,
        "cells": 1600,
        "dt": 1e-5,
        "horizon": 0.01,
        "mc_paths": 100000,
        "mc_dt": 4e-6,
    },
    "output": {"plots": True, "paths_csv": 20},
}

_SCHEMA = {
    "version": int,
    "model": {"G": float, "rho0": float},
    "partition": {"u_eps": float, "eps": float, "t_eps": float,
                  "eps_frac": float},
    "engine": {k: (int if k.endswith("paths") or k == "seed" else float)
               for k in DEFAULT_CONFIG["engine"]},
    "suites": list,
    "fp": {k: (int if k in ("cells", "mc_paths") else float)
           for k in DEFAULT_CONFIG["fp"]},
    "output": {"plots": bool, "paths_csv": int},
}
_SCHEMA["engine"]["scheme"] = str


def validate_config(cfg, schema=None, path=""):
    """Reject unknown keys and gross type mismatches, naming the culprit."""
    schema = schema if schema is not None else _SCHEMA
    if not isinstance(cfg, dict):
        raise ConfigError(f"expected a mapping at '{path or '<root>'}'")
    for key, val in cfg.items():
        if key not in schema:
            raise ConfigError(f"unknown configuration key '{path}{key}'")
        spec = schema[key]
        if isinstance(spec, dict):
            validate_config(val, spec, path=f"{path}{key}.")
        elif spec is float:
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ConfigError(f"key '{path}{key}' must be numeric")
        elif spec is int:
            if not isinstance(val, int) or isinstance(val, bool):
                raise ConfigError(f"key '{path}{key}' must be an integer")
        elif spec is bool:
            if not isinstance(val, bool):
                raise ConfigError(f"key '{path}{key}' must be a boolean")
        elif spec is list:
            if not isinstance(val, list):
                raise ConfigError(f"key '{path}{key}' must be a list")
        elif spec is str:
            if not isinstance(val, str):
                raise ConfigError(f"key '{path}{key}' must be a string")
    return cfg


def merge_config(base, override):
    out = {}
    for key, val in base.items():
        if key in override and isinstance(val, dict):
            out[key] = merge_config(val, override[key])
        elif key in override:
            out[key] = override[key]
        else:
            out[key] = val if not isinstance(val, dict) else dict(val)
    return out


def load_config(path=None, overrides=None):
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path:
        with open(path) as fh:
            user = json.load(fh)
        validate_config(user)
        cfg = merge_config(cfg, user)
    if overrides:
        cfg = merge_config(cfg, overrides)
    validate_config(cfg)
    return cfg


def _params_from_config(cfg):
    part = cfg["partition"]
    return ModelParams.create(G=cfg["model"]["G"], rho0=cfg["model"]["rho0"],
                              **part)


def _write_resolved(out_dir, cfg, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    resolved = {"config": cfg, "code_version": __version__}
    if extra:
        resolved.update(extra)
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(resolved, fh, indent=1, sort_keys=True)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    raise TypeError(f"not serializable: {type(x)}")


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_json_default)


# ---------------------------------------------------------------------------
# stage runners
# ---------------------------------------------------------------------------

def run_collapse_stage(params, out_dir=None, want_plots=False, u0=1.01,
                       u_detect=1e9):
    """Deterministic artifacts: trajectory CSV and collapse-time agreement."""
    traj = solve_density_ode(params, u0=u0, u_detect=u_detect)
    closed = collapse_time(params)
    cyc = cycloid_eval(params, math.pi).t
    result = {
        "closed_form_time": closed,
        "cycloid_time": cyc,
        "ode_blowup_time": traj.blowup_time,
        "max_phase_residual": traj.max_phase_residual,
        "blowup_detected": bool(traj.blown_up),
    }
    if out_dir:
        sel = traj.u < 1e9
        rows = [(t, 1.0 / u, u, params.rho0 * u ** 3,
                 float(kretschmann(params, u)))
                for t, u in zip(traj.t[sel], traj.u[sel])]
        _write_csv(os.path.join(out_dir, "collapse.csv"),
                   ["t", "R", "u", "rho", "K"], rows)
        if want_plots:
            plots.plot_collapse_trajectory(traj, out_dir)
    return result


def run_simulate_stage(params, engine, out_dir=None, want_plots=False,
                       paths_csv=0):
    """Build the ensembles and samples used by the analysis suites."""
    rng = RngSpec(engine["seed"])
    u_eps = params.u_eps
    main = simulate_ito(params, u_eps=u_eps, n_paths=engine["paths"],
                        dt=engine["dt"], horizon=engine["horizon"],
                        cap=engine["cap"], rng=rng)
    full = simulate_ito(params, u_eps=u_eps, n_paths=engine["full_paths"],
                        dt=engine["full_dt"], horizon=engine["full_horizon"],
                        cap=engine["cap"], rng=RngSpec(engine["seed"] + 1),
                        store="full", store_stride=1)
    hitting = first_passage_times(params, u_eps,
                                  n_paths=engine["hitting_paths"],
                                  horizon=engine["hitting_horizon"],
                                  rng=RngSpec(engine["seed"] + 2))
    gbm = gbm_constant_sigma_moments(1.0, engine["gbm_paths"], steps=100,
                                     horizon=1.0,
                                     rng=RngSpec(engine["seed"] + 3))
    if out_dir:
        main.save(os.path.join(out_dir, "ensemble_main"))
        _dump_json(os.path.join(out_dir, "summary.json"), main.summary())
        _write_csv(os.path.join(out_dir, "hitting_times.csv"), ["time"],
                   [(t,) for t in hitting.times])
        if paths_csv:
            k = min(paths_csv, full.n_paths)
            header = ["t"] + [f"path_{i}" for i in range(k)]
            rows = np.column_stack([full.fine_times + params.t_eps,
                                    full.fine_u[:k].T])
            _write_csv(os.path.join(out_dir, "paths.csv"), header, rows)
        if want_plots:
            plots.plot_ensemble(main, out_dir)
            plots.plot_hitting_times(hitting, out_dir)
    return {"main": main, "full": full, "hitting": hitting, "gbm": gbm}


def run_analysis_stage(params, sims, suites, engine, out_dir=None):
    """Run the requested suites; failures are recorded, never raised."""
    main, full, hitting = sims["main"], sims["full"], sims["hitting"]
    coef = analysis.collapse_coefficient_fn(params)
    drift = analysis.stratonovich_drift_fn(params)
    reports = {}

    def record(name, maker):
        t0 = time.time()
        try:
            reports[name] = maker()
        except DustlabError as exc:
            from .reports import AnalysisReport
            rep = AnalysisReport(suite=name)
            rep.add("execution", False, note=f"{type(exc).__name__}: {exc}")
            reports[name] = rep
        reports[name].notes.append(f"wall={time.time() - t0:.2f}s")

    if "martingale" in suites:
        record("martingale", lambda: analysis.martingale_suite(main))
    if "moments" in suites:
        record("moments", lambda: analysis.moment_suite(main))
    if "doob" in suites:
        record("doob", lambda: analysis.doob_maximal_suite(main))
    if "upcrossing" in suites:
        record("upcrossing", lambda: analysis.upcrossing_suite(
            main, (main.u_eps, 1.1 * main.u_eps)))
    if "lyapunov" in suites:
        record("lyapunov", lambda: analysis.lyapunov_suite(params, main))
    if "continuity" in suites:
        record("continuity", lambda: analysis.continuity_suite(
            full, params=params))
    if "kretschmann" in suites:
        record("kretschmann", lambda: analysis.kretschmann_expectation(main))
    if "dds" in suites:
        record("dds", lambda: analysis.dds_time_change_check(full))
    if "gbm" in suites and full is not None and full.store == "full":
        record("gbm", lambda: analysis.exponential_martingale_mean_check(full))
    if "hitting" in suites and hitting is not None:
        record("hitting", lambda: analysis.first_passage_suite(
            params, main.u_eps, hitting))

    if "ds" in suites:
        def _ds():
            from .reports import AnalysisReport
            rep = AnalysisReport(suite="delbaen-shirakawa")
            q = analysis.delbaen_shirakawa_test(coef, name="collapse")
            rep.add("collapse-verdict", q.verdict == "true martingale",
                    note=f"{q.classification}; ladder {q.values[-1]:.4f}")
            rep.notes.append(json.dumps(q.to_dict()))
            q2 = analysis.delbaen_shirakawa_test(
                lambda x: np.exp(x), floor=1.0, upper_ladder=(4, 8, 12, 16),
                name="exp")
            rep.add("exp-coefficient-verdict",
                    q2.verdict == "not a true martingale",
                    note=f"{q2.classification}")
            return rep
        record("ds", _ds)
    if "es" in suites:
        record("es", lambda: analysis.engelbert_schmidt_test(
            coef, (1.001, 1e6), name="collapse"))
    if "feller" in suites:
        def _feller():
            from .reports import AnalysisReport
            rep = AnalysisReport(suite="feller")
            q = analysis.feller_test(coef, 2.0)
            rep.add("driftless-no-explosion", q.verdict == "no explosion",
                    note="; ".join(q.notes))
            qd = analysis.feller_test(coef, 2.0, drift=drift)
            rep.add("midpoint-drift-explodes", qd.verdict == "explodes",
                    note=f"reciprocal integral {qd.values[-1]:.8f}")
            ric = analysis.feller_test(lambda x: 1.0 + x * x, 0.0,
                                       name="riccati")
            rep.add("riccati-no-explosion", ric.verdict == "no explosion")
            return rep
        record("feller", _feller)
    if "exits" in suites:
        def _exits():
            from .reports import AnalysisReport
            rep = AnalysisReport(suite="exits")
            cell, u0 = (2.0, 6.0), 3.0
            exact = analysis.scale_function_exits(coef, cell, u0)
            rep.add("analytic-linear", abs(exact["p_exit_high"] - 0.25) < 1e-14,
                    measured=exact["p_exit_high"], bound=0.25,
                    relation="two-sided")
            mc = analysis.exit_probability_mc(
                params, cell, u0, engine["exit_paths"],
                RngSpec(engine["seed"] + 4))
            ok = abs(mc["p_exit_high"] - 0.25) <= 3 * mc["stderr"]
            rep.add("mc-exit-frequency", ok, measured=mc["p_exit_high"],
                    stderr=mc["stderr"], bound=0.25, relation="two-sided")
            return rep
        record("exits", _exits)

    if "gbm" in suites and sims.get("gbm"):
        gbm = sims["gbm"]
        from .reports import AnalysisReport
        rep = AnalysisReport(suite="gbm-law")
        z1 = abs(gbm["mean"] - 1.0) / gbm["stderr_mean"]
        rep.add("lognormal-mean", z1 <= 3.0, measured=gbm["mean"],
                stderr=gbm["stderr_mean"], bound=1.0, relation="two-sided")
        z2 = abs(gbm["m2"] - math.e) / gbm["stderr_m2"]
        rep.add("lognormal-m2", z2 <= 3.0, measured=gbm["m2"],
                stderr=gbm["stderr_m2"], bound=math.e, relation="two-sided")
        reports["gbm-law"] = rep

    if out_dir:
        for name, rep in reports.items():
            rep.dump(os.path.join(out_dir, f"report_{name}.json"))
    return reports


def run_fp_stage(cfg_fp, out_dir=None, want_plots=False):
    """Forward-PDE cross-validation against a matched Monte-Carlo run."""
    params = ModelParams.create(G=1.0, rho0=cfg_fp["rho0"],
                                u_eps=cfg_fp["u_eps"])
    grid = fp.kfp_solve(params, cfg_fp["u_eps"], u_max=cfg_fp["u_max"],
                        cells=int(cfg_fp["cells"]), horizon=cfg_fp["horizon"],
                        dt=cfg_fp["dt"])
    ens = simulate_ito(params, u_eps=cfg_fp["u_eps"],
                       n_paths=int(cfg_fp["mc_paths"]), dt=cfg_fp["mc_dt"],
                       horizon=cfg_fp["horizon"], cap=cfg_fp["u_max"],
                       rng=RngSpec(424242),
                       snapshots=[cfg_fp["horizon"]], block_size=25000)
    terminal = ens.u[:, -1]
    surviving = terminal[ens.status == 0]
    comp = fp.compare_with_sample(grid, surviving, ens.n_paths)
    stat = fp.stationary_density(
        lambda x: float(np.sqrt(grid.params.kappa) * x * x *
                        np.sqrt(max(x - 1.0, 0.0))), (1.1, 100.0))
    result = {
        "tv": comp["tv"],
        "leak": grid.leaked,
        "pde_mean": comp["pde_mean"],
        "mc_mean": comp["mc_mean"],
        "mean_rel_drift": comp["pde_mean"] / cfg_fp["u_eps"] - 1.0,
        "pde_m2": comp["pde_m2"],
        "mc_m2": comp["mc_m2"],
        "stationary_residual": stat["residual"],
        "mass_plus_leak": grid.mass + grid.leaked,
    }
    if out_dir:
        rows = np.column_stack([np.full_like(grid.centers, grid.time),
                                grid.centers, grid.P])
        _write_csv(os.path.join(out_dir, "fp_grid.csv"), ["t", "u", "P"], rows)
        _dump_json(os.path.join(out_dir, "fp_summary.json"), result)
        if want_plots:
            plots.plot_density_comparison(grid, surviving, ens.n_paths,
                                          out_dir)
    return result


SUITE_TOLERANCES = {
    "tv": 0.05, "leak": 1e-3, "mean_rel_drift": 0.005,
    "stationary_residual": 1e-10,
}


def run_pipeline(cfg, out_dir, want_plots=None):
    """Execute collapse -> simulate -> analyze -> fp and write the report."""
    t_start = time.time()
    params = _params_from_config(cfg)
    want_plots = cfg["output"]["plots"] if want_plots is None else want_plots
    os.makedirs(out_dir, exist_ok=True)
    _write_resolved(out_dir, cfg)

    timings = {}
    t0 = time.time()
    det = run_collapse_stage(params, out_dir, want_plots)
    timings["collapse"] = time.time() - t0

    t0 = time.time()
    sims = run_simulate_stage(params, cfg["engine"], out_dir, want_plots,
                              paths_csv=cfg["output"]["paths_csv"])
    timings["simulate"] = time.time() - t0

    t0 = time.time()
    reports = run_analysis_stage(params, sims, cfg["suites"], cfg["engine"],
                                 out_dir)
    timings["analyze"] = time.time() - t0

    fp_result = None
    t0 = time.time()
    fp_result = run_fp_stage(cfg["fp"], out_dir, want_plots)
    timings["fp"] = time.time() - t0

    fp_pass = all(abs(fp_result[k]) <= tol if k == "mean_rel_drift"
                  else fp_result[k] <= tol
                  for k, tol in SUITE_TOLERANCES.items())
    suite_verdicts = {name: rep.verdict for name, rep in reports.items()}
    overall = (all(v != "fail" for v in suite_verdicts.values())
               and fp_pass
               and abs(det["closed_form_time"] - det["cycloid_time"]) < 1e-6
               and det["blowup_detected"])

    result = {
        "overall": "pass" if overall else "fail",
        "deterministic": det,
        "suites": {name: rep.to_dict() for name, rep in reports.items()},
        "fp": fp_result,
        "fp_pass": fp_pass,
        "config_digest": digest_inputs(cfg=cfg),
        "code_version": __version__,
        "timings": {**timings, "total": time.time() - t_start},
    }
    _dump_json(os.path.join(out_dir, "pipeline_report.json"), result)
    return result


# ---------------------------------------------------------------------------
# regression compare
# ---------------------------------------------------------------------------

_IGNORED_KEYS = {"timings", "wall", "inputs_digest"}


def _walk_diff(current, baseline, path, diffs, stderr=None):
    if isinstance(baseline, dict):
        if not isinstance(current, dict):
            diffs.append((path, "type-change"))
            return
        for key, bval in baseline.items():
            if key in _IGNORED_KEYS:
                continue
            if key not in current:
                diffs.append((f"{path}.{key}", "missing"))
                continue
            sib = baseline.get("stderr")
            _walk_diff(current[key], bval, f"{path}.{key}", diffs,
                       stderr=sib if isinstance(sib, (int, float)) else None)
        return
    if isinstance(baseline, list):
        if not isinstance(current, list) or len(current) != len(baseline):
            diffs.append((path, "length-change"))
            return
        for i, (c, b) in enumerate(zip(current, baseline)):
            _walk_diff(c, b, f"{path}[{i}]", diffs)
        return
    if isinstance(baseline, (int, float)) and not isinstance(baseline, bool) \
            and isinstance(current, (int, float)):
        if stderr:
            tol = 5.0 * stderr * 2.0
        else:
            tol = 1e-9 * max(abs(baseline), 1.0)
        if abs(current - baseline) > tol:
            diffs.append((path, f"{baseline!r} -> {current!r}"))
        return
    if current != baseline:
        diffs.append((path, f"{baseline!r} -> {current!r}"))


def regress(current_report, baseline_report):
    """Field-by-field numeric comparison against a baseline report.

    Fields accompanied by a Monte-Carlo standard error compare within five
    combined standard errors; purely deterministic fields compare to
    relative 1e-9; timing fields are ignored.  Returns the list of drifts.
    """
    diffs = []
    _walk_diff(current_report, baseline_report, "$", diffs)
    return diffs


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--plots", dest="plots", action="store_true",
                   default=None)
    p.add_argument("--no-plots", dest="plots", action="store_false")


def build_parser():
    ap = argparse.ArgumentParser(prog="dustlab",
                                 description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    eq = sub.add_parser("equilibrium", help="stellar equilibrium quantities")
    eqsub = eq.add_subparsers(dest="eq_command", required=True)
    le = eqsub.add_parser("lane-emden")
    le.add_argument("--n", type=float, required=True)
    le.add_argument("--step", type=float, default=1e-3)
    le.add_argument("--csv", default=None, help="write (xi, theta) CSV here")
    _add_common(le)
    bu = eqsub.add_parser("buchdahl")
    bu.add_argument("--compactness", type=float, required=True)
    _add_common(bu)

    co = sub.add_parser("collapse", help="deterministic collapse run")
    cosub = co.add_subparsers(dest="collapse_command", required=True)
    run = cosub.add_parser("run")
    run.add_argument("--G", type=float, default=1.0)
    run.add_argument("--rho0", type=float, default=1.0)
    run.add_argument("--u0", type=float, default=1.01)
    run.add_argument("--t-end", type=float, default=None)
    _add_common(run)

    sim = sub.add_parser("simulate", help="stochastic ensembles")
    sim.add_argument("--scheme", default="ito",
                     choices=["ito", "strat-heun", "strat-exact"])
    sim.add_argument("--paths", type=int, default=10000)
    sim.add_argument("--dt", type=float, default=2e-6)
    sim.add_argument("--t-eps-frac", type=float, default=None)
    sim.add_argument("--u-eps", type=float, default=2.0)
    sim.add_argument("--horizon", type=float, default=0.05)
    sim.add_argument("--cap", type=float, default=16.0)
    _add_common(sim)

    an = sub.add_parser("analyze", help="verification suites")
    an.add_argument("ensemble_dir")
    an.add_argument("--suite", required=True)
    _add_common(an)

    fpp = sub.add_parser("fp", help="density-level solver")
    fpsub = fpp.add_subparsers(dest="fp_command", required=True)
    fs = fpsub.add_parser("solve")
    fs.add_argument("--u-eps", type=float, default=1.4)
    fs.add_argument("--rho0", type=float, default=0.5)
    fs.add_argument("--umax", type=float, default=60.0)
    fs.add_argument("--cells", type=int, default=1600)
    fs.add_argument("--dt", type=float, default=1e-5)
    fs.add_argument("--horizon", type=float, default=0.01)
    _add_common(fs)
    fc = fpsub.add_parser("compare")
    fc.add_argument("--ensemble", default=None)
    _add_common(fc)

    pl = sub.add_parser("pipeline", help="full batch pipeline")
    _add_common(pl)

    rg = sub.add_parser("regress", help="compare a report to a baseline")
    rg.add_argument("report")
    rg.add_argument("baseline")
    _add_common(rg)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except DustlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args):
    out = args.out or "."
    want_plots = getattr(args, "plots", None)

    if args.command == "equilibrium":
        os.makedirs(out, exist_ok=True)
        if args.eq_command == "lane-emden":
            sol = lane_emden_solve(args.n, step=args.step)
            rec = {"n": args.n, "xi1": sol.xi1, "mu1": sol.mu1,
                   "complete": sol.complete}
            print(json.dumps(rec))
            if args.csv:
                _write_csv(args.csv, ["xi", "theta"],
                           list(zip(sol.xi, sol.theta)))
            if want_plots:
                plots.plot_lane_emden(sol, out)
            return 0
        cfg = StarConfig.from_compactness(args.compactness)
        print(json.dumps(buchdahl_check(cfg)))
        return 0

    if args.command == "collapse":
        params = ModelParams.create(G=args.G, rho0=args.rho0, eps_frac=0.01)
        os.makedirs(out, exist_ok=True)
        res = run_collapse_stage(params, out, bool(want_plots), u0=args.u0)
        print(json.dumps(res, default=_json_default))
        return 0

    if args.command == "simulate":
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["engine"]["seed"] = args.seed
        cfg["engine"]["paths"] = args.paths
        cfg["engine"]["dt"] = args.dt
        cfg["engine"]["horizon"] = args.horizon
        cfg["engine"]["cap"] = args.cap
        if args.t_eps_frac is not None:
            cfg["partition"] = {"eps_frac": 1.0 - args.t_eps_frac}
        else:
            cfg["partition"] = {"u_eps": args.u_eps}
        params = _params_from_config(cfg)
        os.makedirs(out, exist_ok=True)
        _write_resolved(out, cfg)
        sims = run_simulate_stage(params, cfg["engine"], out,
                                  bool(want_plots),
                                  paths_csv=cfg["output"]["paths_csv"])
        print(json.dumps({"capped_fraction": sims["main"].capped_fraction,
                          "clamp_rate": sims["main"].clamp_rate}))
        return 0

    if args.command == "analyze":
        from .sde import Ensemble
        cfg = load_config(args.config)
        ens = Ensemble.load(os.path.join(args.ensemble_dir, "ensemble_main"))
        params = ens.params
        sims = {"main": ens, "full": ens, "hitting": None, "gbm": None}
        reports = run_analysis_stage(params, sims, [args.suite],
                                     cfg["engine"], out)
        for name, rep in reports.items():
            print(f"{name}: {rep.verdict}")
        return 0 if all(r.verdict != "fail" for r in reports.values()) else 1

    if args.command == "fp":
        cfg = load_config(args.config)
        if args.fp_command == "solve":
            cfg["fp"].update(u_eps=args.u_eps, rho0=args.rho0,
                             u_max=args.umax, cells=args.cells, dt=args.dt,
                             horizon=args.horizon)
        os.makedirs(out, exist_ok=True)
        _write_resolved(out, cfg)
        res = run_fp_stage(cfg["fp"], out, bool(want_plots))
        print(json.dumps(res, default=_json_default))
        return 0

    if args.command == "pipeline":
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["engine"]["seed"] = args.seed
        result = run_pipeline(cfg, out, want_plots)
        print(f"overall: {result['overall']}")
        for name, rep in result["suites"].items():
            print(f"  {name}: {rep['verdict']}")
        return 0 if result["overall"] == "pass" else 1

    if args.command == "regress":
        with open(args.report) as fh:
            current = json.load(fh)
        with open(args.baseline) as fh:
            baseline = json.load(fh)
        diffs = regress(current, baseline)
        for path, what in diffs:
            print(f"{path}: {what}")
        print(f"{len(diffs)} drift(s)")
        return 0 if not diffs else 1

    raise ConfigError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
