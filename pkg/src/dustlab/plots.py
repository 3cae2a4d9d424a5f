"""Figure rendering for the report path.

Every plotting helper takes data already computed elsewhere and writes a
PNG next to the corresponding CSV artifact; nothing here affects numeric
results.  The Agg backend is forced so batch runs never need a display.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, out_dir, name):
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_collapse_trajectory(traj, out_dir, name="collapse.png"):
    """Scale factor and density function of a deterministic run."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(traj.t, 1.0 / traj.u, lw=1.2)
    ax1.set_xlabel("comoving time t")
    ax1.set_ylabel("scale factor R")
    ax2.semilogy(traj.t, traj.u, lw=1.2, color="crimson")
    ax2.set_xlabel("comoving time t")
    ax2.set_ylabel("density function u")
    if traj.blown_up and traj.blowup_time is not None:
        ax2.axvline(traj.blowup_time, ls="--", color="gray", lw=0.8)
    fig.suptitle("deterministic dust collapse")
    return _save(fig, out_dir, name)


def plot_lane_emden(solution, out_dir, name="lane_emden.png"):
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(solution.xi, solution.theta, lw=1.2)
    ax.axhline(0.0, color="gray", lw=0.6)
    if solution.complete:
        ax.axvline(solution.xi1, ls="--", color="gray", lw=0.8)
        ax.set_title(f"n={solution.n:g}: surface at xi1={solution.xi1:.5f}")
    else:
        ax.set_title(f"n={solution.n:g}: no surface within budget")
    ax.set_xlabel("xi")
    ax.set_ylabel("theta")
    return _save(fig, out_dir, name)


def plot_ensemble(ens, out_dir, name="ensemble.png", n_show=40):
    """Snapshot means with error band plus a handful of sample traces."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    t = ens.snap_times
    mean = ens.u.mean(axis=0)
    se = ens.u.std(axis=0, ddof=1) / np.sqrt(ens.n_paths)
    ax1.fill_between(t, mean - 4 * se, mean + 4 * se, alpha=0.3,
                     label="mean +- 4 se")
    ax1.plot(t, mean, lw=1.2)
    ax1.axhline(ens.u_eps, ls="--", color="gray", lw=0.8)
    ax1.set_xlabel("time after switch-on")
    ax1.set_ylabel("ensemble mean of u")
    ax1.legend(fontsize=8)
    for row in ens.u[:n_show]:
        ax2.plot(t, row, lw=0.4, alpha=0.5)
    ax2.set_yscale("log")
    ax2.set_xlabel("time after switch-on")
    ax2.set_ylabel("u (sample paths)")
    fig.suptitle(f"{ens.scheme} ensemble, N={ens.n_paths}")
    return _save(fig, out_dir, name)


def plot_density_comparison(grid, mc_samples, n_total, out_dir,
                            name="fp_density.png", kernel_cells=5):
    from scipy.ndimage import gaussian_filter1d
    counts, _ = np.histogram(np.clip(mc_samples, grid.edges[0], None),
                             bins=grid.edges)
    mc_dens = counts / (n_total * grid.widths)
    sm = lambda v: gaussian_filter1d(v, kernel_cells, mode="nearest")
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(grid.centers, sm(grid.P), lw=1.2, label="forward PDE")
    ax.plot(grid.centers, sm(mc_dens), lw=1.0, ls="--",
            label="Monte-Carlo histogram")
    ax.set_xlim(grid.edges[0], min(grid.edges[-1],
                                   grid.centers[np.argmax(grid.P)] * 6))
    ax.set_xlabel("density function u")
    ax.set_ylabel("probability density")
    ax.legend(fontsize=8)
    ax.set_title(f"density cross-validation at t={grid.time:g}")
    return _save(fig, out_dir, name)


def plot_hitting_times(sample, out_dir, name="hitting.png"):
    from .analysis import first_passage_cdf
    hits = np.sort(sample.times[np.isfinite(sample.times)])
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    n = sample.n_paths
    ax.semilogx(hits, np.arange(1, len(hits) + 1) / n, lw=1.0,
                label="empirical")
    tt = np.geomspace(max(hits[0], 1e-5), sample.horizon, 400)
    ax.semilogx(tt, first_passage_cdf(tt, sample.level), ls="--", lw=1.0,
                label="closed form")
    ax.set_xlabel("blow-up time after switch-on")
    ax.set_ylabel("P(T <= t)")
    ax.legend(fontsize=8)
    ax.set_title(f"first passage to level L={sample.level:.6f}")
    return _save(fig, out_dir, name)
