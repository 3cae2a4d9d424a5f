"""Reproducible Brownian drivers and path integrators for the hybrid
deterministic/stochastic collapse system.

The deterministic collapse runs on [0, t_eps]; at t_eps multiplicative white
noise with the same coefficient is switched on.  Schemes:

``ito-euler``
    Left-endpoint (Euler-Maruyama) chain u_{k+1} = u_k + c(u_k) dB_k.  The
    unclamped chain is an exact discrete martingale; paths that exceed the
    cap are frozen at their first-exceedance value so the stopped mean is
    preserved exactly, and excursions below 1 are clamped to 1 and counted.
``strat-heun``
    Midpoint predictor-corrector consistent with the Stratonovich sum.
``strat-exact``
    Closed-form solution through the phase map: the path blows up exactly
    when the driver hits the level (pi/2 - F(u_eps)) / sqrt(kappa).

Reproducibility contract: path ``i`` of a run draws all of its randomness
from a generator seeded by a documented 64-bit mix of (master_seed, i), so
results are bit-identical for any worker count or batching.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .collapse import (HALF_PI, ModelParams, collapse_phase,
                       density_from_phase_remaining, growth_coefficient,
                       implicit_time_of_u, phase_remaining, solve_density_ode,
                       stratonovich_drift as _strat_drift)
from .errors import ConfigError

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def _splitmix64(x):
    """One round of the splitmix64 mixing function."""
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngSpec:
    """Master seed plus the per-path stream derivation rule.

    Path ``i`` uses seed_i = splitmix64(splitmix64(master_seed) XOR
    (i * 0x9E3779B97F4A7C15 mod 2^64)), which then seeds numpy's PCG64.
    """

    master_seed: int

    def path_seed(self, path_index):
        base = _splitmix64(int(self.master_seed) & _MASK)
        return _splitmix64(base ^ ((int(path_index) * _GOLDEN) & _MASK))

    def generator(self, path_index):
        return np.random.Generator(np.random.PCG64(self.path_seed(path_index)))

    def record(self):
        return {"master_seed": int(self.master_seed),
                "derivation": "splitmix64(splitmix64(seed) ^ i*golden) -> PCG64"}


@dataclass
class SamplePath:
    """One discretized trajectory with its Brownian driver.

    ``t`` is absolute comoving time; the driver starts at 0 at the switch-on
    time.  ``status`` is one of "alive", "capped" (Ito cap exceedance,
    frozen at the exceedance value), or "blown-up" (Stratonovich first
    passage / cap crossing).
    """

    scheme: str
    t: np.ndarray
    u: np.ndarray
    driver: np.ndarray
    status: str = "alive"
    cap: float = math.inf
    cap_time: float | None = None
    hit_time: float | None = None
    clamp_count: int = 0
    u_eps: float | None = None
    switch_index: int = 0
    kappa: float | None = None


@dataclass
class Ensemble:
    """Snapshot-level summary of n reproducible paths sharing one grid.

    The snapshot matrices are (n_paths x n_snapshots): the path value ``u``,
    its running supremum ``sup`` (over the full fine grid, not just the
    snapshots), the accumulated quadratic variation ``qv`` of the path, and
    the co-accumulated integral ``ipsisq`` of the squared coefficient.
    ``status`` is 0 alive, 1 capped/blown-up.  When built with
    ``store="full"`` the fine-grid paths (decimated by ``store_stride``)
    and drivers are kept as well.
    """

    params: ModelParams
    scheme: str
    u_eps: float
    dt: float
    horizon: float
    cap: float
    n_paths: int
    rng: RngSpec
    snap_times: np.ndarray
    u: np.ndarray
    sup: np.ndarray
    qv: np.ndarray
    ipsisq: np.ndarray
    status: np.ndarray
    cap_time: np.ndarray
    clamp_count: int
    n_steps: int
    store: str = "summary"
    fine_times: np.ndarray | None = None
    fine_u: np.ndarray | None = None
    fine_driver: np.ndarray | None = None
    fine_qv: np.ndarray | None = None
    fine_ipsisq: np.ndarray | None = None
    extra_drift: float = 0.0
    psi_override: float | None = None

    @property
    def clamp_rate(self):
        return self.clamp_count / (self.n_paths * self.n_steps)

    @property
    def capped_fraction(self):
        return float(np.mean(self.status != 0))

    def mean_stderr(self, col):
        x = self.u[:, col]
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))

    def summary(self):
        means = self.u.mean(axis=0)
        stderrs = self.u.std(axis=0, ddof=1) / math.sqrt(self.n_paths)
        return {
            "scheme": self.scheme,
            "n_paths": self.n_paths,
            "u_eps": self.u_eps,
            "dt": self.dt,
            "horizon": self.horizon,
            "cap": self.cap,
            "seed": self.rng.record(),
            "snap_times": self.snap_times.tolist(),
            "mean": means.tolist(),
            "stderr": stderrs.tolist(),
            "m2": (self.u ** 2).mean(axis=0).tolist(),
            "qv_mean": self.qv.mean(axis=0).tolist(),
            "capped_fraction": self.capped_fraction,
            "clamp_rate": self.clamp_rate,
        }

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        meta = {
            "params": {"G": self.params.G, "rho0": self.params.rho0,
                       "eps": self.params.eps},
            "scheme": self.scheme, "u_eps": self.u_eps, "dt": self.dt,
            "horizon": self.horizon, "cap": self.cap,
            "n_paths": self.n_paths, "n_steps": self.n_steps,
            "seed": self.rng.record(), "store": self.store,
            "clamp_count": self.clamp_count,
        }
        with open(os.path.join(directory, "ensemble.json"), "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
        arrays = {"snap_times": self.snap_times, "u": self.u, "sup": self.sup,
                  "qv": self.qv, "ipsisq": self.ipsisq, "status": self.status,
                  "cap_time": self.cap_time}
        if self.store == "full":
            arrays.update(fine_times=self.fine_times, fine_u=self.fine_u,
                          fine_driver=self.fine_driver, fine_qv=self.fine_qv,
                          fine_ipsisq=self.fine_ipsisq)
        np.savez_compressed(os.path.join(directory, "ensemble.npz"), **arrays)

    @staticmethod
    def load(directory):
        with open(os.path.join(directory, "ensemble.json")) as fh:
            meta = json.load(fh)
        data = np.load(os.path.join(directory, "ensemble.npz"))
        params = ModelParams.create(G=meta["params"]["G"],
                                    rho0=meta["params"]["rho0"],
                                    eps=meta["params"]["eps"])
        ens = Ensemble(
            params=params, scheme=meta["scheme"], u_eps=meta["u_eps"],
            dt=meta["dt"], horizon=meta["horizon"], cap=meta["cap"],
            n_paths=meta["n_paths"], rng=RngSpec(meta["seed"]["master_seed"]),
            snap_times=data["snap_times"], u=data["u"], sup=data["sup"],
            qv=data["qv"], ipsisq=data["ipsisq"], status=data["status"],
            cap_time=data["cap_time"], clamp_count=meta["clamp_count"],
            n_steps=meta["n_steps"], store=meta["store"])
        if meta["store"] == "full":
            ens.fine_times = data["fine_times"]
            ens.fine_u = data["fine_u"]
            ens.fine_driver = data["fine_driver"]
            ens.fine_qv = data["fine_qv"]
            ens.fine_ipsisq = data["fine_ipsisq"]
        return ens


def default_snapshots(horizon, dt, n_uniform=51, n_early=12, n_dyadic=6):
    """Snapshot times after switch-on: dense early points, a uniform grid,
    and dyadic increment ladders at a few anchors (mean-square increment
    scaling needs pairs of snapshots at doubling gaps)."""
    early = horizon * np.geomspace(2e-3, 5e-2, n_early)
    uniform = np.linspace(0.0, horizon, n_uniform)
    base = 10.0 * dt
    blocks = []
    for anchor in (0.0, horizon / 8.0, horizon / 4.0):
        gaps = base * 2.0 ** np.arange(n_dyadic)
        blocks.append(anchor + np.concatenate([[0.0], gaps]))
    times = np.unique(np.concatenate([[0.0], early, uniform] + blocks))
    steps = np.unique(np.round(times / dt).astype(int))
    return steps[steps <= int(round(horizon / dt))]


def _coefficient(u, kappa, psi_override):
    if psi_override is not None:
        return np.full_like(u, psi_override)
    x = np.maximum(u - 1.0, 0.0)
    return math.sqrt(kappa) * u * u * np.sqrt(x)


def _simulate_block(params, u_eps, block_indices, steps, dt, cap, rng,
                    scheme, snap_steps, store_stride, noise_scale,
                    psi_override, extra_drift, t_chunk=8192):
    """Advance one block of paths; returns that block's summary arrays."""
    nb = len(block_indices)
    kappa = params.kappa
    sqdt = math.sqrt(dt)
    gens = [rng.generator(i) for i in block_indices]

    u = np.full(nb, u_eps)
    driver = np.zeros(nb)
    sup = np.full(nb, u_eps)
    qv = np.zeros(nb)
    ipsisq = np.zeros(nb)
    frozen = np.zeros(nb, dtype=bool)
    status = np.zeros(nb, dtype=np.int8)
    cap_time = np.full(nb, np.nan)
    clamps = 0

    n_snap = len(snap_steps)
    snap_u = np.empty((nb, n_snap))
    snap_sup = np.empty((nb, n_snap))
    snap_qv = np.empty((nb, n_snap))
    snap_ip = np.empty((nb, n_snap))
    snap_pos = 0
    if snap_steps[0] == 0:
        snap_u[:, 0] = u
        snap_sup[:, 0] = sup
        snap_qv[:, 0] = 0.0
        snap_ip[:, 0] = 0.0
        snap_pos = 1

    full = store_stride is not None
    if full:
        stored = steps // store_stride + 1
        fine_u = np.empty((nb, stored))
        fine_b = np.empty((nb, stored))
        fine_qv = np.empty((nb, stored))
        fine_ip = np.empty((nb, stored))
        fine_u[:, 0] = u
        fine_b[:, 0] = 0.0
        fine_qv[:, 0] = 0.0
        fine_ip[:, 0] = 0.0
        fpos = 1
    else:
        fine_u = fine_b = fine_qv = fine_ip = None

    k = 0
    for c0 in range(0, steps, t_chunk):
        m = min(t_chunk, steps - c0)
        Z = np.empty((nb, m))
        for r in range(nb):
            Z[r] = gens[r].standard_normal(m)
        if noise_scale != 1.0:
            Z *= noise_scale
        Z *= sqdt
        for j in range(m):
            z = Z[:, j]
            coef = _coefficient(u, kappa, psi_override)
            coef[frozen] = 0.0
            if scheme == "strat-heun":
                pred = np.maximum(u + coef * z, 1.0)
                cpred = _coefficient(pred, kappa, psi_override)
                cpred[frozen] = 0.0
                du = 0.5 * (coef + cpred) * z
            else:
                du = coef * z
            if extra_drift:
                du = du + np.where(frozen, 0.0, extra_drift * dt)
            u_new = u + du
            low = u_new < 1.0
            if low.any():
                clamps += int(np.count_nonzero(low & ~frozen))
                np.maximum(u_new, 1.0, out=u_new)
            qv += (u_new - u) ** 2
            ipsisq += coef * coef * dt
            driver += np.where(frozen, 0.0, z)
            u = u_new
            k += 1
            newly = (u >= cap) & ~frozen
            if newly.any():
                frozen |= newly
                status[newly] = 1
                cap_time[newly] = k * dt
            np.maximum(sup, u, out=sup)
            if snap_pos < n_snap and k == snap_steps[snap_pos]:
                snap_u[:, snap_pos] = u
                snap_sup[:, snap_pos] = sup
                snap_qv[:, snap_pos] = qv
                snap_ip[:, snap_pos] = ipsisq
                snap_pos += 1
            if full and k % store_stride == 0:
                fine_u[:, fpos] = u
                fine_b[:, fpos] = driver
                fine_qv[:, fpos] = qv
                fine_ip[:, fpos] = ipsisq
                fpos += 1
    return {"u": snap_u, "sup": snap_sup, "qv": snap_qv, "ip": snap_ip,
            "status": status, "cap_time": cap_time, "clamps": clamps,
            "fine_u": fine_u, "fine_b": fine_b, "fine_qv": fine_qv,
            "fine_ip": fine_ip}


def _worker_count(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("DUSTLAB_WORKERS")
    return max(1, int(env)) if env else 1


def _run_blocks(n_paths, block_size, task, workers):
    """Run `task(block_indices)` over a fixed partition; order-stable."""
    blocks = [np.arange(b0, min(b0 + block_size, n_paths))
              for b0 in range(0, n_paths, block_size)]
    w = _worker_count(workers)
    if w == 1:
        return [task(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=w) as pool:
        futures = [pool.submit(task, b) for b in blocks]
        return [f.result() for f in futures]


def _assemble(params, scheme, u_eps, dt, horizon, cap, n_paths, rng,
              snap_steps, results, steps, store_stride, extra_drift,
              psi_override):
    snap_times = snap_steps * dt
    ens = Ensemble(
        params=params, scheme=scheme, u_eps=u_eps, dt=dt, horizon=horizon,
        cap=cap, n_paths=n_paths, rng=rng, snap_times=snap_times,
        u=np.vstack([r["u"] for r in results]),
        sup=np.vstack([r["sup"] for r in results]),
        qv=np.vstack([r["qv"] for r in results]),
        ipsisq=np.vstack([r["ip"] for r in results]),
        status=np.concatenate([r["status"] for r in results]),
        cap_time=np.concatenate([r["cap_time"] for r in results]),
        clamp_count=sum(r["clamps"] for r in results),
        n_steps=steps, extra_drift=extra_drift, psi_override=psi_override)
    if store_stride is not None:
        ens.store = "full"
        ens.fine_times = np.arange(results[0]["fine_u"].shape[1]) * (
            dt * store_stride)
        ens.fine_u = np.vstack([r["fine_u"] for r in results])
        ens.fine_driver = np.vstack([r["fine_b"] for r in results])
        ens.fine_qv = np.vstack([r["fine_qv"] for r in results])
        ens.fine_ipsisq = np.vstack([r["fine_ip"] for r in results])
    return ens


def simulate_ito(params, u_eps, n_paths, dt, horizon, cap, rng,
                 snapshots=None, store="summary", store_stride=20,
                 workers=None, noise_scale=1.0, psi_override=None,
                 extra_drift=0.0, block_size=2500):
    """Euler-Maruyama ensemble of the density diffusion started at u_eps.

    ``horizon`` is the duration after switch-on.  Paths exceeding ``cap``
    freeze at their first-exceedance value (stopped-martingale semantics);
    steps landing below 1 clamp to 1 and are counted.  ``psi_override``
    forces a constant coefficient (testing hook); ``extra_drift`` injects a
    constant drift (negative-control hook).
    """
    if u_eps < 1.0:
        raise ConfigError("u_eps must be >= 1")
    if n_paths < 1:
        raise ConfigError("need at least one path")
    steps = int(round(horizon / dt))
    snap_steps = (default_snapshots(horizon, dt) if snapshots is None
                  else np.unique(np.round(np.asarray(snapshots) / dt).astype(int)))
    snap_steps = snap_steps[snap_steps <= steps]
    stride = store_stride if store == "full" else None
    task = lambda idx: _simulate_block(
        params, u_eps, idx, steps, dt, cap, rng, "ito-euler", snap_steps,
        stride, noise_scale, psi_override, extra_drift)
    results = _run_blocks(n_paths, block_size, task, workers)
    return _assemble(params, "ito-euler", u_eps, dt, horizon, cap, n_paths,
                     rng, snap_steps, results, steps, stride, extra_drift,
                     psi_override)


def simulate_stratonovich(params, u_eps, n_paths, dt, horizon, cap, rng,
                          variant="heun", snapshots=None, store="summary",
                          store_stride=20, workers=None, noise_scale=1.0,
                          psi_override=None, block_size=2500):
    """Stratonovich ensemble: midpoint Heun scheme or the exact phase map.

    The exact variant evaluates u(t) = Finv(F(u_eps) + sqrt(kappa) B(t))
    and declares blow-up at the first step where the argument reaches
    pi/2, refining the hitting time by linear interpolation of the driver
    across the bracketing step.
    """
    if variant == "heun":
        steps = int(round(horizon / dt))
        snap_steps = (default_snapshots(horizon, dt) if snapshots is None
                      else np.unique(np.round(np.asarray(snapshots) / dt).astype(int)))
        stride = store_stride if store == "full" else None
        task = lambda idx: _simulate_block(
            params, u_eps, idx, steps, dt, cap, rng, "strat-heun",
            snap_steps, stride, noise_scale, psi_override, 0.0)
        results = _run_blocks(n_paths, block_size, task, workers)
        ens = _assemble(params, "strat-heun", u_eps, dt, horizon, cap,
                        n_paths, rng, snap_steps, results, steps, stride,
                        0.0, None)
        # cap crossings under a Stratonovich scheme are blow-up proxies
        return ens
    if variant == "exact":
        paths = [stratonovich_exact_path(params, u_eps, dt, horizon, rng, i,
                                         noise_scale=noise_scale)
                 for i in range(n_paths)]
        return paths
    raise ConfigError(f"unknown Stratonovich variant: {variant!r}")


def stratonovich_exact_path(params, u_eps, dt, horizon, rng, path_index,
                            noise_scale=1.0, store_stride=1):
    """Single exact-solution Stratonovich path on a uniform grid."""
    steps = int(round(horizon / dt))
    gen = rng.generator(path_index)
    z = gen.standard_normal(steps) * (noise_scale * math.sqrt(dt))
    b = np.concatenate([[0.0], np.cumsum(z)])
    t = params.t_eps + np.arange(steps + 1) * dt
    gap0 = float(phase_remaining(u_eps))
    arg = gap0 - params.sqrt_kappa * b
    # gaps beyond pi/2 mean the path sits on the u = 1 boundary
    arg = np.minimum(arg, HALF_PI)
    crossed = arg <= 0.0
    if crossed.any():
        k = int(np.argmax(crossed))
        level = gap0 / params.sqrt_kappa
        frac = (level - b[k - 1]) / (b[k] - b[k - 1])
        hit_time = t[k - 1] + frac * dt
        sl = slice(0, k, store_stride)
        u = density_from_phase_remaining(np.maximum(arg[sl], 1e-300))
        return SamplePath(scheme="strat-exact", t=t[sl], u=u, driver=b[sl],
                          status="blown-up", hit_time=float(hit_time),
                          u_eps=u_eps, kappa=params.kappa)
    sl = slice(0, steps + 1, store_stride)
    u = density_from_phase_remaining(arg[sl])
    return SamplePath(scheme="strat-exact", t=t[sl], u=u, driver=b[sl],
                      status="alive", u_eps=u_eps, kappa=params.kappa)


def hybrid_drive(params, u0=1.0 + 1e-12, scheme="ito-euler", dt=1e-5,
                 horizon=None, cap=1e3, rng=None, path_index=0,
                 noise_scale=1.0, det_samples=512):
    """Drive the full hybrid system: deterministic leg, then noise.

    Integrates the collapse ODE on [0, t_eps], records u_eps, then runs the
    chosen stochastic scheme on [t_eps, horizon].  With ``noise_scale=0``
    the system degenerates to the deterministic ODE over the whole range
    (the switch-on becomes a no-op).
    """
    if params.t_eps >= params.t_star:
        raise ConfigError("t_eps must lie strictly before the blow-up time")
    if horizon is None:
        horizon = params.t_eps + 0.1 * params.t_star
    if horizon <= params.t_eps:
        raise ConfigError("horizon must exceed the switch-on time")
    rng = rng if rng is not None else RngSpec(0)

    det = solve_density_ode(params, u0=u0, t_end=params.t_eps)
    u_eps = float(det.u[-1])
    # record the deterministic leg at accepted states (interpolating would
    # break the phase-residual oracle between steps); decimate by index
    stride = max(1, len(det.t) // det_samples)
    keep = np.unique(np.concatenate([np.arange(0, len(det.t), stride),
                                     [len(det.t) - 1]]))
    td = det.t[keep]
    ud = det.u[keep]

    if noise_scale == 0.0:
        cont = solve_density_ode(params, u0=u_eps, t0=params.t_eps,
                                 t_end=horizon, u_detect=cap)
        t = np.concatenate([td, cont.t[1:]])
        u = np.concatenate([ud, cont.u[1:]])
        return SamplePath(scheme=scheme, t=t, u=u,
                          driver=np.zeros_like(t),
                          status="blown-up" if cont.blown_up else "alive",
                          cap=cap, hit_time=cont.blowup_time, u_eps=u_eps,
                          switch_index=len(td) - 1, kappa=params.kappa)

    duration = horizon - params.t_eps
    if scheme == "strat-exact":
        sp = stratonovich_exact_path(params, u_eps, dt, duration, rng,
                                     path_index, noise_scale=noise_scale)
        t = np.concatenate([td, sp.t[1:]])
        u = np.concatenate([ud, sp.u[1:]])
        drv = np.concatenate([np.zeros_like(td), sp.driver[1:]])
        return SamplePath(scheme=scheme, t=t, u=u, driver=drv,
                          status=sp.status, cap=cap, hit_time=sp.hit_time,
                          u_eps=u_eps, switch_index=len(td) - 1,
                          kappa=params.kappa)

    steps = int(round(duration / dt))
    gen = rng.generator(path_index)
    z = gen.standard_normal(steps) * (noise_scale * math.sqrt(dt))
    u_path = np.empty(steps + 1)
    b_path = np.empty(steps + 1)
    u_path[0], b_path[0] = u_eps, 0.0
    u_k = u_eps
    frozen = False
    clamps = 0
    status, cap_time = "alive", None
    for k in range(steps):
        coef = 0.0 if frozen else float(growth_coefficient(u_k, params.kappa))
        if scheme == "strat-heun" and not frozen:
            pred = max(u_k + coef * z[k], 1.0)
            coef = 0.5 * (coef + float(growth_coefficient(pred, params.kappa)))
        u_next = u_k + coef * z[k]
        if u_next < 1.0:
            clamps += 1
            u_next = 1.0
        if not frozen and u_next >= cap:
            frozen = True
            status = "capped" if scheme == "ito-euler" else "blown-up"
            cap_time = params.t_eps + (k + 1) * dt
        b_path[k + 1] = b_path[k] + (0.0 if frozen and u_next == u_k else z[k])
        u_k = u_next
        u_path[k + 1] = u_k
    ts = params.t_eps + np.arange(steps + 1) * dt
    t = np.concatenate([td, ts[1:]])
    u = np.concatenate([ud, u_path[1:]])
    drv = np.concatenate([np.zeros_like(td), b_path[1:]])
    return SamplePath(scheme=scheme, t=t, u=u, driver=drv, status=status,
                      cap=cap, cap_time=cap_time,
                      hit_time=cap_time if status == "blown-up" else None,
                      clamp_count=clamps, u_eps=u_eps,
                      switch_index=len(td) - 1, kappa=params.kappa)


def ito_stratonovich_drift(params, u):
    """Drift of the Ito form of the midpoint-convention SDE.

    b(u) = c(u) c'(u) = kappa u^3 (5u - 4) / 2; polynomial, finite for all
    u (the square-root factors cancel), with b(1) = kappa/2.
    """
    return _strat_drift(u, params.kappa)


def quadratic_variation(path_or_values):
    """Running sum of squared increments of a path.

    Accepts a :class:`SamplePath` (uses its u series) or a plain array.
    Returns an array aligned with the input grid (first entry 0).
    """
    v = path_or_values.u if isinstance(path_or_values, SamplePath) else \
        np.asarray(path_or_values, dtype=float)
    out = np.empty_like(v)
    out[0] = 0.0
    np.cumsum(np.diff(v) ** 2, out=out[1:])
    return out


def gbm_transform(path, y0=1.0):
    """Exponential transform Y solving dY = Y du along a recorded path.

    Y_k = y0 * exp( sum_j c(u_j) dB_j - 1/2 sum_j c(u_j)^2 dt_j ), computed
    from the stored driver increments; requires a path with its driver.
    """
    if path.driver is None:
        raise ValueError("path has no recorded driver")
    if path.kappa is None:
        raise ValueError("path carries no model constant; cannot form the "
                         "coefficient")
    t, u, b = path.t, path.u, path.driver
    if path.switch_index:
        t = t[path.switch_index:]
        u = u[path.switch_index:]
        b = b[path.switch_index:]
    dB = np.diff(b)
    dt = np.diff(t)
    # coefficient evaluated at the left endpoint, matching the Ito sum
    coef = growth_coefficient(u[:-1], path.kappa)
    expo = np.concatenate([[0.0], np.cumsum(coef * dB - 0.5 * coef ** 2 * dt)])
    y = y0 * np.exp(expo)
    return SamplePath(scheme="gbm", t=t, u=y, driver=b, status=path.status,
                      cap=path.cap, u_eps=y0, kappa=path.kappa)


def gbm_transform_with_coefficient(path, coef_values, y0=1.0):
    """Exponential transform with caller-supplied coefficient samples.

    ``coef_values`` are the coefficient values at the left endpoints of the
    recorded grid (length len(path.t) - 1); used for forced-constant and
    custom-coefficient checks.
    """
    dB = np.diff(path.driver)
    dt = np.diff(path.t)
    coef = np.asarray(coef_values, dtype=float)
    expo = np.concatenate([[0.0], np.cumsum(coef * dB - 0.5 * coef ** 2 * dt)])
    return SamplePath(scheme="gbm", t=path.t, u=y0 * np.exp(expo),
                      driver=path.driver, status=path.status, u_eps=y0)


def gbm_constant_sigma_moments(sigma, n_paths, steps, horizon, rng,
                               block_size=20000, workers=None):
    """Terminal moments of the constant-coefficient exponential martingale.

    Builds drivers in blocks, applies the discrete exponential-martingale
    formula (exact for a constant coefficient), and returns mean/second
    moment with standard errors.
    """
    dt = horizon / steps
    sums = np.zeros(4)  # sum Y, sum Y^2, sum Y^4 (for stderr of m2), count

    def task(idx):
        nb = len(idx)
        acc = np.zeros(4)
        z = np.empty((nb, steps))
        for r, i in enumerate(idx):
            z[r] = rng.generator(int(i)).standard_normal(steps)
        b_T = z.sum(axis=1) * math.sqrt(dt)
        y = np.exp(sigma * b_T - 0.5 * sigma ** 2 * horizon)
        acc[0] = y.sum()
        acc[1] = (y ** 2).sum()
        acc[2] = (y ** 4).sum()
        acc[3] = nb
        return acc

    results = _run_blocks(n_paths, block_size, task, workers)
    for r in results:
        sums += r
    n = sums[3]
    mean = sums[0] / n
    m2 = sums[1] / n
    m4 = sums[2] / n
    se_mean = math.sqrt(max(m2 - mean ** 2, 0.0) / n)
    se_m2 = math.sqrt(max(m4 - m2 ** 2, 0.0) / n)
    return {"mean": mean, "stderr_mean": se_mean, "m2": m2,
            "stderr_m2": se_m2, "n": int(n)}


# ---------------------------------------------------------------------------
# first-passage of the exact Stratonovich solution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FirstPassageGrid:
    """Piecewise-relative monitoring grid for driver first passage.

    Each piece (lo, hi, eta) advances t -> t*(1 + eta^2) on [lo, hi]; finer
    eta where the hitting-time distribution carries mass.  The bias of
    grid-monitored passage is O(eta) in distribution (documented; no bridge
    correction by design).
    """

    t0: float = 1e-4
    pieces: tuple = ((1e-4, 2e-3, 0.05), (2e-3, 0.1, 0.0065),
                     (0.1, float("inf"), 0.005))

    def times(self, horizon):
        ts = [0.0, min(self.t0, horizon)]
        t = ts[-1]
        for lo, hi, eta in self.pieces:
            hi = min(hi, horizon)
            while t < hi:
                t = min(t * (1.0 + eta * eta), hi)
                ts.append(t)
            if t >= horizon:
                break
        return np.asarray(ts)


@dataclass
class FirstPassageSample:
    """Per-path hitting times of the blow-up level, censored at the horizon."""

    level: float
    horizon: float
    times: np.ndarray  # np.inf marks a censored path

    @property
    def n_paths(self):
        return len(self.times)

    @property
    def hit_count(self):
        return int(np.isfinite(self.times).sum())

    @property
    def censored_count(self):
        return self.n_paths - self.hit_count


def hitting_level(params, u_eps):
    """Driver level whose first passage is the exact-solution blow-up.

    L(u_eps) = (pi/2 - F(u_eps)) / sqrt(kappa); equals the deterministic
    time remaining to total collapse from u_eps.
    """
    return float(phase_remaining(u_eps)) / params.sqrt_kappa


def first_passage_times(params, u_eps, n_paths, horizon, rng, grid=None,
                        block_size=2500, stage_len=2500, workers=None):
    """Exact-Stratonovich blow-up times as driver first passage to L(u_eps).

    Brownian drivers are monitored on the piecewise-relative grid; the
    first grid crossing is refined by linear interpolation within the
    bracketing step.  Paths are abandoned after crossing, so the cost is
    concentrated where paths are still alive.
    """
    level = hitting_level(params, u_eps)
    grid = grid if grid is not None else FirstPassageGrid()
    ts = grid.times(horizon)
    dts = np.diff(ts)
    sq = np.sqrt(dts)
    nsteps = len(dts)
    bounds = list(range(0, nsteps, stage_len)) + [nsteps]

    def task(idx):
        nb = len(idx)
        gens = [rng.generator(int(i)) for i in idx]
        hits = np.full(nb, np.inf)
        alive = np.arange(nb)
        last = np.zeros(nb)
        for s0, s1 in zip(bounds[:-1], bounds[1:]):
            if len(alive) == 0:
                break
            m = s1 - s0
            z = np.empty((len(alive), m))
            for r, a in enumerate(alive):
                z[r] = gens[a].standard_normal(m)
            np.multiply(z, sq[s0:s1][None, :], out=z)
            b = np.cumsum(z, axis=1)
            b += last[:, None]
            crossed = b >= level
            any_cross = crossed.any(axis=1)
            first = np.argmax(crossed, axis=1)
            for r in np.where(any_cross)[0]:
                k = first[r]
                b_prev = last[r] if k == 0 else b[r, k - 1]
                frac = (level - b_prev) / (b[r, k] - b_prev)
                hits[alive[r]] = ts[s0 + k] + frac * (ts[s0 + k + 1] - ts[s0 + k])
            keep = ~any_cross
            alive = alive[keep]
            last = b[keep, -1]
        return hits

    results = _run_blocks(n_paths, block_size, task, workers)
    return FirstPassageSample(level=level, horizon=horizon,
                              times=np.concatenate(results))
