"""Named experiments, one per acceptance check, and the runner that writes
their outputs.

Every experiment takes a resolved settings dict plus SimParams and returns
a list of Check records and a dict of CSV tables.  ``run_experiment`` layers
the experiment defaults under the explicit config keys, runs it, and writes
``<name>.csv`` tables, ``report.json`` and ``config.resolved`` into the output
directory.  Path work is split into fixed-size chunks so that the numbers do
not depend on the worker count.
"""
from concurrent.futures import ProcessPoolExecutor
import csv
import itertools
import json
import math
import os
import time
import traceback

import numpy as np

from . import frames as fr
from .config import PARAM_KEYS, build_params, format_config
from .linalg import MatrixState, Sector, conjugate, group_residual
from .matrix_process import simulate_matrix_batch
from .noise import NoiseStream, haar_sample, resolve_seed
from .oracles import (GibbsSpec, gap_hit_cdf_printed, gap_hit_cdf_rescaled, ou_bessel_hit_probability,
                      rejection_sample_gibbs, sample_tridiagonal_beta, tridiagonal_gate)
from .particles import (coupled_error_batch, delta_bound_constant, delta_pair_ratio, integrate_particles,
                        s_statistic, simulate_batch, simulate_gap_first_passage, sup_error)
from .stats import (Check, ExperimentReport, _jsonable, censored_ks, distribution_distance,
                    empirical_drift_diffusion, rho_alpha_check, two_sample_ks)

DEFAULTS = {
    "stationary-law": dict(d=3, sector="hermitian", p=0.5, gamma=1.0, T=10.0, n=200, m=10, paths=10_000,
                           paths_d2=10_000, reference_samples=100_000, gate_samples=100_000),
    "coupling-convergence": dict(d=3, sector="symmetric", p=0.5, gamma=1.0, T=1.0, delta=0.002, dt=6.25e-5,
                                 n=100, paths=50, n_values=(100, 400, 1600), record_every=10),
    "delta-scheme": dict(d=2, sector="symmetric", p=0.4, gamma=1.0, T=1.0, dt=1e-4, n=100, paths=50,
                         deltas=(0.02, 0.01, 0.005), record_every=10),
    "no-collision": dict(d=3, p=1.0, gamma=1.0, T=1.0, dt=1e-4, n=100, paths=1000, collision_tol=1e-6,
                         sectors=("symmetric", "hermitian")),
    "collision-times": dict(d=2, sector="symmetric", p=0.2, gamma=1.0, T=5.0, dt=1e-3, n=100, paths=1000,
                            threshold=0.8),
    "s-drift": dict(d=4, sector="symmetric", p=0.5, gamma=1.0, T=1e-3, dt=1e-4, n=100, paths=100_000, h=1e-3,
                    lambda0=tuple(float(x) for x in np.array([-1.5, -0.5, 0.5, 1.5]) * math.sqrt(3.0 / 40.0)),
                    rho_paths=10_000, rho_d=3, rho_lambda0=(-1.0, 0.0, 1.0), rho_dt=1e-4, rho_horizon=0.5,
                    rho_points=5, floor=0.05, rho_tol=1e-2, rho_record_every=10),
    "frame-convergence": dict(d=3, sector="hermitian", p=0.5, gamma=1.0, T=0.05, dt=1e-4, n=100, m=10,
                              paths=10_000, lambda0=(-2.0, 0.0, 2.0), n_values=(100, 400)),
    "collision-frame": dict(d=3, sector="symmetric", p=0.3, gamma=1.0, T=2.0, dt=5e-5, n=100, paths=1000,
                            max_paths=4000, handoff_tol=0.1, cauchy_etas=(0.08, 0.04, 0.02, 0.01),
                            angle_etas=tuple(10.0 ** (-2 * k) for k in range(1, 33)), dphi=0.01),
    "invariance": dict(d=3, sector="symmetric", p=0.5, gamma=1.0, T=1.0, n=100, m=10, paths=10_000,
                       haar_index=0),
    "bessel-law": dict(d=2, sector="symmetric", p=0.3, delta=0.1, paths=10_000, t_max=1.0, kappa=1e-3),
}


class RegistryError(KeyError):
    def __str__(self):
        return str(self.args[0])


def _chunks(paths, size):
    paths = np.asarray(paths, dtype=np.int64)
    return [paths[i:i + size] for i in range(0, paths.size, size)]


def map_chunks(fn, paths, threads=1, chunk=1000, **kw):
    """Apply ``fn(chunk_paths, **kw)`` over fixed-size chunks, in order."""
    parts = _chunks(paths, chunk)
    if threads <= 1 or len(parts) <= 1:
        return [fn(c, **kw) for c in parts]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        futs = [ex.submit(fn, c, **kw) for c in parts]
        return [f.result() for f in futs]


def _check(check_id, claim, statistic, threshold, passed, seed, t0, **details):
    return Check(check_id, claim, statistic, threshold, bool(passed), seed, time.perf_counter() - t0, details)


# ---------------------------------------------------------------- workers

def _matrix_terminal(paths, params, M0=None):
    K = int(round(params.n * params.T))
    b = simulate_matrix_batch(params, paths, M0=M0, record_every=K)
    return b.eigenvalues[:, -1], b.small_gaps


def _matrix_frames(paths, params):
    K = int(round(params.n * params.T))
    b = simulate_matrix_batch(params, paths, keep_frames=True, record_every=K)
    return fr.overlap_statistic(b.frames[:, -1], b.frames[:, 0]), float(np.max(group_residual(b.frames[:, -1])))


def _particle_terminal(paths, params, mode, tol, record_every):
    b = simulate_batch(params, "limit", paths, mode=mode, tol=tol, record_every=record_every)
    return b


def _limit_frames(paths, params):
    K = params.n_steps
    b = integrate_particles(params.lambda0, params.pbeta, params.gamma, params.step, K, params.seed, paths,
                            mode="stop", tol=params.collision_tol, max_level=params.max_level)
    fp, ended, cause, _ = fr.simulate_frame_batch(b.values, b.grid, params.p, params.beta, params.seed, paths,
                                                  stop_times=np.where(np.isfinite(b.first_collision),
                                                                      b.first_collision, np.inf))
    stat = fr.overlap_statistic(fp.frames[:, -1], fp.frames[:, 0])
    return stat, ended, fp.max_residual


# ---------------------------------------------------------------- experiments

def exp_stationary_law(cfg, params, seed, threads):
    checks, tables = [], {}
    t0 = time.perf_counter()
    d = params.d
    beff = params.pbeta
    gate_ks, gate_ok = tridiagonal_gate(d, beff, seed, n_samples=cfg["gate_samples"])
    checks.append(_check("tridiagonal-gate", f"tridiagonal sampler matches rejection sampling at d={d}",
                         gate_ks, 0.02, gate_ok, seed, t0))
    t0 = time.perf_counter()
    parts = map_chunks(_matrix_terminal, np.arange(cfg["paths"]), threads, chunk=2000, params=params)
    term = np.concatenate([p[0] for p in parts])
    ref = sample_tridiagonal_beta(d, beff, NoiseStream(seed, 1), size=cfg["reference_samples"])
    ks = [two_sample_ks(term[:, i], ref[:, i]) for i in range(d)]
    checks.append(_check("stationary-d%d" % d, "terminal matrix spectra follow the Gibbs law (tridiagonal oracle)",
                         max(ks), 0.05, gate_ok and max(ks) < 0.05, seed, t0, per_coordinate=ks,
                         small_gaps=sum(len(p[1]) for p in parts)))
    t0 = time.perf_counter()
    p2 = params.with_(d=2, lambda0=None, collision_tol=None)
    parts = map_chunks(_matrix_terminal, np.arange(cfg["paths_d2"]), threads, chunk=2000, params=p2)
    term2 = np.concatenate([p[0] for p in parts])
    ref2 = rejection_sample_gibbs(GibbsSpec(2, beff), NoiseStream(seed, 2), size=cfg["reference_samples"])
    ks2 = [two_sample_ks(term2[:, i], ref2[:, i]) for i in range(2)]
    checks.append(_check("stationary-d2", "terminal matrix spectra follow the Gibbs law (rejection oracle)",
                         max(ks2), 0.03, max(ks2) < 0.03, seed, t0, per_coordinate=ks2))
    tables["terminal_spectra"] = (["path"] + [f"lambda_{i + 1}" for i in range(d)],
                                  [[r] + list(term[r]) for r in range(term.shape[0])])
    tables["terminal_spectra_d2"] = (["path", "lambda_1", "lambda_2"],
                                     [[r] + list(term2[r]) for r in range(term2.shape[0])])
    return checks, tables


def exp_coupling_convergence(cfg, params, seed, threads):
    t0 = time.perf_counter()
    paths = np.arange(cfg["paths"])
    n_values = [int(n) for n in cfg["n_values"]]
    tab = coupled_error_batch(params, n_values, paths, record_every=int(cfg["record_every"]))
    med = np.median(tab.errors, axis=1)
    dec = bool(np.all(np.diff(med) < 0))
    half = bool(med[-1] < 0.5 * med[0])
    checks = [
        _check("median-error-decreasing", "coin-switched system converges to the limit with shared noise",
               [float(x) for x in med], "strictly decreasing", dec, seed, t0, n_values=n_values),
        _check("error-halved", f"error at n={n_values[-1]} below half the error at n={n_values[0]}",
               float(med[-1] / med[0]), 0.5, half, seed, t0),
        _check("delta-bound", "delta-scheme pair within c max(delta) (restarts + 1)",
               float(np.max(tab.delta_bound_ratio)), 1.0, bool(np.max(tab.delta_bound_ratio) <= 1.0), seed, t0,
               constant=tab.bound_constant),
    ]
    rows = []
    for j, n in enumerate(n_values):
        for r in range(paths.size):
            rows.append([n, int(paths[r]), float(tab.errors[j, r]), float(tab.windows[j, r])])
    return checks, {"errors": (["n", "path", "sup_error", "window_end"], rows)}


def exp_delta_scheme(cfg, params, seed, threads):
    t0 = time.perf_counter()
    paths = np.arange(cfg["paths"])
    deltas = sorted(set(float(x) for x in cfg["deltas"]), reverse=True)
    every = int(cfg["record_every"])
    needed = sorted(set(deltas) | {x / 2 for x in deltas}, reverse=True)
    runs = {dl: simulate_batch(params.with_(delta=dl), "delta", paths, record_every=every) for dl in needed}
    grid = runs[needed[0]].grid
    horizon = np.full(paths.size, np.inf)
    med = []
    rows = []
    for dl in deltas:
        e = sup_error(runs[dl].values, runs[dl / 2].values, grid, horizon)
        med.append(float(np.median(e)))
        rows += [[dl, int(paths[r]), float(e[r]), int(runs[dl].restarts[r])] for r in range(paths.size)]
    c = delta_bound_constant(params.d)
    worst = 0.0
    for a, b in itertools.combinations(needed, 2):
        worst = max(worst, float(np.max(delta_pair_ratio(runs[a], runs[b], a, b, c))))
    checks = [
        _check("delta-error-decreasing", "sup |l^delta - l^(delta/2)| decreases with delta",
               med, "strictly decreasing in delta", bool(np.all(np.diff(med) < 0)), seed, t0, deltas=deltas),
        _check("delta-bound", "pairwise distance within c max(delta, delta') (restarts + 1)", worst, 1.0,
               worst <= 1.0, seed, t0, constant=c,
               median_restarts={str(dl): float(np.median(runs[dl].restarts)) for dl in needed}),
    ]
    return checks, {"delta_errors": (["delta", "path", "sup_error", "restarts"], rows)}


def exp_no_collision(cfg, params, seed, threads):
    checks, rows = [], []
    sectors = cfg["sectors"] if "sector" not in cfg["_explicit"] else (cfg["sector"],)
    if isinstance(sectors, str):
        sectors = (sectors,)
    for sec in sectors:
        t0 = time.perf_counter()
        p = params.with_(sector=Sector.parse(sec))
        parts = map_chunks(_particle_terminal, np.arange(cfg["paths"]), threads, chunk=250, params=p,
                           mode="stop", tol=p.collision_tol, record_every=p.n_steps)
        first = np.concatenate([b.first_collision for b in parts])
        n_hit = int(np.sum(np.isfinite(first)))
        checks.append(_check(f"no-collision-{p.sector.value}",
                             f"no gap below {p.collision_tol:g} at p beta = {p.pbeta:g}", n_hit, 0, n_hit == 0,
                             seed, t0, fraction=n_hit / first.size, pbeta=p.pbeta))
        rows += [[p.sector.value, r, float(first[r])] for r in range(first.size)]
    return checks, {"first_collision": (["sector", "path", "first_collision"], rows)}


def exp_collision_times(cfg, params, seed, threads):
    t0 = time.perf_counter()
    parts = map_chunks(_particle_terminal, np.arange(cfg["paths"]), threads, chunk=250, params=params,
                       mode="stop", tol=params.collision_tol, record_every=params.n_steps)
    first = np.concatenate([b.first_collision for b in parts])
    frac = float(np.mean(np.isfinite(first)))
    gap0 = params.lambda0[1] - params.lambda0[0]
    oracle = ou_bessel_hit_probability(gap0, params.pbeta, params.gamma, params.T) if params.d == 2 else None
    thr = float(cfg["threshold"])
    checks = [_check("collisions-occur", f"collision by T={params.T:g} at p beta = {params.pbeta:g}", frac, thr,
                     frac > thr, seed, t0, oracle_probability=oracle,
                     oracle_stderr=None if oracle is None else math.sqrt(oracle * (1 - oracle) / first.size))]
    return checks, {"first_collision": (["path", "first_collision"],
                                        [[r, float(first[r])] for r in range(first.size)])}


def exp_bessel_law(cfg, params, seed, threads):
    t0 = time.perf_counter()
    delta, pbeta, t_max = params.delta, params.pbeta, float(cfg["t_max"])
    parts = map_chunks(_gap_hits, np.arange(cfg["paths"]), threads, chunk=2500, delta=delta, pbeta=pbeta,
                       seed=seed, t_max=t_max, kappa=float(cfg["kappa"]))
    hits = np.concatenate(parts)
    ks_printed = censored_ks(hits, lambda t: gap_hit_cdf_printed(t, delta, pbeta), t_max, hits.size)
    ks_rescaled = censored_ks(hits, lambda t: gap_hit_cdf_rescaled(t, delta, pbeta), t_max, hits.size)
    matches = [name for name, k in (("printed", ks_printed), ("variance-rescaled", ks_rescaled)) if k < 0.05]
    checks = [_check("first-passage-law", "gap hitting time follows the Bessel first-passage law",
                     min(ks_printed, ks_rescaled), 0.05, bool(matches), seed, t0, ks_printed=ks_printed,
                     ks_rescaled=ks_rescaled, matches=matches, hit_fraction=float(np.mean(np.isfinite(hits))))]
    return checks, {"hit_times": (["path", "hit_time"], [[r, float(hits[r])] for r in range(hits.size)])}


def _gap_hits(paths, delta, pbeta, seed, t_max, kappa):
    return simulate_gap_first_passage(delta, pbeta, seed, paths, t_max=t_max, kappa=kappa)


def _s_paths(paths, lam0, coupling, gamma, dt, n_steps, seed, tol, every):
    b = integrate_particles(lam0, coupling, gamma, dt, n_steps, seed, paths, mode="continue", tol=tol,
                            record_every=every)
    return s_statistic(b.values), b.grid


def exp_s_drift(cfg, params, seed, threads):
    checks = []
    t0 = time.perf_counter()
    h = float(cfg["h"])
    steps = int(round(h / params.step))
    parts = map_chunks(_s_paths, np.arange(cfg["paths"]), threads, chunk=10_000, lam0=params.lambda0,
                       coupling=params.pbeta, gamma=params.gamma, dt=params.step, n_steps=steps, seed=seed,
                       tol=params.collision_tol, every=steps)
    S = np.concatenate([p[0] for p in parts])
    grid = parts[0][1]
    d = params.d
    est = empirical_drift_diffusion(S, 0.0, h, times=grid)
    S0 = float(S[0, 0])
    a = 2 * d * (d - 1) * (2 + params.pbeta * d)
    drift_target = a - 2 * params.gamma * S0
    rate_target = 16 * d * S0
    drift_rel = abs(est.drift - drift_target) / abs(drift_target)
    rate_rel = abs(est.diffusion_rate - rate_target) / rate_target
    checks.append(_check("s-drift", "drift of S equals a - 2 gamma S", est.drift, f"{drift_target!r} +- 5%",
                         drift_rel < 0.05, seed, t0, relative_error=drift_rel, stderr=est.drift_stderr, a=a, S0=S0))
    checks.append(_check("s-diffusion", "quadratic variation rate of S equals 16 d S", est.diffusion_rate,
                         f"{rate_target!r} +- 10%", rate_rel < 0.10, seed, t0, relative_error=rate_rel,
                         stderr=est.diffusion_stderr))
    t0 = time.perf_counter()
    rd = int(cfg["rho_d"])
    rdt = float(cfg["rho_dt"])
    rsteps = int(round(float(cfg["rho_horizon"]) / rdt))
    npts = int(cfg["rho_points"])
    # stopping is checked on the recorded grid, so it must be fine enough to catch floor crossings
    every = int(cfg["rho_record_every"])
    parts = map_chunks(_s_paths, np.arange(cfg["rho_paths"]), threads, chunk=1000, lam0=cfg["rho_lambda0"],
                       coupling=params.pbeta, gamma=params.gamma, dt=rdt, n_steps=rsteps, seed=seed,
                       tol=float(cfg["rho_tol"]), every=every)
    Sr = np.concatenate([p[0] for p in parts])
    rgrid = parts[0][1]
    times = np.linspace(rgrid[-1] / npts, rgrid[-1], npts)
    res = rho_alpha_check(Sr, rgrid, params.pbeta, params.gamma, rd, float(cfg["floor"]), check_times=times)
    worst = max(abs(r["shift"]) / r["stderr"] if r["stderr"] > 0 else 0.0 for r in res["points"])
    checks.append(_check("rho-alpha", "stopped rho^alpha e^(alpha gamma t) has constant mean", worst, 3.0,
                         res["pass"], seed, t0, alpha=res["alpha"], points=res["points"],
                         stopped_fraction=res["stopped_fraction"]))
    rows = [[float(r["t"]), float(r["mean"]), float(r["shift"]), float(r["stderr"])] for r in res["points"]]
    return checks, {"rho_alpha": (["t", "mean", "shift", "stderr"], rows),
                    "s_increments": (["path", "S0", "S_h"], [[r, float(S[r, 0]), float(S[r, -1])]
                                                             for r in range(min(S.shape[0], 1000))])}


def exp_frame_convergence(cfg, params, seed, threads):
    checks = []
    t0 = time.perf_counter()
    paths = np.arange(cfg["paths"])
    parts = map_chunks(_limit_frames, paths, threads, chunk=2000, params=params)
    lim = np.concatenate([p[0] for p in parts])
    ended = np.concatenate([p[1] for p in parts])
    resid = max(p[2] for p in parts)
    lim_ok = lim[~ended]
    ks, rows = [], []
    for n in cfg["n_values"]:
        pn = params.with_(n=int(n), dt=None, seed=seed + 1)
        mparts = map_chunks(_matrix_frames, paths, threads, chunk=2000, params=pn)
        stat = np.concatenate([p[0] for p in mparts])
        resid = max(resid, max(p[1] for p in mparts))
        ks.append(two_sample_ks(stat, lim_ok))
        rows += [[int(n), r, float(stat[r])] for r in range(stat.size)]
    rows += [["limit", r, float(lim[r])] for r in range(lim.size) if not ended[r]]
    checks.append(_check("frame-group-residual", "frames stay on the group", resid, 1e-8, resid <= 1e-8, seed, t0))
    checks.append(_check("frame-convergence", "pre-limit frame overlap law approaches the limit law",
                         [float(k) for k in ks], "strictly decreasing in n", bool(np.all(np.diff(ks) < 0)), seed, t0,
                         n_values=[int(n) for n in cfg["n_values"]], limit_paths_excluded=int(ended.sum())))
    return checks, {"overlap": (["n", "path", "overlap"], rows)}


def _collision_chunk(paths, params, handoff_tol, cauchy_etas, angle_etas, dphi):
    """Handoff runs for a chunk of paths; returns per-path arrays for those that reach the handoff."""
    lam_every = 2
    dt_l = params.step
    n_steps = params.n_steps
    b = integrate_particles(params.lambda0, params.pbeta, params.gamma, dt_l, n_steps, params.seed, paths,
                            mode="stop", tol=handoff_tol, max_level=params.max_level, record_every=lam_every)
    sel = np.nonzero(np.isfinite(b.first_collision))[0]
    if sel.size == 0:
        return None
    grid = b.grid
    dtf = grid[1] - grid[0]
    # last grid point before the handoff; every gap there is still >= handoff_tol
    jh = np.ceil(b.first_collision[sel] / dtf - 1e-9).astype(int) - 1
    jh = np.minimum(jh, grid.size - 1)
    t_h = grid[jh]
    lam_h = b.values[sel, jh]
    i_star = b.first_index[sel]
    rows = np.arange(sel.size)
    gap_h = lam_h[rows, i_star - 1] - lam_h[rows, i_star - 2]
    sub = paths[sel]
    # remaining time from the clock model, needed before the frames are run
    n_clk = fr.clock_steps(gap_h, params.pbeta, dphi)
    x, rem = fr.clock_gap_and_remaining(gap_h, params.pbeta, dphi, n_clk, params.seed, sub)
    R = rem[:, 0]
    T1 = t_h + R
    etas = np.array(sorted(set(cauchy_etas) | set(angle_etas), reverse=True))
    capture = np.clip(T1[:, None] - etas[None, :], 0.0, None)
    capture = np.minimum(capture, t_h[:, None])
    capture = np.concatenate([capture, t_h[:, None]], axis=1)
    lam_vals = b.values[sel, : jh.max() + 1]
    fp, ended, cause, cap = fr.simulate_frame_batch(lam_vals, grid[: jh.max() + 1], params.p, params.beta,
                                                    params.seed, sub, stop_times=t_h, capture_times=capture,
                                                    record_every=10**9)
    O_h = cap[:, -1]
    cap = cap[:, :-1]
    post, phi_post, _ = fr.collision_model(O_h, lam_h, i_star, params.p, params.pbeta, gap_h, params.seed, sub,
                                           etas, dphi=dphi, clock=(x, rem))
    use_post = etas[None, :] <= R[:, None]
    frames_eta = np.where(use_post[..., None, None], post, cap)
    # clock phi(T1 - eta) from the pre-handoff gap path plus the model clock
    phi = np.empty((sel.size, etas.size))
    for q in range(sel.size):
        g = lam_vals[q, : jh[q] + 1, i_star[q] - 1] - lam_vals[q, : jh[q] + 1, i_star[q] - 2]
        tc = fr.time_change(grid[: jh[q] + 1], g)
        pre_end = tc.phi[-1]
        phi[q] = np.where(use_post[q], pre_end + phi_post[q], tc(np.minimum(T1[q] - etas, t_h[q])))
    return dict(paths=sub, i_star=i_star, t_h=t_h, R=R, frames=frames_eta, O_h=O_h, phi=phi, etas=etas,
                stiff=int(np.sum(cause == "stiff")))


def exp_collision_frame(cfg, params, seed, threads):
    t0 = time.perf_counter()
    target = int(cfg["paths"])
    max_paths = int(cfg["max_paths"])
    cauchy_etas = sorted((float(x) for x in cfg["cauchy_etas"]), reverse=True)
    angle_etas = sorted((float(x) for x in cfg["angle_etas"]), reverse=True)
    kw = dict(params=params, handoff_tol=float(cfg["handoff_tol"]), cauchy_etas=cauchy_etas,
              angle_etas=angle_etas, dphi=float(cfg["dphi"]))
    collected, tried, step = [], 0, max(target, 250)
    while sum(c["paths"].size for c in collected) < target and tried < max_paths:
        idx = np.arange(tried, min(tried + step, max_paths))
        tried = idx[-1] + 1
        for c in map_chunks(_collision_chunk, idx, threads, chunk=250, **kw):
            if c is not None:
                collected.append(c)
    if not collected:
        raise RuntimeError("no path reached the handoff gap")
    cat = {k: np.concatenate([c[k] for c in collected]) for k in ("paths", "i_star", "t_h", "R", "frames", "O_h",
                                                                    "phi")}
    keep = np.argsort(cat["paths"], kind="stable")[:target]
    cat = {k: v[keep] for k, v in cat.items()}
    etas = collected[0]["etas"]
    ci = [int(np.nonzero(np.isclose(etas, e, rtol=1e-9, atol=0.0))[0][0]) for e in cauchy_etas]
    ai = [int(np.nonzero(np.isclose(etas, e, rtol=1e-9, atol=0.0))[0][0]) for e in angle_etas]
    st = fr.collision_subspace_stats(cat["frames"][:, ci], cauchy_etas, cat["frames"][:, ai], angle_etas,
                                     cat["O_h"], cat["i_star"])
    P = cat["paths"].size
    first = st.cauchy[:, 0].max(axis=1)
    last = st.cauchy[:, -1].max(axis=1)
    shrink = float(np.mean(last < first))
    resid_small = float(np.mean(st.residual[:, 0] < 0.1))
    ang = st.angles[:, -1]
    ks_angle = distribution_distance("KS", ang, lambda x: np.clip(x / (2 * np.pi), 0, 1))
    cos = np.cos(ang)
    ks_arcsine = distribution_distance("KS", cos, lambda x: 0.5 + np.arcsin(np.clip(x, -1, 1)) / np.pi)
    ks_uniform = distribution_distance("KS", cos, lambda x: np.clip((x + 1) / 2, 0, 1))
    mono = float(np.mean(np.all(np.diff(cat["phi"], axis=1) > 0, axis=1)))
    growth = float(np.median(cat["phi"][:, -1] - cat["phi"][:, 0]))
    resid = float(np.max(group_residual(cat["frames"])))
    checks = [
        _check("cauchy-shrinks", "non-colliding columns settle: later eta increments are smaller", shrink, 0.5,
               shrink > 0.5, seed, t0, pairs=[cauchy_etas[0:2], cauchy_etas[-2:]], paths=P, tried=int(tried)),
        _check("pair-in-plane", "colliding column stays in the plane W (residual < 0.1)", resid_small, 0.5,
               resid_small > 0.5, seed, t0, eta=angle_etas[0]),
        _check("angle-uniform", "in-plane angle at the smallest eta is uniform on [0, 2 pi)", ks_angle, 0.05,
               ks_angle < 0.05, seed, t0, eta=angle_etas[-1], cosine_ks_arcsine=ks_arcsine,
               cosine_ks_uniform=ks_uniform),
        _check("clock-diverges", "phi(T1 - eta) increases along the eta sweep", mono, 0.95, mono >= 0.95, seed, t0,
               median_phi_increase=growth, frame_residual=resid, paths=P),
    ]
    if P < target:
        checks.append(_check("colliding-paths", "enough paths reach the collision", P, target, False, seed, t0))
    rows = [[int(cat["paths"][r]), int(cat["i_star"][r]), float(cat["t_h"][r]), float(cat["R"][r]), float(ang[r])]
            for r in range(P)]
    return checks, {"collision_angles": (["path", "i_star", "handoff_time", "remaining_time", "angle"], rows)}


def exp_invariance(cfg, params, seed, threads):
    t0 = time.perf_counter()
    P = int(cfg["paths"])
    M0 = np.diag(np.asarray(params.lambda0)).astype(params.sector.dtype)
    Q = haar_sample(NoiseStream(seed, 0), params.d, params.sector, index=int(cfg["haar_index"]))
    QM = conjugate(MatrixState.from_array(M0, params.sector), Q).entries
    a = np.concatenate([p[0] for p in map_chunks(_matrix_terminal, np.arange(P), threads, chunk=2000,
                                                  params=params, M0=M0)])
    b = np.concatenate([p[0] for p in map_chunks(_matrix_terminal, np.arange(P, 2 * P), threads, chunk=2000,
                                                  params=params, M0=QM)])
    ks = [two_sample_ks(a[:, i], b[:, i]) for i in range(params.d)]
    checks = [_check("invariance", "spectra from M0 and Q M0 Q* agree in law", max(ks), 0.05, max(ks) < 0.05,
                     seed, t0, per_coordinate=ks)]
    rows = [["M0", r] + list(a[r]) for r in range(P)] + [["QM0Q*", r] + list(b[r]) for r in range(P)]
    return checks, {"terminal_spectra": (["start", "path"] + [f"lambda_{i + 1}" for i in range(params.d)], rows)}


REGISTRY = {
    "stationary-law": exp_stationary_law,
    "coupling-convergence": exp_coupling_convergence,
    "delta-scheme": exp_delta_scheme,
    "no-collision": exp_no_collision,
    "collision-times": exp_collision_times,
    "s-drift": exp_s_drift,
    "frame-convergence": exp_frame_convergence,
    "collision-frame": exp_collision_frame,
    "invariance": exp_invariance,
    "bessel-law": exp_bessel_law,
}


def resolve(config):
    """Experiment defaults overlaid with the explicit config keys; returns (settings, SimParams)."""
    name = config.experiment
    if name not in REGISTRY:
        raise RegistryError(f"unknown experiment {name!r}; valid names: {', '.join(REGISTRY)}")
    settings = dict(DEFAULTS[name])
    settings.update(config.explicit)
    settings.pop("experiment", None)
    settings["_explicit"] = set(config.explicit)
    params = build_params({k: settings[k] for k in PARAM_KEYS if k in settings})
    return settings, params


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def run_experiment(config, out=None):
    """Run ``config.experiment`` and write its outputs; returns the ExperimentReport."""
    settings, _ = resolve(config)
    seed = resolve_seed(config.seed)
    params = build_params({k: settings[k] for k in PARAM_KEYS if k in settings}).with_(seed=seed)
    threads = int(config.threads or 1)
    start = time.perf_counter()
    try:
        checks, tables = REGISTRY[config.experiment](settings, params, seed, threads)
    except Exception as exc:
        # keep the report contract: a failed run still leaves a report behind
        checks = [Check("run-error", "experiment completed", repr(exc), "no exception", False, seed,
                        time.perf_counter() - start, {"traceback": traceback.format_exc()})]
        tables = {}
    report = ExperimentReport(config.experiment, checks, seed,
                              {k: v for k, v in settings.items() if not k.startswith("_")})
    report.runtime_s = time.perf_counter() - start
    out = out or config.out
    if out:
        os.makedirs(out, exist_ok=True)
        for name, (header, rows) in tables.items():
            write_csv(os.path.join(out, f"{name}.csv"), header, rows)
        resolved = {k: v for k, v in settings.items() if not k.startswith("_")}
        resolved.update(experiment=config.experiment, seed=seed, threads=threads)
        with open(os.path.join(out, "config.resolved"), "w") as f:
            f.write(format_config(resolved))
        with open(os.path.join(out, "report.json"), "w") as f:
            json.dump(_jsonable(report.as_dict()), f, indent=2)
    return report
