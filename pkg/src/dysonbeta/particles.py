"""Interacting particle systems for ordered eigenvalues.

Three processes share one integrator:

* the limit system  dl_i = -gamma l_i dt + sqrt(2) db_i + c sum_j dt/(l_i - l_j)
  with constant coupling c = p*beta,
* the coin-switched system whose coupling is beta*eps_t (re-ordered after
  every step),
* the delta-separated system, which shifts l_i by i*delta whenever two
  particles meet.

The integrator is Euler-Maruyama on a fixed base grid.  A base step is split
in half (recursively, with Brownian-bridge midpoints) while the drift moves a
particle by more than a quarter of the smallest gap, or while the gap is
within ``noise_ratio`` standard deviations of the step noise.  Halving stops
at dt / 2**max_level.  Bridge midpoints are keyed by (path, base step, level,
position), so processes driven by the same Brownian motion see identical
refinements whatever their drift.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from . import _kernels
from .noise import PathNoise, coin_matrix, philox_key

SQRT2 = math.sqrt(2.0)


class SingularConfigurationError(ValueError):
    """Two particles coincide, so the interaction drift is undefined."""


class RestartCapError(RuntimeError):
    """The delta process restarted more often than allowed."""


@dataclass(frozen=True)
class CollisionEvent:
    """A detected meeting of particles ``index``-1 and ``index`` (1-based)."""
    time: float
    index: int
    kind: str
    restart_shift: float
    ordinal: int
    gap: float


@dataclass
class ParticlePath:
    grid: np.ndarray
    values: np.ndarray
    events: list = field(default_factory=list)
    coins: object = None
    first_collision: float = None
    restarts: int = 0
    end_cause: str = "horizon"


def dyson_drift(lam, coupling, gamma):
    """-gamma l_i + coupling * sum_{j != i} 1/(l_i - l_j) for one or many vectors."""
    lam = np.asarray(lam, dtype=float)
    diff = lam[..., :, None] - lam[..., None, :]
    d = lam.shape[-1]
    off = ~np.eye(d, dtype=bool)
    if np.any(diff[..., off] == 0):
        raise SingularConfigurationError("zero gap between particles")
    return _drift(lam, coupling, gamma)


def _drift(lam, coupling, gamma):
    d = lam.shape[-1]
    diff = lam[..., :, None] - lam[..., None, :]
    diff[..., np.arange(d), np.arange(d)] = np.inf
    tiny = np.abs(diff) < 1e-300
    if np.any(tiny):
        diff = np.where(tiny, np.where(diff < 0, -1e-300, 1e-300), diff)
    inter = np.sum(1.0 / diff, axis=-1)
    c = np.asarray(coupling, dtype=float)
    if c.ndim:
        c = c[..., None]
    return -gamma * lam + c * inter


def detect_collision(lam, tol):
    """(i*, gap) for the smallest adjacent gap if it is below ``tol``, else None.

    i* is the 1-based index of the upper particle; ties go to the smallest index.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.size < 2:
        return None
    gaps = np.diff(lam)
    k = int(np.argmin(gaps))
    if gaps[k] < tol:
        return k + 2, float(gaps[k])
    return None


def s_statistic(lam, I=None):
    """sum over ordered pairs (i, j) in I of (l_i - l_j)^2."""
    lam = np.asarray(lam, dtype=float)
    if I is not None:
        I = np.asarray(list(I), dtype=int)
        if I.size < 2:
            raise ValueError("index set needs at least two elements")
        lam = lam[..., I]
    elif lam.shape[-1] < 2:
        raise ValueError("index set needs at least two elements")
    k = lam.shape[-1]
    return 2.0 * (k * np.sum(lam**2, axis=-1) - np.sum(lam, axis=-1) ** 2)


@dataclass
class ParticleBatch:
    """Result of integrating a batch of paths on a common grid."""
    grid: np.ndarray
    values: np.ndarray
    paths: np.ndarray
    events: list
    first_collision: np.ndarray
    first_index: np.ndarray
    restarts: np.ndarray
    ended: np.ndarray
    refinements: int = 0
    underflows: int = 0

    def path(self, r, coins=None):
        cause = "collision" if self.ended[r] else "horizon"
        fc = None if not np.isfinite(self.first_collision[r]) else float(self.first_collision[r])
        return ParticlePath(self.grid, self.values[r], list(self.events[r]), coins, fc,
                            int(self.restarts[r]), cause)


_MODES = {"continue": _kernels.MODE_CONTINUE, "stop": _kernels.MODE_STOP, "restart": _kernels.MODE_RESTART}


def _coupling_rows(coupling, P):
    c = np.asarray(coupling, dtype=float)
    if c.ndim == 0:
        return np.full((P, 1), float(c))
    if c.ndim == 1:
        return c[:, None] if c.shape[0] == P else np.tile(c, (P, 1))
    return c


def integrate_particles(lam0, coupling, gamma, dt, n_steps, master_seed, paths, *, mode="continue",
                        delta=0.0, tol=1e-6, max_level=40, noise_ratio=10.0, restart_cap=200_000,
                        record_every=1, steps_per_block=1, source="b", root_dw=None):
    """Integrate a batch of particle paths on a shared base grid.

    ``coupling`` is a scalar, a per-path vector, or a (paths, blocks) array
    whose column k // steps_per_block applies at base step k.  ``mode`` is
    "continue" (log collisions and keep going), "stop" (freeze a path at its
    first collision) or "restart" (apply the delta shift).  ``root_dw``
    optionally replaces the keyed base increments, shape (paths, n_steps, d).
    """
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not 0 <= max_level <= 60:
        raise ValueError("max_level must lie in [0, 60]")
    lam0 = np.atleast_2d(np.asarray(lam0, dtype=float))
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    P = paths.size
    if lam0.shape[0] == 1 and P > 1:
        lam0 = np.repeat(lam0, P, axis=0)
    d = lam0.shape[1]
    cpl = _coupling_rows(coupling, P)
    every = max(1, int(record_every))
    n_rec = int(n_steps) // every + 1
    values = np.empty((P, n_rec, d))
    events = []
    first = np.full(P, np.inf)
    first_index = np.zeros(P, dtype=int)
    restarts = np.zeros(P, dtype=np.int64)
    ended = np.zeros(P, dtype=bool)
    refinements = underflows = 0
    empty = np.zeros((0, d))
    for r in range(P):
        k0, k1 = philox_key(master_seed, paths[r], source)
        rd = empty if root_dw is None else np.ascontiguousarray(root_dw[r], dtype=float)
        out = _kernels.integrate_path(lam0[r].copy(), np.ascontiguousarray(cpl[r]), max(1, int(steps_per_block)),
                                      float(gamma), float(dt), int(n_steps), k0, k1, _MODES[mode], float(delta),
                                      float(tol), int(max_level), float(noise_ratio), int(restart_cap), every, rd)
        (vals, ev_t, ev_i, ev_g, n_ev, ft, fi, nr, end_step, nref, nund, status) = out
        if status == 1:
            raise RestartCapError(f"path {paths[r]}: more than {restart_cap} restarts; "
                                  "delta is too small for the step size")
        values[r] = vals
        kind = "delta_restart" if mode == "restart" else "detected"
        shift = float(delta) if mode == "restart" else 0.0
        events.append([CollisionEvent(float(t), int(i), kind, shift, q + 1, float(g))
                       for q, (t, i, g) in enumerate(zip(ev_t, ev_i, ev_g))])
        first[r] = ft
        first_index[r] = fi
        restarts[r] = nr
        ended[r] = end_step >= 0
        refinements += nref
        underflows += nund
    grid = np.arange(n_rec) * every * float(dt)
    return ParticleBatch(grid, values, paths, events, first, first_index, restarts, ended,
                         refinements, underflows)


def step_particles(lam, eps, coupling, gamma, dt, stream, step=0, max_level=40, tol=1e-6,
                   noise_ratio=10.0, dw=None):
    """One adaptive Euler-Maruyama step of length ``dt`` followed by sorting.

    The interaction strength is ``eps * coupling`` (a coin bit times base beta,
    or 1 times p*beta for the limit system).  ``dw`` overrides the Brownian
    increment; otherwise the keyed increment of base step ``step`` is used.
    Returns (new vector, list of CollisionEvent).
    """
    lam = np.asarray(lam, dtype=float)
    d = lam.shape[0]
    if dw is None:
        z = np.empty(d)
        k0, k1 = philox_key(stream.master_seed, stream.path_index, "b")
        _kernels.keyed_normals(k0, k1, int(step), 1, _kernels.KIND_INCREMENT, z)
        dw = math.sqrt(dt) * z
    root = np.asarray(dw, dtype=float).reshape(1, 1, d)
    batch = integrate_particles(lam, float(eps) * float(coupling), gamma, dt, 1, stream.master_seed,
                                [stream.path_index], mode="continue", tol=tol, max_level=max_level,
                                noise_ratio=noise_ratio, root_dw=root)
    return batch.values[0, -1], batch.events[0]


def keyed_increments(master_seed, path_index, dt, n_steps, d, source="b"):
    """The base Brownian increments the integrator uses for one path, shape (n_steps, d)."""
    k0, k1 = philox_key(master_seed, path_index, source)
    return math.sqrt(dt) * _kernels.keyed_normal_table(k0, k1, int(n_steps), int(d))


def prelimit_coupling(params, coins):
    """Per-block coupling beta * eps_k for a (paths, blocks) coin array."""
    return params.beta * np.asarray(coins, dtype=float)


def simulate_batch(params, kind, paths, *, coins=None, record_every=1, mode=None, tol=None,
                   noise_ratio=10.0, source="b", lam0=None):
    """Run ``kind`` in {"limit", "mu", "delta"} for a batch of path indices."""
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    lam0 = np.asarray(params.lambda0 if lam0 is None else lam0, dtype=float)
    tol = params.collision_tol if tol is None else tol
    if kind == "mu":
        if coins is None:
            coins = coin_matrix(params.seed, paths, params.n, params.p, params.T)
        coupling = prelimit_coupling(params, coins)
        spb = params.steps_per_block
        mode = mode or "stop"
    elif kind == "limit":
        coupling = params.pbeta
        spb = 1
        mode = mode or "stop"
    elif kind == "delta":
        coupling = params.pbeta
        spb = 1
        mode = "restart"
    else:
        raise ValueError(f"unknown process kind {kind!r}")
    return integrate_particles(lam0, coupling, params.gamma, params.step, params.n_steps, params.seed, paths,
                               mode=mode, delta=params.delta, tol=tol, max_level=params.max_level,
                               noise_ratio=noise_ratio, restart_cap=params.restart_cap,
                               record_every=record_every, steps_per_block=spb, source=source)


def simulate_mu_path(params, stream):
    """Coin-switched system for one path; stops at its first collision T_n(1)."""
    from .noise import bernoulli_stream
    p = params.with_(seed=stream.master_seed)
    sched = bernoulli_stream(stream, p.n, p.p, p.T)
    batch = simulate_batch(p, "mu", [stream.path_index], coins=sched.values[None, :])
    return batch.path(0, coins=sched)


def simulate_limit_path(params, stream, mode="stop"):
    """Limit system with constant coupling p*beta for one path."""
    p = params.with_(seed=stream.master_seed)
    return simulate_batch(p, "limit", [stream.path_index], mode=mode).path(0)


def simulate_delta_process(params, stream):
    """Delta-separated limit system for one path; ``restarts`` holds L(T)."""
    p = params.with_(seed=stream.master_seed)
    return simulate_batch(p, "delta", [stream.path_index]).path(0)


@dataclass
class ErrorTable:
    n_values: list
    errors: np.ndarray
    windows: np.ndarray
    delta_bound_ratio: np.ndarray
    bound_constant: float

    def medians(self):
        return np.nanmedian(self.errors, axis=1)


def delta_bound_constant(d):
    return math.sqrt(d * (d + 1) * (2 * d + 1) / 6.0)


def _window_end(batch_a, batch_b, T):
    return np.minimum(np.minimum(batch_a.first_collision, batch_b.first_collision), T)


def sup_error(a, b, grid, t_end):
    """sup over grid points t < t_end of max_i |a_i(t) - b_i(t)| per path."""
    diff = np.max(np.abs(a - b), axis=2)
    mask = grid[None, :] < t_end[:, None]
    diff = np.where(mask & np.isfinite(diff), diff, 0.0)
    return np.max(diff, axis=1)


def coupled_error_batch(params, n_values, paths, reference=None, companion=None, record_every=1):
    """Shared-noise comparison of coin-switched systems with a delta-scheme reference.

    All runs use the same base step ``params.step`` and the same Brownian
    source, so they are driven by one Brownian path per index.  Coins come
    from a separate substream for each n.  The error for each n is the sup
    over grid times before min(T, first collision of either run) of the max
    coordinate difference.  ``delta_bound_ratio`` compares the reference
    with a delta/2 companion run: sup_t |l^a - l^b|_2 / (c max(a, b) (ell(t) + 1)),
    ell(t) being the restarts of both runs up to t.
    """
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    if reference is None:
        reference = simulate_batch(params, "delta", paths, record_every=record_every)
    if companion is None:
        companion = simulate_batch(params.with_(delta=params.delta / 2), "delta", paths,
                                   record_every=record_every)
    grid = reference.grid
    errors, windows = [], []
    for n in n_values:
        pn = params.with_(n=int(n))
        if abs(pn.steps_per_block * pn.step * n - 1) > 1e-9:
            raise ValueError("base step must divide every block length")
        coins = coin_matrix(params.seed, paths, n, params.p, params.T)
        mu = simulate_batch(pn, "mu", paths, coins=coins, record_every=record_every)
        if mu.grid.shape != grid.shape:
            raise ValueError("mismatched grids")
        t_end = _window_end(mu, reference, params.T)
        errors.append(sup_error(mu.values, reference.values, grid, t_end))
        windows.append(t_end)
    c = delta_bound_constant(params.d)
    ratio = delta_pair_ratio(reference, companion, params.delta, params.delta / 2, c)
    return ErrorTable(list(n_values), np.array(errors), np.array(windows), ratio, c)


def restart_counts_on_grid(batch):
    """Number of restarts up to each grid time, shape (paths, grid)."""
    out = np.zeros((len(batch.events), batch.grid.size), dtype=np.int64)
    for r, ev in enumerate(batch.events):
        if ev:
            times = np.array([e.time for e in ev if e.kind == "delta_restart"])
            out[r] = np.searchsorted(times, batch.grid + 1e-12, side="right")
    return out


def delta_pair_ratio(batch_a, batch_b, delta_a, delta_b, c):
    """Per path max over the grid of |l^a - l^b|_2 / (c max(delta) (ell_a + ell_b + 1))."""
    ell = restart_counts_on_grid(batch_a) + restart_counts_on_grid(batch_b)
    dist = np.sqrt(np.sum((batch_a.values - batch_b.values) ** 2, axis=2))
    ratio = dist / (c * max(delta_a, delta_b) * (ell + 1))
    ratio = np.where(np.isfinite(ratio), ratio, 0.0)
    return ratio.max(axis=1)


def delta_bound_ratio(delta_batch, limit_batch, delta, c):
    """max over grid of |l^delta(t) - l(t)|_2 / (c delta ell(t)) over times with ell(t) >= 1."""
    ell = restart_counts_on_grid(delta_batch)
    dist = np.sqrt(np.sum((delta_batch.values - limit_batch.values) ** 2, axis=2))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(ell > 0, dist / (c * delta * np.maximum(ell, 1)), np.nan)
    out = np.full(ratio.shape[0], np.nan)
    for r in range(ratio.shape[0]):
        v = ratio[r][np.isfinite(ratio[r])]
        if v.size:
            out[r] = v.max()
    return out


def coupled_error(params, n_values, reference, stream):
    """Single-path error table against a precomputed delta-scheme reference path."""
    p = params.with_(seed=stream.master_seed)
    ref = ParticleBatch(reference.grid, reference.values[None], np.array([stream.path_index]),
                        [reference.events], np.array([reference.first_collision or np.inf]),
                        np.zeros(1, dtype=int), np.array([reference.restarts]), np.zeros(1, dtype=bool))
    return coupled_error_batch(p, n_values, [stream.path_index], reference=ref)


def simulate_gap_first_passage(delta, pbeta, master_seed, paths, t_max=1.0, kappa=1e-3, dt_max=1e-3,
                               floor_ratio=1e-6, chunk=512, source="gap"):
    """First hitting time of 0 for dX = 2 pbeta / X dt + 2 dB with X_0 = delta.

    This is the gap between two particles of the limit system without
    confinement.  Steps are proportional to X^2 (capped at dt_max) so the
    scheme is scale invariant near zero; a path counts as hit once X drops
    below floor_ratio * delta or crosses zero.  Paths still alive at t_max
    return inf.
    """
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    P = paths.size
    x = np.full(P, float(delta))
    t = np.zeros(P)
    hit = np.full(P, np.inf)
    alive = np.ones(P, dtype=bool)
    floor = floor_ratio * delta
    noise = PathNoise(master_seed, paths, source)
    buf = None
    it = 0
    while alive.any():
        if it % chunk == 0:
            buf = noise.normal((chunk,))
        z = buf[:, it % chunk]
        it += 1
        a = np.nonzero(alive)[0]
        xa = x[a]
        h = np.minimum(kappa * xa**2, dt_max)
        h = np.minimum(h, t_max - t[a])
        xn = xa + 2 * pbeta / xa * h + 2.0 * np.sqrt(h) * z[a]
        ta = t[a] + h
        done = xn < floor
        hit[a[done]] = ta[done]
        alive[a[done]] = False
        x[a] = xn
        t[a] = ta
        out = ta >= t_max - 1e-15
        alive[a[out & ~done]] = False
    return hit
