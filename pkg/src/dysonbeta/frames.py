"""Eigenvector frame flow driven by a given eigenvalue path.

Column i of the frame O moves by

    dphi_i = sqrt(w) sum_{j != i} dw_ij / (l_i - l_j) phi_j - (w/2) sum_{j != i} beta dt / (l_i - l_j)^2 phi_i

with w the coin bit (pre-limit) or p (limit).  A step is taken in Lie-algebra
form, O' = polar(O expm(G - C/2)), where G is the skew-Hermitian matrix of
noise coefficients and C the diagonal Ito correction.  The polar projection
keeps O on the group; the skew part carries the dynamics.

Near a collision the full flow is numerically unusable, so the colliding pair
is handed off to a model in the clock phi(t) = int dt / gap^2: in that clock the
pair gap is a geometric Brownian motion and the in-plane rotation is a plain
Brownian angle sqrt(p) B_phi.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy import integrate

from . import _kernels
from .linalg import FrameDriftError, batch_expm, batch_polar, dagger, group_residual
from .noise import PathNoise
from .stats import two_sample_ks

GROUP_TOL = 1e-8


class StiffFrameStepError(ValueError):
    """A gap is too small for the frame step; shrink dt or use the collision model."""


@dataclass
class FramePath:
    """Frames on a time grid plus the running Ito correction of each column."""
    grid: np.ndarray
    frames: np.ndarray
    correction: np.ndarray
    end_time: float = None
    end_cause: str = "horizon"


@dataclass
class CollisionFrameStats:
    """Frame statistics approaching a collision, one row per path.

    ``cauchy`` holds |phi_j(T1-eta_a) - phi_j(T1-eta_b)| for the non-colliding
    columns and each consecutive pair of the Cauchy sweep; ``angles`` the
    in-plane angle of the upper colliding column at every eta of the angle
    sweep; ``residual`` its distance to the plane W.
    """
    cauchy_etas: np.ndarray
    cauchy: np.ndarray
    w_basis: np.ndarray
    angle_etas: np.ndarray
    angles: np.ndarray
    residual: np.ndarray


def n_frame_normals(d, beta):
    return (d * (d - 1) // 2) * (1 if beta == 1 else 2)


def assemble_frame_noise(z, d, beta):
    """Unit-variance noise matrix dw with dw_ji = conj(dw_ij) and zero diagonal."""
    iu = np.triu_indices(d, 1)
    m = len(iu[0])
    if beta == 1:
        w = np.zeros(z.shape[:-1] + (d, d))
        w[..., iu[0], iu[1]] = z[..., :m]
    else:
        w = np.zeros(z.shape[:-1] + (d, d), dtype=complex)
        w[..., iu[0], iu[1]] = z[..., :m] + 1j * z[..., m:2 * m]
    w[..., iu[1], iu[0]] = np.conj(w[..., iu[0], iu[1]])
    return w


def _inverse_gaps(lam):
    d = lam.shape[-1]
    diff = lam[..., :, None] - lam[..., None, :]
    diff[..., np.arange(d), np.arange(d)] = np.inf
    return 1.0 / diff


def frame_generator(lam, dw, weight):
    """Skew-Hermitian G with G[j, i] = sqrt(w) dw_ij / (l_i - l_j)."""
    inv = _inverse_gaps(np.asarray(lam, dtype=float))
    w = np.sqrt(np.asarray(weight, dtype=float))
    if w.ndim:
        w = w[..., None, None]
    return w * np.swapaxes(dw * inv, -1, -2)


def correction_rates(lam, beta):
    """beta sum_{j != i} 1/(l_i - l_j)^2 per column."""
    inv = _inverse_gaps(np.asarray(lam, dtype=float))
    return beta * np.sum(np.abs(inv) ** 2, axis=-1)


def frame_update(O, lam, weight, beta, dt, z, check=True):
    """Batched frame step from unit normals ``z``; returns (O', per-column correction).

    ``weight`` and ``dt`` may be scalars or per-path arrays.  With ``check``
    the skew-Hermitian structure of the noise generator is asserted through
    ``frame_generator`` on the same inputs.
    """
    O = np.asarray(O)
    lam = np.ascontiguousarray(lam, dtype=float)
    P, d = lam.shape
    wgt = np.broadcast_to(np.asarray(weight, dtype=float), (P,)).copy()
    dts = np.broadcast_to(np.asarray(dt, dtype=float), (P,)).copy()
    z = np.ascontiguousarray(z, dtype=float)
    if check:
        dw = np.sqrt(dts)[:, None, None] * assemble_frame_noise(z, d, beta)
        G = frame_generator(lam, dw, wgt)
        skew = np.max(np.abs(G + dagger(G))) if G.size else 0.0
        if skew > 1e-12 * max(1.0, np.max(np.abs(G))):
            raise FrameDriftError(f"noise generator is not skew-Hermitian (residual {skew:.2e})")
    Oc = np.ascontiguousarray(O, dtype=complex)
    Q, corr, flags = _kernels.frame_step_batch(Oc, lam, wgt, dts, z, int(beta))
    if flags.any():
        raise FrameDriftError("frame step left the group; reduce the step size")
    if not np.iscomplexobj(O):
        Q = Q.real.copy()
    return Q, corr


def _check_gaps(lam, dt):
    if lam.shape[-1] > 1:
        g = np.min(np.diff(lam, axis=-1), axis=-1)
        return g >= 10.0 * math.sqrt(dt)
    return np.ones(lam.shape[:-1], dtype=bool)


def step_frame(O, lam, weight, base_beta, dt, stream, step=0):
    """One frame step for a single path; the noise is keyed by ``step``.

    Raises StiffFrameStepError when an adjacent gap is below 10 sqrt(dt).
    """
    O = np.asarray(O)
    lam = np.asarray(lam, dtype=float)
    d = lam.shape[0]
    if not _check_gaps(lam, dt):
        raise StiffFrameStepError(f"gap {np.min(np.diff(lam)):.3e} below 10*sqrt(dt) = "
                                  f"{10 * math.sqrt(dt):.3e}; shrink dt or hand off to the collision model")
    if weight == 0 or d == 1:
        return batch_polar(O)
    z = stream.generator("w", step).standard_normal(n_frame_normals(d, base_beta))
    Q, _ = frame_update(O, lam, weight, base_beta, dt, z)
    return Q


def simulate_frame_batch(lam_values, grid, weights, beta, master_seed, paths, *, stop_times=None,
                         O0=None, record_every=1, capture_times=None, source="w", chunk=256):
    """Frame flow for a batch of eigenvalue paths sampled on a common grid.

    ``lam_values`` has shape (paths, len(grid), d).  ``weights`` is a scalar
    (limit flow with weight p) or a (paths, len(grid)-1) array of per-step
    coin bits.  Each path stops at its entry of ``stop_times`` or when a gap
    falls below 10 sqrt(dt); ``end_cause`` records which.  ``capture_times``
    (paths, k) requests the frame at the last grid point not after each time.
    Returns (FramePath with batched arrays, ended flags, end causes, captured frames).
    """
    lam_values = np.asarray(lam_values, dtype=float)
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    P, n_grid, d = lam_values.shape
    dt = float(grid[1] - grid[0])
    dtype = float if beta == 1 else complex
    O = np.repeat(np.eye(d, dtype=dtype)[None], P, axis=0) if O0 is None else np.array(O0, dtype=dtype)
    stop = np.full(P, np.inf) if stop_times is None else np.asarray(stop_times, dtype=float)
    w_arr = np.asarray(weights, dtype=float)
    every = max(1, int(record_every))
    n_rec = (n_grid - 1) // every + 1
    frames = np.empty((P, n_rec, d, d), dtype=dtype)
    corr_acc = np.zeros((P, n_rec, d))
    frames[:, 0] = O
    acc = np.zeros((P, d))
    alive = np.ones(P, dtype=bool)
    cause = np.array(["horizon"] * P, dtype=object)
    end_time = np.full(P, grid[-1])
    cap = None
    cap_idx = None
    if capture_times is not None:
        capture_times = np.asarray(capture_times, dtype=float)
        cap = np.repeat(O[:, None], capture_times.shape[1], axis=1)
        cap_idx = np.floor((capture_times - grid[0]) / dt + 1e-9).astype(np.int64)
    n_z = n_frame_normals(d, beta)
    noise = PathNoise(master_seed, paths, source)
    buf = None
    max_residual = 0.0
    n_steps = n_grid - 1
    for k in range(n_steps):
        if k % chunk == 0:
            buf = noise.normal((min(chunk, n_steps - k), max(n_z, 1)))
        if cap is not None:
            hit = cap_idx == k
            if hit.any():
                r, c = np.nonzero(hit)
                cap[r, c] = O[r]
        t_next = grid[k + 1]
        lam = lam_values[:, k]
        ok = alive & (t_next <= stop + 1e-12)
        stiff = alive & ok & ~_check_gaps(lam, dt)
        if stiff.any():
            cause[stiff] = "stiff"
        newly = alive & (~ok | stiff)
        end_time[newly] = grid[k]
        cause[alive & ~ok] = "window"
        alive &= ok & ~stiff
        act = np.nonzero(alive)[0]
        if act.size and d > 1:
            w = w_arr if w_arr.ndim == 0 else w_arr[act, k]
            z = buf[act, k % chunk, :n_z]
            moving = np.ones(act.size, dtype=bool) if w_arr.ndim == 0 else (w != 0)
            if w_arr.ndim == 0 and float(w_arr) == 0:
                moving[:] = False
            if moving.any():
                sel = act[moving]
                wsel = w if w_arr.ndim == 0 else w[moving]
                Qn, corr = frame_update(O[sel], lam[sel], wsel, beta, dt, z[moving])
                O[sel] = Qn
                acc[sel] += corr
            if (~moving).any():
                O[act[~moving]] = batch_polar(O[act[~moving]])
        if (k + 1) % every == 0:
            j = (k + 1) // every
            frames[:, j] = O
            corr_acc[:, j] = acc
            max_residual = max(max_residual, float(np.max(group_residual(O))) if P else 0.0)
    if cap is not None:
        hit = cap_idx >= n_steps
        if hit.any():
            r, c = np.nonzero(hit)
            cap[r, c] = O[r]
    rec_grid = grid[::every][:n_rec]
    fp = FramePath(rec_grid, frames, corr_acc, end_time, cause)
    fp.max_residual = max_residual
    return fp, ~alive, cause, cap


def simulate_frame_path(params, lambda_path, stream, weights=None, eta=None):
    """Frame path on [0, (T1 - eta) ^ T] conditional on an eigenvalue path.

    ``weights`` defaults to p (the limit flow); pass per-step coin bits for the
    pre-limit flow.  ``eta`` defaults to 10 sqrt(dt).  The frame noise uses its
    own source, so it is independent of the noise that drove ``lambda_path``.
    """
    grid = np.asarray(lambda_path.grid, dtype=float)
    dt = float(grid[1] - grid[0])
    eta = 10.0 * math.sqrt(dt) if eta is None else float(eta)
    t1 = lambda_path.first_collision
    stop = min(params.T, (t1 - eta) if t1 is not None else np.inf)
    w = params.p if weights is None else np.asarray(weights, dtype=float)[None]
    fp, ended, cause, _ = simulate_frame_batch(np.asarray(lambda_path.values)[None], grid, w, params.beta,
                                               stream.master_seed, [stream.path_index],
                                               stop_times=[stop])
    return FramePath(fp.grid, fp.frames[0], fp.correction[0], float(fp.end_time[0]), str(cause[0]))


@dataclass
class TimeChange:
    """phi(t) = int_{t0}^t ds / gap(s)^2 on a grid, with its inverse."""
    times: np.ndarray
    phi: np.ndarray

    def __call__(self, t):
        return np.interp(t, self.times, self.phi)

    def inverse(self, phi):
        """Time at which the clock reaches ``phi`` (bisection on the grid, then linear)."""
        phi = np.asarray(phi, dtype=float)
        k = np.clip(np.searchsorted(self.phi, phi, side="left"), 1, self.phi.size - 1)
        p0, p1 = self.phi[k - 1], self.phi[k]
        t0, t1 = self.times[k - 1], self.times[k]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(p1 > p0, (phi - p0) / (p1 - p0), 0.0)
        return t0 + np.clip(frac, 0.0, 1.0) * (t1 - t0)


def time_change(times, gaps):
    """Trapezoidal clock phi(t) = int dt / gap^2; requires positive gap samples."""
    times = np.asarray(times, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if np.any(~(gaps > 0)):
        raise ValueError("gap samples must be strictly positive")
    phi = integrate.cumulative_trapezoid(1.0 / gaps**2, times, initial=0.0)
    return TimeChange(times, phi)


def rotation(theta):
    """[[cos t, sin t], [-sin t, cos t]] for scalar or array angles."""
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2)


def collision_rotation_sample(p, s, stream, index=0):
    """Rotation by the angle sqrt(p) B_s with B_s ~ N(0, s)."""
    if s < 0:
        raise ValueError("time budget must be nonnegative")
    b = math.sqrt(s) * stream.generator("rotation", index).standard_normal()
    return rotation(math.sqrt(p) * b)


def clock_gap_path(g0, pbeta, dphi, z, reflect=True):
    """Pair gap in the phi clock: log X = log g0 + 2 W_phi - 2 (1 - pbeta) phi.

    With ``reflect`` the walk is reflected (Skorokhod regulator) at log g0,
    so X never exceeds the handoff gap and the pair stays inside the bracket
    left by the frozen particles.  ``z`` holds unit normals of shape
    (paths, steps); returns X at the left end of every step, shape (paths, steps).
    """
    g0 = np.asarray(g0, dtype=float)
    incr = 2.0 * math.sqrt(dphi) * z - 2.0 * (1.0 - pbeta) * dphi
    walk = np.concatenate([np.zeros((z.shape[0], 1)), np.cumsum(incr, axis=1)[:, :-1]], 1)
    if reflect:
        walk = walk - np.maximum.accumulate(np.maximum(walk, 0.0), axis=1)
    return np.exp(np.log(g0)[:, None] + walk)


def remaining_time(x, dphi):
    """Real time left before the collision at each clock step: sum_{k' >= k} X_k'^2 dphi."""
    seg = x**2 * dphi
    return np.cumsum(seg[:, ::-1], axis=1)[:, ::-1]


def clock_steps(gap_h, pbeta, dphi, log_floor=-92.0):
    """Clock steps needed for log X to drift from log gap_h down to ``log_floor``, twice over."""
    g0 = np.asarray(gap_h, dtype=float)
    return int(math.ceil(2.0 * (np.max(np.log(g0)) - log_floor) / (2.0 * (1.0 - pbeta)) / dphi))


def clock_gap_and_remaining(gap_h, pbeta, dphi, n_steps, master_seed, paths, source="clock"):
    """Clock-time gap path and the remaining real time at every clock step.

    Uses sub-stream 0 of ``source``, the same normals ``collision_model`` draws.
    """
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    zg = PathNoise(master_seed, paths, source, 0).normal((int(n_steps),))
    x = clock_gap_path(np.asarray(gap_h, dtype=float), pbeta, dphi, zg)
    return x, remaining_time(x, dphi)


def collision_model(O_h, lam_h, i_star, p, pbeta, gap_h, master_seed, paths, etas, dphi=0.01,
                    log_floor=-92.0, source="clock", clock=None):
    """Continue frames from the handoff to the collision in the phi clock.

    The colliding pair (columns i*-1, i* in 1-based terms) sits at its
    midpoint plus or minus X/2, where X follows ``clock_gap_path``; the other
    particles stay at their handoff positions.  The full frame step is applied
    with real time step X^2 dphi, so the pair rotates by a N(0, p dphi) angle
    per step and the other columns keep their ordinary, mild dynamics.
    ``clock`` may pass a precomputed (x, remaining) pair from
    ``clock_gap_and_remaining``.  Base beta 1 only.  Returns (frames at
    T1 - eta with shape (paths, len(etas), d, d), clock value at those
    points, remaining time at the handoff).
    """
    O = np.array(O_h, dtype=float)
    lam_h = np.asarray(lam_h, dtype=float)
    P, d = lam_h.shape
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    if clock is None:
        n_steps = clock_steps(gap_h, pbeta, dphi, log_floor)
        x, rem = clock_gap_and_remaining(gap_h, pbeta, dphi, n_steps, master_seed, paths, source)
    else:
        x, rem = clock
        n_steps = x.shape[1]
    R = rem[:, 0]
    etas = np.asarray(etas, dtype=float)
    # frame at T1 - eta: state before the first step whose remaining time is <= eta
    idx = np.empty((P, etas.size), dtype=np.int64)
    for e, eta in enumerate(etas):
        below = rem <= eta
        first = np.where(below.any(axis=1), np.argmax(below, axis=1), n_steps)
        idx[:, e] = first
    phi_at = idx * dphi
    up = np.asarray(i_star, dtype=int) - 1
    lo = up - 1
    centre = 0.5 * (lam_h[np.arange(P), lo] + lam_h[np.arange(P), up])
    out = np.repeat(O[:, None], etas.size, axis=1)
    n_z = n_frame_normals(d, 1)
    noise = PathNoise(master_seed, paths, source, 1)
    chunk = 512
    buf = None
    last = int(min(idx.max(), n_steps))
    rows = np.arange(P)
    for k in range(last):
        if k % chunk == 0:
            buf = noise.normal((min(chunk, last - k), n_z))
        hit = idx == k
        if hit.any():
            r, c = np.nonzero(hit)
            out[r, c] = O[r]
        # coordinates relative to the pair centre keep X resolvable far below machine epsilon
        lam = lam_h - centre[:, None]
        lam[rows, lo] = -0.5 * x[:, k]
        lam[rows, up] = 0.5 * x[:, k]
        act = k < idx.max(axis=1)
        if act.any():
            Qn, _ = frame_update(O[act], lam[act], p, 1, x[act, k] ** 2 * dphi, buf[act, k % chunk], check=False)
            O[act] = Qn
    hit = idx >= last
    if hit.any():
        r, c = np.nonzero(hit)
        out[r, c] = O[r]
    return out, phi_at, R


def in_plane_angle(v, e1, e2):
    """Angle theta in [0, 2 pi) with v ~ sin(theta) e1 + cos(theta) e2."""
    a = np.sum(np.conj(e1) * v, axis=-1).real
    b = np.sum(np.conj(e2) * v, axis=-1).real
    return np.mod(np.arctan2(a, b), 2.0 * np.pi)


def collision_subspace_stats(cauchy_frames, cauchy_etas, angle_frames, angle_etas, ref_frames, i_star):
    """Cauchy increments, plane W and in-plane angles for a batch of colliding paths.

    ``cauchy_frames`` (paths, k, d, d) are frames at T1 - eta over the Cauchy
    sweep, ``angle_frames`` over the angle sweep (smallest eta last) and
    ``ref_frames`` the frames at the handoff that fix the in-plane reference
    direction.  i* is the 1-based upper colliding index.
    """
    cauchy_frames = np.asarray(cauchy_frames)
    angle_frames = np.asarray(angle_frames)
    P, _, d, _ = angle_frames.shape
    i_star = np.asarray(i_star, dtype=int)
    if P == 0:
        raise ValueError("no colliding paths")
    up = i_star - 1
    lo = up - 1
    others = [np.array([j for j in range(d) if j not in (lo[r], up[r])], dtype=int) for r in range(P)]
    n_other = d - 2
    cauchy = np.zeros((P, max(cauchy_frames.shape[1] - 1, 0), n_other))
    for r in range(P):
        cols = cauchy_frames[r][:, :, others[r]]
        cauchy[r] = np.linalg.norm(np.diff(cols, axis=0), axis=1)
    last = angle_frames[:, -1]
    basis = np.zeros((P, d, 2), dtype=last.dtype)
    angles = np.zeros((P, angle_frames.shape[1]))
    residual = np.zeros((P, angle_frames.shape[1]))
    for r in range(P):
        V = last[r][:, others[r]]
        proj = np.eye(d) - V @ np.conj(V.T)
        ref = proj @ ref_frames[r][:, [lo[r], up[r]]]
        q, _ = np.linalg.qr(ref)
        # keep the orientation of the reference pair
        s = np.sign(np.real(np.sum(np.conj(q) * ref, axis=0)))
        s[s == 0] = 1.0
        q = q * s
        basis[r] = q
        v = angle_frames[r][:, :, up[r]]
        angles[r] = in_plane_angle(v, q[:, 0], q[:, 1])
        residual[r] = np.linalg.norm(v @ np.conj(V), axis=-1) if n_other else 0.0
    return CollisionFrameStats(np.asarray(cauchy_etas), cauchy, basis, np.asarray(angle_etas), angles, residual)


def overlap_statistic(frames_T, frames_0, column=0):
    """|<phi_c(T), phi_c(0)>|^2 per path."""
    a = np.asarray(frames_T)[..., :, column]
    b = np.asarray(frames_0)[..., :, column]
    return np.abs(np.sum(np.conj(b) * a, axis=-1)) ** 2


def overlap_ks(sample, reference):
    return two_sample_ks(sample, reference)
