"""The Bernoulli-switched matrix diffusion

    dM = -gamma M dt + eps_t dH + (1 - eps_t) dY,

where H is a symmetric or Hermitian Brownian matrix, dY = sqrt(2) sum_i dB_i chi_i
uses spectral projectors frozen at the start of each block [k/n, (k+1)/n), and
eps_t is the coin of the enclosing block.

Within a block the dynamics are linear with additive Gaussian noise, so the m
Euler substeps with exact damping can be aggregated: the block update is
e^{-gamma/n} M plus one increment whose variance is dt * sum_j e^{-2 gamma j dt}.
The batched engine uses this aggregation by default (``substeps=False``); the
substep form is kept for validation and for full-resolution state records.
"""
from dataclasses import dataclass
import math

import numpy as np

from .linalg import (MatrixState, Sector, SpectralDecomp, batch_eigh, dagger, spectral_decompose,
                     symmetrize)
from .noise import (CoinSchedule, NoiseStream, PathNoise, assemble_hermitian, coin_matrix,
                    eigen_noise_increment, frame_noise, hermitian_increment, n_blocks,
                    n_matrix_normals)
from .particles import CollisionEvent, ParticlePath

MIN_BOUNDARY_GAP = 1e-14


def step_matrix(M, eps, projectors, dt, stream, gamma=1.0, step=0):
    """One substep M' = e^{-gamma dt} M + increment.

    The increment is a matrix Brownian increment when ``eps`` is 1 and the
    projector noise built from the frozen ``projectors`` when it is 0.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    a = math.exp(-gamma * dt) * M.entries
    if eps:
        inc = hermitian_increment(stream, M.sector, dt, M.dim, step=step)
    else:
        inc = eigen_noise_increment(stream, projectors, dt, step=step)
    return MatrixState.from_array(a + inc.entries, M.sector)


@dataclass
class MatrixPath:
    """Matrix path sampled at block boundaries (and optionally at substeps).

    ``eigenvalues`` and ``frames`` hold the spectral snapshot at each block
    boundary k/n, the frames continuity-selected from one snapshot to the
    next.  ``states`` is None unless full states were requested.
    """
    params: object
    grid: np.ndarray
    eigenvalues: np.ndarray
    frames: np.ndarray
    coins: CoinSchedule
    states: list = None
    state_grid: np.ndarray = None
    small_gaps: list = None

    @property
    def snapshots(self):
        return [SpectralDecomp(self.eigenvalues[k], self.frames[k]) for k in range(self.grid.size)]


@dataclass
class MatrixBatch:
    """Block-boundary spectra for a batch of paths.

    ``eigenvalues`` has shape (paths, records, d); ``frames`` is None unless
    requested.  ``small_gaps`` lists (path, block, gap) for every boundary
    where an adjacent gap fell below MIN_BOUNDARY_GAP.
    """
    grid: np.ndarray
    eigenvalues: np.ndarray
    frames: np.ndarray
    coins: np.ndarray
    paths: np.ndarray
    small_gaps: list
    final_states: np.ndarray


def initial_matrix(params, M0=None):
    """Starting matrix: ``M0`` if given, otherwise diag(lambda0)."""
    if M0 is None:
        return np.diag(np.asarray(params.lambda0, dtype=float)).astype(params.sector.dtype)
    M0 = M0.entries if isinstance(M0, MatrixState) else np.asarray(M0)
    return symmetrize(M0.astype(params.sector.dtype))


def block_variance(gamma, dt, m):
    """Variance factor of m damped substeps of length dt aggregated into one."""
    if gamma == 0:
        return m * dt
    return dt * sum(math.exp(-2.0 * gamma * j * dt) for j in range(m))


def simulate_matrix_batch(params, paths, M0=None, coins=None, record_every=1, keep_frames=False,
                          substeps=False, chunk=64, source="M"):
    """Run the matrix diffusion for a batch of path indices.

    Spectral snapshots are taken at every block boundary (the projectors of
    the next block need them) and stored every ``record_every`` blocks.
    Each path draws its normals from its own generator, block after block,
    so the result for one path does not depend on the batch it runs in.
    """
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    P = paths.size
    d, sector = params.d, params.sector
    K = n_blocks(params.n, params.T)
    m = params.m
    dt = params.dt_sub
    if coins is None:
        coins = coin_matrix(params.seed, paths, params.n, params.p, params.T)
    coins = np.asarray(coins)
    nh = n_matrix_normals(d, sector)
    per_sub = nh + d
    if substeps:
        damp = math.exp(-params.gamma * dt)
        scale = math.sqrt(dt)
    else:
        damp = math.exp(-params.gamma * dt * m)
        scale = math.sqrt(block_variance(params.gamma, dt, m))
    tag = f"{source}/sub" if substeps else source
    noise = PathNoise(params.seed, paths, tag, int(params.n), int(m))

    M = np.repeat(initial_matrix(params, M0)[None], P, axis=0)
    lam, Q = batch_eigh(M)
    every = max(1, int(record_every))
    n_rec = K // every + 1
    eig = np.empty((P, n_rec, d))
    frames = np.empty((P, n_rec, d, d), dtype=sector.dtype) if keep_frames else None
    eig[:, 0] = lam
    if keep_frames:
        frames[:, 0] = Q
    small = []
    n_draw = m if substeps else 1
    buf = None
    for k in range(K):
        if k % chunk == 0:
            buf = noise.normal((min(chunk, K - k), n_draw, per_sub))
        z = buf[:, k % chunk]
        on = coins[:, k].astype(bool)
        for s in range(n_draw):
            zh = z[:, s, :nh]
            zy = z[:, s, nh:]
            inc = np.empty_like(M)
            if on.any():
                inc[on] = assemble_hermitian(zh[on], d, sector)
            if (~on).any():
                inc[~on] = frame_noise(Q[~on], zy[~on]).astype(sector.dtype)
            M = symmetrize(damp * M + scale * inc)
        lam, Q = batch_eigh(M, prev=Q)
        gaps = np.diff(lam, axis=1)
        if d > 1:
            bad = np.nonzero(gaps.min(axis=1) < MIN_BOUNDARY_GAP)[0]
            for r in bad:
                small.append((int(paths[r]), k + 1, float(gaps[r].min())))
        if (k + 1) % every == 0:
            eig[:, (k + 1) // every] = lam
            if keep_frames:
                frames[:, (k + 1) // every] = Q
    grid = np.arange(n_rec) * every / params.n
    return MatrixBatch(grid, eig, frames, coins, paths, small, M)


def simulate_matrix_path(params, stream, M0=None, keep_states=False):
    """One path of the matrix diffusion with a snapshot at every block boundary.

    With ``keep_states`` the path is integrated substep by substep through
    ``step_matrix`` and every substep state is kept; otherwise the batched
    engine is used with a single path.
    """
    p = params.with_(seed=stream.master_seed)
    from .noise import bernoulli_stream
    sched = bernoulli_stream(stream, p.n, p.p, p.T)
    if not keep_states:
        b = simulate_matrix_batch(p, [stream.path_index], M0=M0, coins=sched.values[None], keep_frames=True)
        return MatrixPath(p, b.grid, b.eigenvalues[0], b.frames[0], sched, small_gaps=b.small_gaps)
    K = n_blocks(p.n, p.T)
    M = MatrixState.from_array(initial_matrix(p, M0), p.sector)
    dec = spectral_decompose(M)
    eig, frames, states, sgrid, small = [dec.eigenvalues], [dec.frame], [M], [0.0], []
    for k in range(K):
        proj = [np.outer(dec.frame[:, i], dec.frame[:, i].conj()) for i in range(p.d)]
        for s in range(p.m):
            try:
                M = step_matrix(M, sched.values[k], proj, p.dt_sub, stream, p.gamma, step=k * p.m + s)
            except Exception as exc:
                raise type(exc)(f"block {k}: {exc}") from exc
            states.append(M)
            sgrid.append((k * p.m + s + 1) * p.dt_sub)
        try:
            dec = spectral_decompose(M, prev=dec)
        except Exception as exc:
            raise type(exc)(f"block {k + 1}: {exc}") from exc
        if p.d > 1 and np.min(np.diff(dec.eigenvalues)) < MIN_BOUNDARY_GAP:
            small.append((stream.path_index, k + 1, float(np.min(np.diff(dec.eigenvalues)))))
        eig.append(dec.eigenvalues)
        frames.append(dec.frame)
    grid = np.arange(K + 1) / p.n
    return MatrixPath(p, grid, np.array(eig), np.array(frames), sched, states, np.array(sgrid), small)


def extract_eigen_path(path):
    """Ordered eigenvalue path and block-boundary frames of a MatrixPath."""
    from .frames import FramePath
    events = [CollisionEvent(path.grid[k], 0, "detected", 0.0, q + 1, g)
              for q, (_, k, g) in enumerate(path.small_gaps or [])]
    lam = ParticlePath(path.grid, path.eigenvalues, events, path.coins)
    fr = FramePath(path.grid, path.frames, np.zeros((path.grid.size, path.params.d)))
    return lam, fr


def eigen_csv_rows(grid, eigenvalues, coins, n):
    """Rows (t, l_1..l_d, eps_block) for one path; eps_block is the coin of the block starting at t."""
    rows = []
    for j, t in enumerate(grid):
        k = min(int(round(t * n)), coins.shape[-1] - 1)
        rows.append([float(t)] + [float(x) for x in eigenvalues[j]] + [int(coins[k])])
    return rows
