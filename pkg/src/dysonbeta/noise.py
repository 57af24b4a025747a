"""Seeded random inputs: coin flips, matrix Brownian increments, eigen-direction
noise, scalar Brownian increments and Haar samples.

All randomness comes from Philox generators whose key is derived from
(master_seed, path_index, source) and whose counter words carry extra integer
labels such as a step index.  The stream for one path therefore does not
depend on how paths are grouped into batches or workers.
"""
from dataclasses import dataclass, field
import math
import os
import zlib

import numpy as np

from .linalg import MatrixState, Sector, dagger

SEED_ENV = "DYSONBETA_SEED"
DEFAULT_SEED = 20240607


def resolve_seed(seed=None):
    """Master seed, honouring the environment override when it is set."""
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        return int(env, 0) & (2**64 - 1)
    if seed is None:
        return DEFAULT_SEED
    return int(seed) & (2**64 - 1)


def _source_id(source):
    return zlib.crc32(str(source).encode("utf-8"))


def philox_key(master_seed, path_index, source):
    """Two 64-bit Philox key words for (master_seed, path_index, source)."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(path_index), _source_id(source)))
    return ss.generate_state(2, np.uint64)


def _philox(master_seed, path_index, source, words):
    if len(words) > 3:
        raise ValueError("at most three counter words are available")
    key = philox_key(master_seed, path_index, source)
    counter = np.zeros(4, dtype=np.uint64)
    for i, w in enumerate(words):
        counter[i + 1] = int(w) & (2**64 - 1)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True)
class NoiseStream:
    """Value-semantic handle on the random inputs of one simulation path.

    ``counters`` holds an integer offset per source so that a stream can be
    advanced without mutating it.
    """
    master_seed: int
    path_index: int = 0
    counters: tuple = field(default=())

    def counter(self, source):
        return dict(self.counters).get(source, 0)

    def advanced(self, source, k=1):
        c = dict(self.counters)
        c[source] = c.get(source, 0) + k
        return NoiseStream(self.master_seed, self.path_index, tuple(sorted(c.items())))

    def with_path(self, path_index):
        return NoiseStream(self.master_seed, path_index, self.counters)

    def generator(self, source, *labels):
        """Fresh generator for ``source``; ``labels`` select a sub-stream."""
        words = (self.counter(source),) + tuple(labels)
        return _philox(self.master_seed, self.path_index, source, words)


class PathNoise:
    """One persistent generator per path for a single noise source.

    Successive ``normal`` calls continue each path's own sequence, so the
    values a path sees are independent of the chunk sizes used to draw them.
    """

    def __init__(self, master_seed, path_indices, source, *labels):
        self.paths = np.asarray(path_indices, dtype=np.int64)
        self.gens = [NoiseStream(master_seed, int(i)).generator(source, *labels) for i in self.paths]

    def normal(self, shape, rows=None):
        shape = tuple(np.atleast_1d(shape)) if np.ndim(shape) else (int(shape),)
        gens = self.gens if rows is None else [self.gens[r] for r in rows]
        if not gens:
            return np.zeros((0,) + shape)
        return np.stack([g.standard_normal(shape) for g in gens])

    def uniform(self, shape, rows=None):
        shape = tuple(np.atleast_1d(shape)) if np.ndim(shape) else (int(shape),)
        gens = self.gens if rows is None else [self.gens[r] for r in rows]
        if not gens:
            return np.zeros((0,) + shape)
        return np.stack([g.random(shape) for g in gens])


@dataclass(frozen=True)
class CoinSchedule:
    """Bernoulli bits eps_k governing block [k/n, (k+1)/n)."""
    n: int
    p: float
    values: np.ndarray

    def at(self, t):
        """eps_t = eps_floor(n t)."""
        k = np.floor(np.asarray(t) * self.n + 1e-9).astype(int)
        return self.values[np.clip(k, 0, len(self.values) - 1)]


def n_blocks(n, T):
    """Number of whole blocks needed to cover [0, T]."""
    return int(math.ceil(n * T - 1e-9))


def bernoulli_stream(stream, n, p, T):
    """Coin schedule with ceil(nT)+1 bits, drawn from the path's coin substream for this n."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p out of [0,1]: {p}")
    if n < 1 or T <= 0:
        raise ValueError("n must be >= 1 and T > 0")
    k = n_blocks(n, T) + 1
    rng = stream.generator("coins", n)
    values = (rng.random(k) < p).astype(np.uint8)
    return CoinSchedule(int(n), float(p), values)


def coin_matrix(master_seed, path_indices, n, p, T):
    """Stacked coin schedules for a batch of paths, shape (paths, ceil(nT)+1)."""
    return np.stack([bernoulli_stream(NoiseStream(master_seed, int(i)), n, p, T).values
                     for i in path_indices])


def n_matrix_normals(d, sector):
    """Independent real normals needed for one matrix increment."""
    return d * (d + 1) // 2 if sector is Sector.SYMMETRIC else d * d


def assemble_hermitian(z, d, sector):
    """Map standard normals of shape (..., n_matrix_normals) to unit-time increments.

    Off-diagonal entries get unit variance (each of the real and imaginary
    parts in the Hermitian case) and the diagonal gets variance 2.
    """
    z = np.asarray(z)
    out = np.zeros(z.shape[:-1] + (d, d), dtype=sector.dtype)
    iu = np.triu_indices(d, 1)
    m = len(iu[0])
    diag = np.arange(d)
    out[..., diag, diag] = math.sqrt(2.0) * z[..., :d]
    if sector is Sector.SYMMETRIC:
        out[..., iu[0], iu[1]] = z[..., d:d + m]
    else:
        out[..., iu[0], iu[1]] = z[..., d:d + m] + 1j * z[..., d + m:d + 2 * m]
    out[..., iu[1], iu[0]] = np.conj(out[..., iu[0], iu[1]])
    return out


def hermitian_increment(stream, sector, dt, d, step=0):
    """Matrix Brownian increment over a step of length ``dt``."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    sector = Sector.parse(sector)
    z = stream.generator("H", step).standard_normal(n_matrix_normals(d, sector))
    return MatrixState.from_array(math.sqrt(dt) * assemble_hermitian(z, d, sector), sector)


def eigen_noise_increment(stream, projectors, dt, step=0):
    """sqrt(2) sum_i dB_i P_i for a complete family of rank-one projectors."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    projectors = [np.asarray(P) for P in projectors]
    d = projectors[0].shape[0]
    total = sum(projectors)
    if np.max(np.abs(total - np.eye(d))) > 1e-8:
        raise ValueError("projector family is not complete (does not sum to the identity)")
    db = math.sqrt(dt) * stream.generator("Y", step).standard_normal(d)
    out = math.sqrt(2.0) * sum(b * P for b, P in zip(db, projectors))
    sector = Sector.HERMITIAN if np.iscomplexobj(out) else Sector.SYMMETRIC
    return MatrixState.from_array(out, sector)


def frame_noise(q, z):
    """sqrt(2) Q diag(z) Q* for a stack of frames and diagonal noises."""
    return math.sqrt(2.0) * (q * z[..., None, :]) @ dagger(q)


def haar_from_normals(z, sector):
    """QR of a Gaussian matrix with the diagonal of R made positive."""
    if sector is Sector.HERMITIAN:
        g = (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2.0)
    else:
        g = z
    q, r = np.linalg.qr(g)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    ph = diag / np.abs(diag)
    return q * ph[..., None, :]


def haar_sample(stream, d, sector, index=0):
    """Haar-distributed element of O(d) (symmetric) or U(d) (hermitian)."""
    sector = Sector.parse(sector)
    shape = (d, d) if sector is Sector.SYMMETRIC else (d, d, 2)
    z = stream.generator("haar", index).standard_normal(shape)
    return haar_from_normals(z, sector)


def brownian_increments(stream, dt, n_steps, d, source="b"):
    """Scalar Brownian increments of variance dt, shape (n_steps, d)."""
    return math.sqrt(dt) * stream.generator(source).standard_normal((n_steps, d))
