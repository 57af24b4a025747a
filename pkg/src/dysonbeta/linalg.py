"""Dense symmetric/Hermitian matrices, ordered spectral decompositions and
frame projection back onto the orthogonal/unitary group.

Every routine accepts a single matrix or a stack of matrices with leading
batch dimensions; the ``batch_*`` helpers are the vectorised cores and the
dataclass wrappers are thin conveniences on top of them.
"""
from dataclasses import dataclass
import enum
import math

import numpy as np

SYMMETRY_TOL = 1e-12


class NumericalInputError(ValueError):
    """Raised when a matrix contains non-finite entries."""


class FrameDriftError(ValueError):
    """Raised when a frame is too far from the group to be projected back."""


class Sector(enum.Enum):
    SYMMETRIC = "symmetric"
    HERMITIAN = "hermitian"

    @property
    def beta(self):
        return 1 if self is Sector.SYMMETRIC else 2

    @property
    def dtype(self):
        return np.float64 if self is Sector.SYMMETRIC else np.complex128

    @classmethod
    def from_beta(cls, beta):
        if beta == 1:
            return cls.SYMMETRIC
        if beta == 2:
            return cls.HERMITIAN
        raise ValueError(f"base beta must be 1 or 2, got {beta}")

    @classmethod
    def parse(cls, value):
        if isinstance(value, Sector):
            return value
        text = str(value).strip().lower()
        aliases = {"1": "symmetric", "real": "symmetric", "orthogonal": "symmetric",
                   "2": "hermitian", "complex": "hermitian", "unitary": "hermitian"}
        try:
            return cls(aliases.get(text, text))
        except ValueError:
            raise ValueError(f"unknown sector {value!r}; use 'symmetric' or 'hermitian'") from None


def dagger(a):
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def symmetrize(a):
    return 0.5 * (a + dagger(a))


@dataclass(frozen=True)
class MatrixState:
    """A symmetric or Hermitian matrix tagged with its sector."""
    entries: np.ndarray
    sector: Sector

    def __post_init__(self):
        a = np.asarray(self.entries)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if self.sector is Sector.SYMMETRIC and np.iscomplexobj(a) and np.any(a.imag != 0):
            raise ValueError("symmetric sector requires real entries")
        a = a.astype(self.sector.dtype)
        scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
        if np.max(np.abs(a - dagger(a)), initial=0.0) > SYMMETRY_TOL * scale:
            raise ValueError("entries are not self-adjoint to within 1e-12")
        object.__setattr__(self, "entries", a)

    @classmethod
    def from_array(cls, a, sector):
        """Build a state from ``a`` after re-symmetrising it."""
        sector = Sector.parse(sector)
        a = np.asarray(a, dtype=sector.dtype)
        return cls(symmetrize(a), sector)

    @property
    def dim(self):
        return self.entries.shape[0]


@dataclass(frozen=True)
class SpectralDecomp:
    """Ascending eigenvalues with an eigenframe whose columns match them."""
    eigenvalues: np.ndarray
    frame: np.ndarray

    @property
    def dim(self):
        return self.eigenvalues.shape[0]


def fix_phases(vecs, prev=None):
    """Choose the sign/phase of each column of ``vecs``.

    With ``prev`` the phase maximises Re<prev_i, vec_i>; without it the
    largest-magnitude entry of each column is made real and positive.
    """
    vecs = np.asarray(vecs)
    if prev is None:
        idx = np.argmax(np.abs(vecs), axis=-2)
        pivot = np.take_along_axis(vecs, idx[..., None, :], axis=-2)[..., 0, :]
        ref = pivot
    else:
        ref = np.sum(np.conj(np.asarray(prev)) * vecs, axis=-2)
    mag = np.abs(ref)
    safe = np.where(mag > 0, mag, 1.0)
    phase = np.where(mag > 0, np.conj(ref) / safe, 1.0)
    if not np.iscomplexobj(vecs):
        phase = phase.real
    return vecs * phase[..., None, :]


def batch_eigh(a, prev=None):
    """Ordered eigenvalues and phase-fixed eigenvectors of a stack of matrices."""
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise NumericalInputError("matrix has non-finite entries")
    vals, vecs = np.linalg.eigh(a)
    order = np.argsort(vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    vecs = np.take_along_axis(vecs, order[..., None, :], axis=-1)
    return vals, fix_phases(vecs, prev)


def spectral_decompose(M, prev=None):
    """Ordered spectral decomposition of ``M`` with optional continuity selection."""
    prev_frame = None if prev is None else prev.frame
    vals, vecs = batch_eigh(M.entries, prev_frame)
    return SpectralDecomp(vals, vecs)


def spectral_projectors(decomp):
    """Rank-one projectors onto each eigenvector, in eigenvalue order."""
    q = decomp.frame
    return [np.outer(q[:, i], np.conj(q[:, i])) for i in range(q.shape[1])]


def batch_polar(q, max_condition=3.0):
    """Unitary polar factor of each matrix in a stack.

    The factor is scale free, so only the conditioning of ``q`` matters: a
    matrix within Frobenius distance 0.5 of the group has singular values in
    [0.5, 1.5], hence condition number at most 3.
    """
    q = np.asarray(q)
    if not np.all(np.isfinite(q)):
        raise FrameDriftError("frame has non-finite entries")
    if q.size:
        eye = np.eye(q.shape[-1])
        if np.max(np.abs(dagger(q) @ q - eye)) < 0.25:
            # Newton-Schulz keeps the singular vectors and drives every
            # singular value to 1, so it converges to the same polar factor
            x = q
            for _ in range(30):
                r = dagger(x) @ x - eye
                if np.max(np.abs(r)) < 1e-15:
                    break
                x = x @ (eye - 0.5 * r)
            return x
    u, s, vh = np.linalg.svd(q)
    smin = s[..., -1]
    if np.any(smin <= 0) or np.any(s[..., 0] > max_condition * smin):
        raise FrameDriftError("frame is singular or too far from the group; reduce the step size")
    return u @ vh


def batch_expm(a, order=12):
    """Matrix exponential of a stack by scaling and squaring a Taylor series.

    Much faster than a per-matrix Pade routine for many tiny matrices; the
    scaling brings every norm below 1/4, where order 12 is accurate to rounding.
    """
    a = np.asarray(a)
    norm = float(np.max(np.sum(np.abs(a), axis=-2))) if a.size else 0.0
    k = max(0, int(math.ceil(math.log2(norm / 0.25)))) if norm > 0.25 else 0
    x = a / (2.0**k)
    eye = np.eye(a.shape[-1], dtype=a.dtype)
    out = eye + x
    term = x
    for j in range(2, order + 1):
        term = term @ x / j
        out = out + term
        if np.max(np.abs(term)) < 1e-17:
            break
    for _ in range(k):
        out = out @ out
    return out


def reorthonormalize(Q):
    """Nearest orthogonal/unitary matrix to ``Q``."""
    return batch_polar(Q)


def group_residual(Q):
    """Frobenius norm of Q*Q - I (per matrix for stacks)."""
    Q = np.asarray(Q)
    eye = np.eye(Q.shape[-1])
    return np.linalg.norm(dagger(Q) @ Q - eye, axis=(-2, -1))


def conjugate(M, Q):
    """Return Q M Q* as a new state."""
    Q = np.asarray(Q)
    if Q.shape != M.entries.shape:
        raise ValueError(f"shape mismatch: {Q.shape} vs {M.entries.shape}")
    sector = M.sector
    if np.iscomplexobj(Q) and sector is Sector.SYMMETRIC:
        if np.any(Q.imag != 0):
            raise ValueError("complex group element cannot act on the symmetric sector")
        Q = Q.real
    return MatrixState.from_array(Q @ M.entries @ dagger(Q), sector)
