"""Reference samplers and closed forms used to check the simulators.

Nothing in this module calls a simulator.  The Gibbs rejection sampler is
exact; the tridiagonal sampler is only trusted after it has been compared
against the rejection sampler (see ``tridiagonal_gate``).
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy import optimize, special, stats

from .noise import NoiseStream


class InfeasibleSpecError(ValueError):
    """Raised when rejection sampling would accept too rarely to be useful."""


@dataclass(frozen=True)
class GibbsSpec:
    """Density proportional to prod_{i<j} |l_i - l_j|^beta_eff * exp(-sum l^2 / 2)."""
    d: int
    beta_eff: float
    weight: str = "gaussian-half"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.beta_eff < 0:
            raise ValueError("beta_eff must be >= 0")
        if self.weight != "gaussian-half":
            raise ValueError("only the exp(-sum l^2/2) weight is supported")


def gibbs_log_normalizer(d, beta):
    """log of the integral of prod|l_i - l_j|^beta exp(-sum l^2/2) over R^d."""
    j = np.arange(1, d + 1)
    return (0.5 * d * math.log(2 * math.pi)
            + float(np.sum(special.gammaln(1 + j * beta / 2) - special.gammaln(1 + beta / 2))))


def log_vandermonde(lam, beta):
    lam = np.asarray(lam, dtype=float)
    d = lam.shape[-1]
    iu = np.triu_indices(d, 1)
    diff = np.abs(lam[..., iu[1]] - lam[..., iu[0]])
    with np.errstate(divide="ignore"):
        return beta * np.sum(np.log(diff), axis=-1)


def _hermite_zeros(d):
    if d == 1:
        return np.zeros(1)
    return np.sort(np.polynomial.hermite.hermroots([0] * d + [1]))


def _proposal_log_acceptance(d, beta, sigma):
    """log acceptance rate and log envelope constant for an N(0, sigma^2) proposal."""
    c = 0.5 - 0.5 / sigma**2
    lam_star = math.sqrt(beta / (2 * c)) * _hermite_zeros(d)
    log_wmax = float(log_vandermonde(lam_star, beta)) - c * float(np.sum(lam_star**2))
    log_zg = 0.5 * d * math.log(2 * math.pi * sigma**2)
    return gibbs_log_normalizer(d, beta) - log_wmax - log_zg, log_wmax


def rejection_plan(spec):
    """Proposal width and exact acceptance rate used by ``rejection_sample_gibbs``."""
    d, beta = spec.d, float(spec.beta_eff)
    if d == 1 or beta == 0:
        return 1.0, 1.0, 0.0
    res = optimize.minimize_scalar(lambda s: -_proposal_log_acceptance(d, beta, s)[0],
                                   bounds=(1.0 + 1e-6, 6.0), method="bounded",
                                   options={"xatol": 1e-8})
    sigma = float(res.x)
    log_acc, log_wmax = _proposal_log_acceptance(d, beta, sigma)
    return sigma, math.exp(log_acc), log_wmax


def rejection_sample_gibbs(spec, stream, size=None, index=0):
    """Exact draws from the Gibbs law by rejection from a widened Gaussian.

    Returns one sorted vector, or an array of shape (size, d).
    """
    if spec.d > 4:
        raise ValueError("rejection sampling is limited to d <= 4")
    sigma, acc, log_wmax = rejection_plan(spec)
    if acc < 1e-6:
        raise InfeasibleSpecError(f"acceptance rate {acc:.3g} below 1e-6")
    want = 1 if size is None else int(size)
    rng = stream.generator("rejection", index)
    c = 0.5 - 0.5 / sigma**2
    out = []
    have = 0
    while have < want:
        batch = max(64, int(1.2 * (want - have) / acc))
        x = sigma * rng.standard_normal((batch, spec.d))
        log_w = log_vandermonde(x, spec.beta_eff) - c * np.sum(x**2, axis=1) - log_wmax
        keep = np.log(rng.random(batch)) < log_w
        out.append(x[keep])
        have += int(keep.sum())
    sample = np.sort(np.concatenate(out)[:want], axis=1)
    return sample[0] if size is None else sample


def sample_tridiagonal_beta(d, beta_eff, stream, size=None, index=0):
    """Eigenvalues of the tridiagonal beta model, scaled to the exp(-sum l^2/2) weight.

    Diagonal entries are N(0, 2), the k-th off-diagonal is chi with
    beta*(d-k) degrees of freedom, and the whole matrix is divided by sqrt(2).
    """
    if beta_eff <= 0:
        raise ValueError("beta_eff must be positive")
    count = 1 if size is None else int(size)
    rng = stream.generator("tridiagonal", index)
    diag = math.sqrt(2.0) * rng.standard_normal((count, d))
    dof = beta_eff * np.arange(d - 1, 0, -1)
    off = np.sqrt(rng.chisquare(dof, size=(count, d - 1))) if d > 1 else np.zeros((count, 0))
    a = np.zeros((count, d, d))
    i = np.arange(d)
    a[:, i, i] = diag
    a[:, i[:-1], i[1:]] = off
    a[:, i[1:], i[:-1]] = off
    vals = np.linalg.eigvalsh(a / math.sqrt(2.0))
    return vals[0] if size is None else vals


def tridiagonal_gate(d, beta_eff, seed, n_samples=100_000, threshold=0.02):
    """Compare every ordered coordinate of the tridiagonal and rejection samplers.

    Returns (max KS distance, passed).
    """
    spec = GibbsSpec(d, beta_eff)
    a = sample_tridiagonal_beta(d, beta_eff, NoiseStream(seed, 0), size=n_samples)
    b = rejection_sample_gibbs(spec, NoiseStream(seed, 1), size=n_samples)
    ks = max(stats.ks_2samp(a[:, i], b[:, i]).statistic for i in range(d))
    return float(ks), bool(ks < threshold)


def _check_bessel_domain(t, delta, pbeta):
    if not 0 < pbeta < 1:
        raise ValueError("pbeta must lie in (0, 1)")
    if delta <= 0:
        raise ValueError("delta must be positive")
    if np.any(np.asarray(t) <= 0):
        raise ValueError("t must be positive")


def bessel_fp_pdf(t, delta, pbeta):
    """Hitting-time density 1/Gamma(k) * (1/t) * (delta^2/2t)^k * exp(-delta^2/2t), k=(1-pbeta)/2."""
    _check_bessel_domain(t, delta, pbeta)
    t = np.asarray(t, dtype=float)
    k = 0.5 * (1.0 - pbeta)
    u = delta**2 / (2.0 * t)
    return np.exp(k * np.log(u) - u - special.gammaln(k)) / t


def bessel_fp_cdf(t, delta, pbeta):
    """Distribution function of ``bessel_fp_pdf``: upper regularised gamma at delta^2/2t."""
    _check_bessel_domain(t, delta, pbeta)
    k = 0.5 * (1.0 - pbeta)
    return special.gammaincc(k, delta**2 / (2.0 * np.asarray(t, dtype=float)))


def ou_moments(lambda0, gamma, t):
    """Mean and variance at time t of dX = -gamma X dt + sqrt(2) db."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    mean = np.asarray(lambda0, dtype=float) * math.exp(-gamma * t)
    var = (1.0 - math.exp(-2.0 * gamma * t)) / gamma
    return mean, var


def gap_hit_cdf_printed(t, delta, pbeta):
    """P(T <= t) for the gap first passage as written with the delta^2/2t argument."""
    return bessel_fp_cdf(t, delta, pbeta)


def gap_hit_cdf_rescaled(t, delta, pbeta):
    """P(T <= t) for the gap X of dX = 2 pbeta / X dt + 2 dB, X_0 = delta.

    X/2 is a Bessel process of dimension 1 + pbeta, so the argument of the
    incomplete gamma function is delta^2/8t.
    """
    _check_bessel_domain(t, delta, pbeta)
    k = 0.5 * (1.0 - pbeta)
    return special.gammaincc(k, delta**2 / (8.0 * np.asarray(t, dtype=float)))


def ou_bessel_hit_probability(gap0, pbeta, gamma, t):
    """P(T_1 <= t) for the two-particle gap with confinement gamma.

    The gap solves dX = (2 pbeta / X - gamma X) dt + 2 dB.  Removing the
    linear drift by the factor e^{gamma t} turns it into a time-changed
    Bessel process with clock u(t) = (e^{2 gamma t} - 1) / (2 gamma).
    """
    if not 0 < pbeta < 1:
        raise ValueError("pbeta must lie in (0, 1)")
    u = t if gamma == 0 else math.expm1(2.0 * gamma * t) / (2.0 * gamma)
    return float(gap_hit_cdf_rescaled(u, gap0, pbeta))
