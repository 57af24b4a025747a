import math

import numpy as np
import pytest
from scipy import integrate

from dysonbeta.noise import NoiseStream
from dysonbeta.oracles import (GibbsSpec, InfeasibleSpecError, bessel_fp_cdf, bessel_fp_pdf, gap_hit_cdf_rescaled,
                               ou_bessel_hit_probability, ou_moments, rejection_sample_gibbs,
                               sample_tridiagonal_beta, tridiagonal_gate)
from dysonbeta.stats import distribution_distance, two_sample_ks


def test_rejection_no_interaction_is_sorted_normals():
    x = rejection_sample_gibbs(GibbsSpec(3, 0.0), NoiseStream(0), size=20_000)
    assert np.all(np.diff(x, axis=1) >= 0)
    ref = np.sort(np.random.default_rng(0).standard_normal((20_000, 3)), axis=1)
    assert two_sample_ks(x[:, 0], ref[:, 0]) < 0.03


def test_rejection_d1_standard_normal():
    from scipy.stats import norm
    x = rejection_sample_gibbs(GibbsSpec(1, 1.0), NoiseStream(1), size=20_000)[:, 0]
    assert distribution_distance("KS", x, norm.cdf) < 0.02


def test_rejection_d2_gap_moment():
    x = rejection_sample_gibbs(GibbsSpec(2, 1.0), NoiseStream(2), size=100_000)
    emp = np.mean((x[:, 1] - x[:, 0]) ** 2)
    # gap g = l2 - l1 has density proportional to g exp(-g^2/4) on g > 0
    num = integrate.quad(lambda g: g**3 * math.exp(-g * g / 4), 0, np.inf)[0]
    den = integrate.quad(lambda g: g * math.exp(-g * g / 4), 0, np.inf)[0]
    assert emp == pytest.approx(num / den, rel=0.02)


def test_rejection_infeasible():
    with pytest.raises(ValueError):
        rejection_sample_gibbs(GibbsSpec(6, 1.0), NoiseStream(0), size=1)


def test_tridiagonal_d1():
    from scipy.stats import norm
    x = sample_tridiagonal_beta(1, 1.0, NoiseStream(0), size=20_000)[:, 0]
    assert distribution_distance("KS", x, norm.cdf) < 0.02


@pytest.mark.parametrize("d,beta", [(2, 1.0), (3, 2.0)])
def test_tridiagonal_gate(d, beta):
    ks, ok = tridiagonal_gate(d, beta, 5, n_samples=100_000)
    assert ok and ks < 0.02


def test_bessel_density():
    k = 0.5 * (1 - 0.5)
    assert bessel_fp_pdf(1.0, 1.0, 0.5) == pytest.approx(0.5**k * math.exp(-0.5) / math.gamma(k))
    total = integrate.quad(lambda t: bessel_fp_pdf(t, 0.3, 0.4), 0, np.inf, limit=500)[0]
    assert total == pytest.approx(1.0, abs=1e-6)
    s = np.array([0.1, 0.7, 3.0])
    for delta in (0.2, 1.0, 5.0):
        np.testing.assert_allclose(bessel_fp_pdf(delta**2 * s, delta, 0.3) * delta**2,
                                   bessel_fp_pdf(s, 1.0, 0.3), rtol=1e-12)
    assert bessel_fp_cdf(1e9, 1.0, 0.3) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ValueError):
        bessel_fp_pdf(1.0, 1.0, 1.2)


def test_rescaled_and_ou_bessel():
    assert gap_hit_cdf_rescaled(2.0, 1.0, 0.3) == pytest.approx(bessel_fp_cdf(8.0, 1.0, 0.3))
    assert ou_bessel_hit_probability(1.0, 0.3, 0.0, 2.0) == pytest.approx(gap_hit_cdf_rescaled(2.0, 1.0, 0.3))
    u = math.expm1(2.0) / 2
    assert ou_bessel_hit_probability(1.0, 0.3, 1.0, 1.0) == pytest.approx(gap_hit_cdf_rescaled(u, 1.0, 0.3))


def test_ou_moments():
    m, v = ou_moments(np.array([2.0]), 1.0, 0.0)
    assert m[0] == 2.0 and v == 0.0
    m, v = ou_moments(np.array([2.0]), 1.0, 1.0)
    assert m[0] == pytest.approx(2 * math.exp(-1)) and v == pytest.approx(1 - math.exp(-2))
    m, v = ou_moments(np.array([2.0]), 2.0, 1e3)
    assert m[0] == pytest.approx(0.0) and v == pytest.approx(0.5)
