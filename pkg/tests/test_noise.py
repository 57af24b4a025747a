import numpy as np
import pytest

from dysonbeta import _kernels
from dysonbeta.linalg import Sector, group_residual
from dysonbeta.noise import (NoiseStream, PathNoise, bernoulli_stream, coin_matrix, eigen_noise_increment,
                             haar_sample, hermitian_increment, philox_key, resolve_seed)
from dysonbeta.stats import distribution_distance


def test_philox_block_matches_numpy():
    key = philox_key(123, 4, "b")
    out = np.empty(4, dtype=np.uint64)
    for counter in ([1, 0, 0, 0], [7, 3, 1, 2], [2**63, 5, 0, 9]):
        c = [np.uint64(x) for x in counter]
        _kernels.philox_block(key[0], key[1], c[0], c[1], c[2], c[3], out)
        ref_counter = np.array(counter, dtype=np.uint64)
        ref_counter[0] -= np.uint64(1)
        ref = np.random.Philox(key=key, counter=ref_counter).random_raw(4)
        np.testing.assert_array_equal(out, ref)


def test_stream_reproducible_and_independent():
    a = NoiseStream(42, 3).generator("H", 5).standard_normal(10)
    b = NoiseStream(42, 3).generator("H", 5).standard_normal(10)
    c = NoiseStream(42, 4).generator("H", 5).standard_normal(10)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    z = np.stack([NoiseStream(1, i).generator("x").standard_normal(2000) for i in range(2)])
    assert abs(np.corrcoef(z)[0, 1]) < 0.1


def test_path_noise_is_chunk_independent():
    whole = PathNoise(9, [0, 1, 2], "w").normal((12,))
    pn = PathNoise(9, [0, 1, 2], "w")
    parts = np.concatenate([pn.normal((5,)), pn.normal((7,))], axis=1)
    np.testing.assert_array_equal(whole, parts)
    alone = PathNoise(9, [1], "w").normal((12,))
    np.testing.assert_array_equal(alone[0], whole[1])


def test_seed_env_override(monkeypatch):
    monkeypatch.setenv("DYSONBETA_SEED", "77")
    assert resolve_seed(5) == 77
    monkeypatch.delenv("DYSONBETA_SEED")
    assert resolve_seed(5) == 5


def test_coins():
    s = NoiseStream(0)
    assert np.all(bernoulli_stream(s, 100, 1.0, 1.0).values == 1)
    assert np.all(bernoulli_stream(s, 100, 0.0, 1.0).values == 0)
    v = bernoulli_stream(s, 100_000, 0.5, 1.0).values
    assert abs(v.mean() - 0.5) < 0.005
    sched = bernoulli_stream(s, 10, 0.5, 1.0)
    assert sched.values.size == 11
    assert sched.at(0.15) == sched.values[1]
    with pytest.raises(ValueError):
        bernoulli_stream(s, 10, 1.5, 1.0)
    np.testing.assert_array_equal(coin_matrix(0, [0], 10, 0.5, 1.0)[0], sched.values)


def test_hermitian_increment_zero_dt():
    inc = hermitian_increment(NoiseStream(0), "symmetric", 0.0, 3)
    np.testing.assert_array_equal(inc.entries, 0)


@pytest.mark.parametrize("sector", list(Sector))
def test_hermitian_increment_variances(sector):
    from dysonbeta.noise import assemble_hermitian, n_matrix_normals
    z = np.random.default_rng(0).standard_normal((100_000, n_matrix_normals(3, sector)))
    m = assemble_hermitian(z, 3, sector)
    if sector is Sector.SYMMETRIC:
        assert abs(np.var(m[:, 0, 1]) - 1) < 0.02
        assert abs(np.var(m[:, 0, 0]) - 2) < 0.04
    else:
        assert abs(np.var(m[:, 0, 1].real) - 1) < 0.02
        assert abs(np.var(m[:, 0, 1].imag) - 1) < 0.02
    single = hermitian_increment(NoiseStream(1), sector, 1.0, 3)
    assert single.sector is sector


def test_eigen_noise_increment():
    eye = [np.diag(np.eye(3)[i]) for i in range(3)]
    inc = eigen_noise_increment(NoiseStream(0), eye, 0.5)
    assert np.all(inc.entries[~np.eye(3, dtype=bool)] == 0)
    draws = np.array([np.diag(eigen_noise_increment(NoiseStream(0, i), eye, 0.5).entries) for i in range(4000)])
    assert abs(np.var(draws) - 1.0) < 0.06
    np.testing.assert_array_equal(eigen_noise_increment(NoiseStream(0), eye, 0.0).entries, 0)
    Q = haar_sample(NoiseStream(3), 3, "symmetric")
    proj = [np.outer(Q[:, i], Q[:, i]) for i in range(3)]
    inc = eigen_noise_increment(NoiseStream(1), proj, 1.0)
    inner = Q.T @ inc.entries @ Q
    assert np.max(np.abs(inner[~np.eye(3, dtype=bool)])) < 1e-10
    with pytest.raises(ValueError):
        eigen_noise_increment(NoiseStream(0), proj[:2], 1.0)


def test_haar():
    signs = np.array([haar_sample(NoiseStream(0), 1, "symmetric", index=i)[0, 0] for i in range(10_000)])
    assert set(np.round(signs, 12)) == {-1.0, 1.0}
    assert abs(np.mean(signs > 0) - 0.5) < 3 * 0.005
    assert group_residual(haar_sample(NoiseStream(1), 4, "hermitian")) < 1e-12
    qs = [haar_sample(NoiseStream(2), 2, "symmetric", index=i) for i in range(10_000)]
    angles = np.array([np.mod(np.arctan2(q[1, 0], q[0, 0]), 2 * np.pi) for q in qs])
    assert distribution_distance("KS", angles, lambda x: x / (2 * np.pi)) < 0.02
