import math

import numpy as np
import pytest

from dysonbeta.linalg import MatrixState, Sector
from dysonbeta.matrix_process import (block_variance, eigen_csv_rows, extract_eigen_path, simulate_matrix_batch,
                                      simulate_matrix_path, step_matrix)
from dysonbeta.noise import NoiseStream, hermitian_increment
from dysonbeta.params import SimParams


def test_step_matrix_pure_increment():
    M = MatrixState(np.diag([1.0, 2.0]), Sector.SYMMETRIC)
    s = NoiseStream(3)
    out = step_matrix(M, 1, None, 0.01, s, gamma=0.0, step=4)
    inc = hermitian_increment(s, Sector.SYMMETRIC, 0.01, 2, step=4)
    np.testing.assert_allclose(out.entries - M.entries, inc.entries)


def test_step_matrix_projector_noise_keeps_off_diagonal_deterministic():
    M = MatrixState(np.array([[1.0, 0.3], [0.3, 2.0]]), Sector.SYMMETRIC)
    proj = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
    out = step_matrix(M, 0, proj, 0.1, NoiseStream(0), gamma=1.0)
    assert out.entries[0, 1] == pytest.approx(0.3 * math.exp(-0.1))


def test_step_matrix_scalar_mean():
    M = MatrixState(np.array([[2.0]]), Sector.SYMMETRIC)
    vals = [step_matrix(M, 1, None, 0.1, NoiseStream(0, i)).entries[0, 0] for i in range(4000)]
    se = math.sqrt(2 * 0.1 / 4000)
    assert abs(np.mean(vals) - 2 * math.exp(-0.1)) < 3 * se


def test_p0_diagonal_start_stays_diagonal():
    params = SimParams(d=3, p=0.0, T=0.2, n=50, m=4, lambda0=(-1.0, 0.0, 1.0))
    path = simulate_matrix_path(params, NoiseStream(1), keep_states=True)
    for M in path.states:
        off = M.entries[~np.eye(3, dtype=bool)]
        assert np.max(np.abs(off)) < 1e-12


def test_p1_uses_only_matrix_noise():
    params = SimParams(d=2, p=1.0, T=0.1, n=20, m=2)
    b = simulate_matrix_batch(params, [0], substeps=True)
    assert np.all(b.coins == 1)


def test_scalar_ou_mean():
    params = SimParams(d=1, p=0.5, T=1.0, n=20, m=5, lambda0=(2.0,))
    b = simulate_matrix_batch(params, np.arange(10_000), record_every=20)
    x = b.eigenvalues[:, -1, 0]
    mean, var = 2 * math.exp(-1), 1 - math.exp(-2)
    assert abs(x.mean() - mean) < 3 * math.sqrt(var / x.size)


def test_block_variance():
    assert block_variance(0.0, 0.1, 4) == pytest.approx(0.4)
    assert block_variance(1.0, 0.1, 2) == pytest.approx(0.1 * (1 + math.exp(-0.2)))


def test_aggregated_blocks_match_substeps_in_law():
    params = SimParams(d=2, p=0.5, T=0.5, n=20, m=5)
    a = simulate_matrix_batch(params, np.arange(3000), record_every=10).eigenvalues[:, -1]
    b = simulate_matrix_batch(params, np.arange(3000, 6000), record_every=10, substeps=True).eigenvalues[:, -1]
    from scipy.stats import ks_2samp
    for i in range(2):
        assert ks_2samp(a[:, i], b[:, i]).pvalue > 1e-3


def test_batch_is_composition_independent():
    params = SimParams(d=3, p=0.5, T=0.1, n=50)
    big = simulate_matrix_batch(params, np.arange(6))
    small = simulate_matrix_batch(params, [4])
    np.testing.assert_array_equal(big.eigenvalues[4], small.eigenvalues[0])


def test_extract_eigen_path_sorted_and_constant_case():
    params = SimParams(d=3, p=0.4, T=0.2, n=50)
    path = simulate_matrix_path(params, NoiseStream(2))
    lam, fr = extract_eigen_path(path)
    assert np.all(np.diff(lam.values, axis=1) >= 0)
    assert fr.frames.shape == (lam.grid.size, 3, 3)
    rows = eigen_csv_rows(path.grid, path.eigenvalues, path.coins.values, params.n)
    assert len(rows) == path.grid.size and len(rows[0]) == 5


def test_dyson_regime_gaps_positive():
    params = SimParams(d=2, sector="hermitian", p=1.0, T=1.0, n=50)
    b = simulate_matrix_batch(params, np.arange(1000), record_every=1)
    assert np.all(np.diff(b.eigenvalues, axis=2) > 0)
    assert b.small_gaps == []


def test_entry_variances_p1():
    # with eps = 1 the matrix is an OU matrix: off-diagonal variance (1 - e^{-2t})/2 at gamma = 1
    params = SimParams(d=2, p=1.0, T=1.0, n=20, m=5, lambda0=(-0.5, 0.5))
    b = simulate_matrix_batch(params, np.arange(5000), record_every=20)
    off = b.final_states[:, 0, 1]
    assert abs(np.var(off) - 0.5 * (1 - math.exp(-2))) < 0.03
