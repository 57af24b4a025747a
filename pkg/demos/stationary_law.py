"""Run the matrix diffusion to a long horizon and compare its spectrum with
the Gibbs law at the effective inverse temperature p * beta.

    python3 demos/stationary_law.py [paths]
"""
import sys

import numpy as np

from dysonbeta.matrix_process import simulate_matrix_batch
from dysonbeta.noise import NoiseStream
from dysonbeta.oracles import GibbsSpec, rejection_sample_gibbs
from dysonbeta.params import SimParams
from dysonbeta.stats import two_sample_ks

paths = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
params = SimParams(d=2, sector="hermitian", p=0.5, T=5.0, n=100, m=10, seed=3)
K = int(round(params.n * params.T))
batch = simulate_matrix_batch(params, np.arange(paths), record_every=K)
terminal = batch.eigenvalues[:, -1]
ref = rejection_sample_gibbs(GibbsSpec(2, 1.0), NoiseStream(4), size=50_000)
for i in range(2):
    print(f"eigenvalue {i + 1}: KS vs Gibbs(beta_eff=1) = {two_sample_ks(terminal[:, i], ref[:, i]):.4f}")
print(f"mean gap {np.mean(np.diff(terminal, axis=1)):.3f}  reference {np.mean(np.diff(ref, axis=1)):.3f}")
