"""Fraction of limit-system paths that reach a collision by time T, for
effective couplings below and above the collision threshold p * beta = 1.

    python3 demos/collisions.py
"""
import numpy as np

from dysonbeta.params import SimParams
from dysonbeta.particles import simulate_batch

for p, sector in ((0.2, "symmetric"), (0.6, "symmetric"), (0.6, "hermitian"), (1.0, "hermitian")):
    params = SimParams(d=2, sector=sector, p=p, T=2.0, dt=1e-3, seed=1)
    batch = simulate_batch(params, "limit", np.arange(400), record_every=100)
    frac = np.mean(np.isfinite(batch.first_collision))
    print(f"p*beta = {params.pbeta:.1f}: collided in {frac:.3f} of 400 paths by T=2")
