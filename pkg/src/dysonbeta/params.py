"""Simulation parameters shared by the matrix, particle and frame simulators."""
from dataclasses import dataclass, replace
import math

import numpy as np

from .linalg import Sector


@dataclass(frozen=True)
class SimParams:
    """Configuration of one simulation.

    ``n`` is the coin rate (blocks per unit time) and ``m`` the number of
    substeps per block, so the substep is 1/(n m).  Particle and frame
    integrators use ``dt`` when it is given and the substep otherwise.
    ``collision_tol`` defaults to 1e-6 times the mean initial gap.
    """
    d: int
    sector: Sector = Sector.SYMMETRIC
    p: float = 0.5
    gamma: float = 1.0
    n: int = 100
    m: int = 10
    T: float = 1.0
    delta: float = 0.01
    collision_tol: float = None
    seed: int = 0
    lambda0: tuple = None
    dt: float = None
    max_level: int = 40
    restart_cap: int = 200_000

    def __post_init__(self):
        object.__setattr__(self, "sector", Sector.parse(self.sector))
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p out of [0,1]: {self.p}")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        lam0 = self.lambda0
        if lam0 is None:
            lam0 = tuple(np.arange(self.d) - 0.5 * (self.d - 1))
        lam0 = tuple(float(x) for x in lam0)
        if len(lam0) != self.d:
            raise ValueError(f"lambda0 has {len(lam0)} entries, expected d={self.d}")
        if self.d > 1 and np.any(np.diff(lam0) <= 0):
            raise ValueError("lambda0 must be strictly increasing")
        object.__setattr__(self, "lambda0", lam0)
        if self.collision_tol is None:
            gap = float(np.mean(np.diff(lam0))) if self.d > 1 else 1.0
            object.__setattr__(self, "collision_tol", 1e-6 * gap)
        if self.dt is not None:
            if self.dt <= 0:
                raise ValueError("dt must be positive")
            ratio = 1.0 / (self.n * self.dt)
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise ValueError("dt must divide the block length 1/n")

    @property
    def beta(self):
        return self.sector.beta

    @property
    def pbeta(self):
        return self.p * self.beta

    @property
    def dt_sub(self):
        return 1.0 / (self.n * self.m)

    @property
    def step(self):
        return self.dt if self.dt is not None else self.dt_sub

    @property
    def steps_per_block(self):
        return int(round(1.0 / (self.n * self.step)))

    @property
    def n_steps(self):
        return int(math.ceil(self.T / self.step - 1e-9))

    def with_(self, **kw):
        return replace(self, **kw)
