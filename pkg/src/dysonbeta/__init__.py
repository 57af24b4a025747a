"""Simulation of coin-switched matrix diffusions, beta-Dyson particle systems
and their eigenvector frames, with Monte Carlo checks of their limit laws."""

__version__ = "0.1.0"
