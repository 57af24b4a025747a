"""Eigenvector frame of a pair driven into a collision: the accumulated clock
phi and the in-plane rotation angle as the pair approaches contact.

    python3 demos/frame_rotation.py
"""
from dysonbeta.config import parse_config
from dysonbeta.experiments import run_experiment

cfg = parse_config("paths = 200\nmax_paths = 1000\n", experiment="collision-frame")
report = run_experiment(cfg)
for line in report.summary_lines():
    print(line)
