"""Experiment configuration: a small ``key = value`` text format.

Grammar, one entry per line::

    # comment (also after a value)
    key = value

Keys are case sensitive and may appear once.  Values are integers, floats,
words, or comma-separated lists of these.  Recognised keys are the
simulation parameters (d, sector, p, gamma, n, m, T, delta, collision_tol,
lambda0, dt, max_level, restart_cap), the run settings (experiment, paths,
seed, threads, out) and the per-experiment settings listed in
``EXPERIMENT_KEYS``.
"""
from dataclasses import dataclass, field, fields
import re

from .params import SimParams

PARAM_KEYS = ("d", "sector", "p", "gamma", "n", "m", "T", "delta", "collision_tol", "lambda0", "dt",
              "max_level", "restart_cap")
RUN_KEYS = ("experiment", "paths", "seed", "threads", "out")

EXPERIMENT_KEYS = {
    "stationary-law": ("paths_d2", "reference_samples", "gate_samples"),
    "coupling-convergence": ("n_values", "record_every"),
    "delta-scheme": ("deltas", "record_every"),
    "no-collision": ("sectors",),
    "collision-times": ("threshold",),
    "s-drift": ("h", "rho_paths", "rho_d", "rho_lambda0", "rho_dt", "rho_horizon", "rho_points", "floor",
                "rho_tol", "rho_record_every"),
    "frame-convergence": ("n_values",),
    "collision-frame": ("handoff_tol", "cauchy_etas", "angle_etas", "dphi", "max_paths"),
    "invariance": ("haar_index",),
    "bessel-law": ("t_max", "kappa"),
}

_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")


class ConfigError(ValueError):
    """Malformed or invalid configuration text."""


def _scalar(text):
    t = text.strip()
    if re.fullmatch(r"[+-]?\d+", t):
        return int(t)
    try:
        return float(t)
    except ValueError:
        return t


def parse_value(text):
    if "," in text:
        return tuple(_scalar(v) for v in text.split(",") if v.strip())
    return _scalar(text)


@dataclass
class ExperimentConfig:
    """A parsed configuration.

    ``params`` carries the simulation defaults (gamma=1, T=1, n=100, m=10)
    for anything not set; ``explicit`` keeps exactly what the text set, so an
    experiment can layer its own defaults underneath.
    """
    experiment: str = None
    params: SimParams = None
    paths: int = None
    seed: int = None
    threads: int = 1
    out: str = None
    explicit: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _tokenize(text):
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        m = _LINE.match(line)
        if m is None:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = m.group(1), m.group(2)
        if value == "":
            raise ConfigError(f"line {lineno}: missing value for {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {seen[key][0]})")
        seen[key] = (lineno, parse_value(value))
    return seen


def allowed_keys(experiment=None):
    keys = set(PARAM_KEYS) | set(RUN_KEYS)
    if experiment is None:
        for extra in EXPERIMENT_KEYS.values():
            keys |= set(extra)
    else:
        keys |= set(EXPERIMENT_KEYS.get(experiment, ()))
    return keys


def build_params(values):
    """SimParams from a dict of parameter keys, naming the field on failure."""
    kw = {}
    for k in PARAM_KEYS:
        if k not in values:
            continue
        v = values[k]
        if k == "lambda0":
            v = tuple(float(x) for x in (v if isinstance(v, tuple) else (v,)))
        elif k in ("d", "n", "m", "max_level", "restart_cap"):
            if not isinstance(v, int):
                raise ConfigError(f"{k}: expected an integer, got {v!r}")
        elif k == "sector":
            v = str(v)
        elif v is not None:
            if isinstance(v, (tuple, str)):
                raise ConfigError(f"{k}: expected a number, got {v!r}")
            v = float(v)
        kw[k] = v
    if "d" not in kw:
        lam0 = kw.get("lambda0")
        kw["d"] = len(lam0) if lam0 else 3
    try:
        return SimParams(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text, experiment=None):
    """Parse configuration text into an ExperimentConfig.

    Unknown keys are rejected with their line number.  The experiment name
    may come from the text or from the ``experiment`` argument.
    """
    entries = _tokenize(text)
    name = experiment
    if "experiment" in entries:
        name = str(entries["experiment"][1])
        if experiment is not None and name != experiment:
            raise ConfigError(f"line {entries['experiment'][0]}: experiment {name!r} conflicts with {experiment!r}")
    allowed = allowed_keys(name)
    for key, (lineno, _) in entries.items():
        if key not in allowed:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    values = {k: v for k, (_, v) in entries.items()}
    params = build_params(values)
    cfg = ExperimentConfig(experiment=name, params=params, explicit=values)
    for k in ("paths", "seed", "threads"):
        if k in values:
            if not isinstance(values[k], int):
                raise ConfigError(f"{k}: expected an integer, got {values[k]!r}")
            setattr(cfg, k, values[k])
    if cfg.threads is None or cfg.threads < 1:
        raise ConfigError("threads: must be >= 1")
    if "out" in values:
        cfg.out = str(values["out"])
    cfg.extra = {k: v for k, v in values.items() if k not in PARAM_KEYS and k not in RUN_KEYS}
    return cfg


def format_value(v):
    if isinstance(v, tuple):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


def format_config(values):
    """Render a flat dict back into the config grammar (sorted keys)."""
    return "".join(f"{k} = {format_value(v)}\n" for k, v in sorted(values.items()) if v is not None)


def params_dict(params):
    out = {}
    for f in fields(params):
        out[f.name] = getattr(params, f.name)
    return out
