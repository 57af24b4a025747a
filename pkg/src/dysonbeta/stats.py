"""Distribution distances, drift/diffusion estimators and report assembly."""
from dataclasses import dataclass, field
import math
import time

import numpy as np
from scipy import integrate, stats


@dataclass(frozen=True)
class EmpiricalSample:
    values: np.ndarray
    weights: np.ndarray = None
    provenance: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("sample contains non-finite values")
        object.__setattr__(self, "values", v)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.shape != v.shape or np.any(w < 0):
                raise ValueError("weights must be nonnegative and match values")
            object.__setattr__(self, "weights", w)


def _as_sample(x):
    return x if isinstance(x, EmpiricalSample) else EmpiricalSample(np.asarray(x))


def _ecdf(sample, at):
    v, w = sample.values, sample.weights
    order = np.argsort(v, kind="stable")
    v = v[order]
    w = np.ones_like(v) if w is None else w[order]
    cw = np.concatenate([[0.0], np.cumsum(w)]) / np.sum(w)
    return cw[np.searchsorted(v, at, side="right")]


def distribution_distance(kind, a, b):
    """KS (sup |F_a - F_b|) or Wasserstein-1 (integral of |F_a - F_b|).

    ``b`` may be a sample or a callable CDF.
    """
    kind = kind.upper() if kind.upper() == "KS" else kind.capitalize()
    a = _as_sample(a)
    if a.values.size == 0:
        raise ValueError("empty sample")
    if callable(b):
        x = np.sort(a.values)
        fa_hi = _ecdf(a, x)
        fa_lo = _ecdf(a, np.nextafter(x, -np.inf))
        fb = np.asarray(b(x), dtype=float)
        if kind == "KS":
            return float(max(np.max(np.abs(fa_hi - fb)), np.max(np.abs(fa_lo - fb))))
        if kind == "Wasserstein1":
            grid = np.linspace(x[0], x[-1], 20001)
            return float(integrate.trapezoid(np.abs(_ecdf(a, grid) - b(grid)), grid))
        raise ValueError(f"unknown distance {kind!r}")
    b = _as_sample(b)
    if b.values.size == 0:
        raise ValueError("empty sample")
    x = np.union1d(a.values, b.values)
    fa, fb = _ecdf(a, x), _ecdf(b, x)
    if kind == "KS":
        return float(np.max(np.abs(fa - fb)))
    if kind == "Wasserstein1":
        return float(np.sum(np.abs(fa - fb)[:-1] * np.diff(x)))
    raise ValueError(f"unknown distance {kind!r}")


def ks_critical(n_a, n_b=None, alpha=0.05):
    """Asymptotic two-sample (or one-sample when n_b is None) KS critical value."""
    c = math.sqrt(-0.5 * math.log(alpha / 2))
    n = n_a if n_b is None else n_a * n_b / (n_a + n_b)
    return c / math.sqrt(n)


def censored_ks(times, cdf, t_max, n_total):
    """sup over t <= t_max of |F_emp(t) - F(t)| when only hits before t_max are observed."""
    hits = np.sort(np.asarray(times, dtype=float))
    hits = hits[hits <= t_max]
    if hits.size == 0:
        return float(cdf(np.array([t_max]))[0])
    f = np.asarray(cdf(hits), dtype=float)
    hi = np.arange(1, hits.size + 1) / n_total
    lo = np.arange(0, hits.size) / n_total
    tail = abs(hits.size / n_total - float(cdf(np.array([t_max]))[0]))
    return float(max(np.max(np.abs(hi - f)), np.max(np.abs(lo - f)), tail))


@dataclass(frozen=True)
class DriftDiffusionEstimate:
    drift: float
    drift_stderr: float
    diffusion_rate: float
    diffusion_stderr: float
    window: tuple
    n_paths: int


def empirical_drift_diffusion(paths, t0, h, times=None, min_paths=1000):
    """Drift and quadratic-variation rate of a scalar path bundle over [t0, t0+h].

    ``paths`` is (n_paths, n_times); ``times`` defaults to two columns at t0
    and t0+h.  The diffusion rate is the path variance of the increment
    divided by h, which removes the drift^2 h bias of the raw second moment.
    """
    paths = np.asarray(paths, dtype=float)
    if paths.ndim != 2 or paths.shape[0] < min_paths:
        raise ValueError(f"need at least {min_paths} paths, got {paths.shape[0] if paths.ndim else 0}")
    if times is None:
        i0, i1 = 0, paths.shape[1] - 1
    else:
        times = np.asarray(times, dtype=float)
        i0 = int(np.argmin(np.abs(times - t0)))
        i1 = int(np.argmin(np.abs(times - (t0 + h))))
    inc = paths[:, i1] - paths[:, i0]
    n = inc.size
    mean = float(np.mean(inc))
    var = float(np.var(inc, ddof=1))
    drift = mean / h
    drift_se = math.sqrt(var / n) / h
    centered = (inc - mean) ** 2
    rate = float(np.mean(centered)) * n / (n - 1) / h
    rate_se = float(np.std(centered, ddof=1)) / math.sqrt(n) / h
    return DriftDiffusionEstimate(drift, drift_se, rate, rate_se, (t0, t0 + h), n)


def rho_alpha_exponent(d, pbeta):
    """alpha = 2 - a/(4d) with a = 2d(d-1)(2 + pbeta d)."""
    a = 2 * d * (d - 1) * (2 + pbeta * d)
    return 2.0 - a / (4.0 * d)


def rho_alpha_check(s_paths, times, pbeta, gamma, d, floor, check_times=None, n_sigma=3.0):
    """Test that E[rho_{t^tau}^alpha exp(alpha gamma (t^tau))] stays at its initial value.

    ``s_paths`` holds S on the grid ``times``; tau is the first grid time with
    S <= floor and each path is frozen from then on.
    Returns a dict with the tested means, stderrs and the verdict.
    """
    s = np.asarray(s_paths, dtype=float)
    times = np.asarray(times, dtype=float)
    alpha = rho_alpha_exponent(d, pbeta)
    below = s <= floor
    if np.all(below[:, 0]):
        raise ValueError("all paths are stopped at time 0")
    hit = np.where(below.any(axis=1), below.argmax(axis=1), s.shape[1] - 1)
    if check_times is None:
        check_times = np.linspace(times[-1] / 5, times[-1], 5)
    x0 = s[:, 0] ** (alpha / 2)
    rows = []
    ok = True
    for t in check_times:
        j = int(np.argmin(np.abs(times - t)))
        jj = np.minimum(hit, j)
        st = s[np.arange(s.shape[0]), jj]
        tt = times[jj]
        val = st ** (alpha / 2) * np.exp(alpha * gamma * tt)
        diff = val - x0
        mean = float(np.mean(diff))
        se = float(np.std(diff, ddof=1) / math.sqrt(diff.size))
        passed = abs(mean) <= n_sigma * se if se > 0 else mean == 0
        ok &= passed
        rows.append({"t": float(times[j]), "mean": float(np.mean(val)), "shift": mean,
                     "stderr": se, "pass": bool(passed)})
    return {"alpha": alpha, "initial": float(np.mean(x0)), "points": rows,
            "stopped_fraction": float(np.mean(below.any(axis=1))), "pass": bool(ok)}


def trend_decreasing(values):
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))


@dataclass
class Check:
    check_id: str
    claim: str
    statistic: object
    threshold: object
    passed: bool
    seed: int
    runtime_s: float = 0.0
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {"check_id": self.check_id, "claim": self.claim, "statistic": _jsonable(self.statistic),
                "threshold": _jsonable(self.threshold), "pass": bool(self.passed), "seed": int(self.seed),
                "runtime_s": float(self.runtime_s), "details": _jsonable(self.details)}


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False


@dataclass
class ExperimentReport:
    experiment: str
    checks: list
    seed: int
    config: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def as_dict(self):
        return {"experiment": self.experiment, "pass": self.passed, "seed": int(self.seed),
                "config": _jsonable(self.config), "checks": [c.as_dict() for c in self.checks]}

    def summary_lines(self):
        out = []
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            out.append(f"[{flag}] {c.check_id}: statistic={_short(c.statistic)} threshold={_short(c.threshold)}")
        return out


def assemble_report(checks, experiment="", seed=0, config=None):
    return ExperimentReport(experiment, list(checks), seed, dict(config or {}))


def _short(x):
    if isinstance(x, float):
        return f"{x:.4g}"
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(_short(v) for v in x) + "]"
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def two_sample_ks(a, b):
    """KS statistic via scipy for plain arrays."""
    return float(stats.ks_2samp(np.ravel(a), np.ravel(b)).statistic)
