"""Acceptance criteria 1-12 at their pinned sizes and tolerances.

Each test runs the named experiment with its default configuration and prints
one ``PASS``/``FAIL criterion N`` line.  The thresholds are restated here so
a change to an experiment's defaults cannot silently loosen them.

Run directly (``python3 tests/test_acceptance.py``) to get the twelve lines
without pytest, or through pytest where the lines are printed uncaptured.
Full runtime is about 10 minutes on one core.
"""
import os
import sys
import tempfile

import numpy as np
import pytest

from dysonbeta.config import parse_config
from dysonbeta.experiments import run_experiment

_CACHE = {}
_OUT = tempfile.mkdtemp(prefix="dysonbeta-acceptance-")


def run(name, text=""):
    key = (name, text)
    if key not in _CACHE:
        cfg = parse_config(text, experiment=name)
        out = os.path.join(_OUT, f"{name}-{len(_CACHE)}")
        _CACHE[key] = (run_experiment(cfg, out=out), out)
    return _CACHE[key][0]


def checks(report):
    return {c.check_id: c for c in report.checks}


def report_line(n, ok, text, capsys=None):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}"
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)
    return ok


def _decreasing(v):
    return bool(np.all(np.diff(np.asarray(v, dtype=float)) < 0))


def criterion_1(capsys=None):
    c = checks(run("stationary-law"))
    gate, d3, d2 = c["tridiagonal-gate"].statistic, c["stationary-d3"].statistic, c["stationary-d2"].statistic
    ok = c["tridiagonal-gate"].passed and d3 < 0.05 and d2 < 0.03
    return report_line(1, ok, f"stationary law d=3 KS={d3:.4f} (<0.05), d=2 KS={d2:.4f} (<0.03), "
                              f"oracle gate KS={gate:.4f}", capsys)


def criterion_2(capsys=None):
    c = checks(run("coupling-convergence"))
    med = c["median-error-decreasing"].statistic
    ok = _decreasing(med) and med[-1] < 0.5 * med[0]
    return report_line(2, ok, f"coupling median sup-errors {np.round(med, 4).tolist()}, "
                              f"ratio {med[-1] / med[0]:.3f} (<0.5)", capsys)


def criterion_3(capsys=None):
    c = checks(run("delta-scheme"))
    err = c["delta-error-decreasing"].statistic
    bound = c["delta-bound"].statistic
    ok = _decreasing(err) and bound <= 1.0
    return report_line(3, ok, f"delta-scheme errors {np.round(err, 4).tolist()}, "
                              f"worst error/bound {bound:.3f} (<=1)", capsys)


def criterion_4(capsys=None):
    c = checks(run("no-collision"))
    sym, her = c["no-collision-symmetric"].statistic, c["no-collision-hermitian"].statistic
    ok = sym == 0 and her == 0
    return report_line(4, ok, f"paths with a gap below 1e-6 at p=1: beta=1 {sym}/1000, beta=2 {her}/1000 "
                              "(both must be 0)", capsys)


def criterion_5(capsys=None):
    c = checks(run("collision-times"))["collisions-occur"]
    ok = c.statistic > 0.8
    return report_line(5, ok, f"collision fraction at pbeta=0.2 {c.statistic:.3f} (>0.8), "
                              f"oracle {c.details['oracle_probability']:.3f}", capsys)


def criterion_6(capsys=None):
    c = checks(run("bessel-law"))["first-passage-law"]
    ks_p, ks_r = c.details["ks_printed"], c.details["ks_rescaled"]
    ok = min(ks_p, ks_r) < 0.05 and bool(c.details["matches"])
    return report_line(6, ok, f"gap hitting-time KS printed={ks_p:.4f}, rescaled={ks_r:.4f} (<0.05); "
                              f"matches {', '.join(c.details['matches']) or 'neither'}", capsys)


def criterion_7(capsys=None):
    c = checks(run("s-drift"))
    dr, df = c["s-drift"], c["s-diffusion"]
    e1, e2 = dr.details["relative_error"], df.details["relative_error"]
    ok = e1 < 0.05 and e2 < 0.10
    return report_line(7, ok, f"S drift {dr.statistic:.2f} rel.err {e1:.4f} (<0.05), "
                              f"QV rate {df.statistic:.2f} rel.err {e2:.4f} (<0.10)", capsys)


def criterion_8(capsys=None):
    c = checks(run("s-drift"))["rho-alpha"]
    pts = c.details["points"]
    z = [abs(p["shift"]) / p["stderr"] for p in pts]
    ok = len(pts) == 5 and max(z) <= 3.0
    return report_line(8, ok, f"stopped rho^alpha shifts in stderr units {np.round(z, 2).tolist()} (<=3)", capsys)


def criterion_9(capsys=None):
    c = checks(run("frame-convergence"))
    res = c["frame-group-residual"].statistic
    ks = c["frame-convergence"].statistic
    ok = res <= 1e-8 and _decreasing(ks)
    return report_line(9, ok, f"frame residual {res:.2e} (<=1e-8), overlap KS over n=100,400 "
                              f"{np.round(ks, 4).tolist()} (decreasing)", capsys)


def criterion_10(capsys=None):
    c = checks(run("collision-frame"))
    cau, ang, clk = c["cauchy-shrinks"], c["angle-uniform"], c["clock-diverges"]
    ok = cau.passed and ang.statistic < 0.05 and clk.statistic >= 0.95 and cau.details["paths"] >= 1000
    return report_line(10, ok, f"Cauchy increments shrink in {cau.statistic:.3f} of paths, angle KS "
                               f"{ang.statistic:.4f} (<0.05), clock monotone in {clk.statistic:.3f} (>=0.95)",
                       capsys)


def criterion_11(capsys=None):
    c = checks(run("invariance"))["invariance"]
    ok = c.statistic < 0.05
    return report_line(11, ok, f"invariance KS {c.statistic:.4f} (<0.05)", capsys)


def criterion_12(capsys=None):
    text = "paths = 40\nT = 1\ndt = 1e-3\n"
    outs = []
    for k in range(2):
        d = os.path.join(_OUT, f"determinism-{k}")
        run_experiment(parse_config(text, experiment="collision-times"), out=d)
        outs.append({f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d)) if f.endswith(".csv")})
    ok = bool(outs[0]) and outs[0] == outs[1]
    return report_line(12, ok, f"rerun with identical seed gives byte-identical CSV ({len(outs[0])} files)", capsys)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12]


@pytest.mark.parametrize("n", range(1, 13), ids=[f"criterion_{n}" for n in range(1, 13)])
def test_acceptance(n, capsys):
    assert CRITERIA[n - 1](capsys)


if __name__ == "__main__":
    results = [f() for f in CRITERIA]
    sys.exit(0 if all(results) else 1)
