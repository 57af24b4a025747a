import json
import os

import pytest

from dysonbeta.cli import main
from dysonbeta.config import ConfigError, format_config, parse_config
from dysonbeta.experiments import REGISTRY, RegistryError, run_experiment

SMALL = "paths = 40\ndt = 1e-3\nT = 0.2\nsectors = hermitian\n"


def test_minimal_defaults():
    cfg = parse_config("d = 3\np = 0.5\nsector = hermitian\n")
    p = cfg.params
    assert (p.gamma, p.T, p.n, p.m) == (1.0, 1.0, 100, 10)
    assert p.d == 3 and p.p == 0.5


def test_validation_errors():
    with pytest.raises(ConfigError, match=r"p out of \[0,1\]"):
        parse_config("p = 1.5\n")
    with pytest.raises(ConfigError, match="line 3: duplicate key 'd'"):
        parse_config("d = 3\n# c\nd = 4\n")
    with pytest.raises(ConfigError, match="line 2: unknown key 'colour'"):
        parse_config("d = 3\ncolour = red\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("not a pair\n")
    with pytest.raises(ConfigError, match="^n:"):
        parse_config("n = 1.5\n")
    with pytest.raises(ConfigError, match="threads"):
        parse_config("threads = 0\n")


def test_grammar_roundtrip():
    cfg = parse_config("lambda0 = -1, 0, 1.5   # start\nn_values = 100, 400\n", experiment="frame-convergence")
    assert cfg.params.lambda0 == (-1.0, 0.0, 1.5) and cfg.params.d == 3
    assert cfg.extra["n_values"] == (100, 400)
    text = format_config(cfg.explicit)
    assert parse_config(text, experiment="frame-convergence").explicit == cfg.explicit


def test_registry_error_lists_names():
    cfg = parse_config("")
    cfg.experiment = "nope"
    with pytest.raises(RegistryError) as ei:
        run_experiment(cfg)
    for name in REGISTRY:
        assert name in str(ei.value)


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["--list"]) == 0
    assert main(["nope"]) == 2
    assert "valid names" in capsys.readouterr().err
    bad = tmp_path / "bad.cfg"
    bad.write_text("p = 2\n")
    assert main(["no-collision", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["no-collision", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_no_collision_hermitian_report(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL)
    out = tmp_path / "run"
    assert main(["no-collision", "--config", str(cfg), "--seed", "5", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["pass"] and rep["seed"] == 5
    assert rep["checks"][0]["statistic"] == 0
    resolved = parse_config((out / "config.resolved").read_text())
    assert resolved.seed == 5 and resolved.experiment == "no-collision"


def test_failing_check_still_writes_report(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("paths = 20\nT = 0.5\ndt = 1e-3\nthreshold = 1.0\n")
    out = tmp_path / "run"
    assert main(["collision-times", "--config", str(cfg), "--out", str(out)]) == 1
    assert not json.loads((out / "report.json").read_text())["pass"]


def _csv_bytes(d):
    return {f: (d / f).read_bytes() for f in sorted(os.listdir(d)) if f.endswith(".csv")}


def test_rerun_is_byte_identical(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL)
    for k in ("a", "b"):
        main(["no-collision", "--config", str(cfg), "--seed", "11", "--out", str(tmp_path / k)])
    a, b = _csv_bytes(tmp_path / "a"), _csv_bytes(tmp_path / "b")
    assert a and a == b


def test_seed_env_override(tmp_path, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL)
    monkeypatch.setenv("DYSONBETA_SEED", "99")
    main(["no-collision", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "e")])
    assert json.loads((tmp_path / "e" / "report.json").read_text())["seed"] == 99


def test_thread_count_does_not_change_outputs(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("paths = 2500\ndt = 1e-3\nT = 0.1\nsectors = hermitian\n")
    for k, t in (("a", "1"), ("b", "2")):
        main(["no-collision", "--config", str(cfg), "--threads", t, "--out", str(tmp_path / k)])
    assert _csv_bytes(tmp_path / "a") == _csv_bytes(tmp_path / "b")
