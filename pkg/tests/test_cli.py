import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from flks import cli
from flks.config import RunConfig, from_mapping, parse_config
from flks.errors import ConfigError, SchemeFailure

M_STAR = 32 * np.pi


def write_cfg(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


# configuration

def test_defaults():
    cfg = parse_config(None, "evolve-1d")
    assert cfg.cells == 512 and cfg.L == 20.0
    assert cfg.epsilon == [0.4, 0.2, 0.1]
    assert cfg.digest() == RunConfig(experiment="evolve-1d").digest()


@pytest.mark.parametrize("data, fragment", [
    ({"alpha": -1.0}, "alpha must be ≥ 0"),
    ({"epsilon": [0.1, 0.2]}, "epsilon list must be strictly decreasing"),
    ({"cels": 10}, "did you mean 'cells'"),
    ({"cells": "many"}, "cells: cannot read"),
    ({"limiter": "weird"}, "limiter must be one of"),
])
def test_config_errors_name_the_key(data, fragment):
    with pytest.raises(ConfigError, match=fragment):
        from_mapping(data, "evolve-1d")


def test_missing_and_bad_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("cells: [1, 2\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        parse_config(bad)


def test_decay_fit_requires_series():
    with pytest.raises(ConfigError, match="series"):
        from_mapping({}, "decay-fit")


# runs

SHORT_1D = {"limiter": "kinetic", "velocity": "interval", "response": "algebraic", "cells": 128,
            "dt": 0.01, "T_end": 0.5, "alpha": 1.0, "ic": "bumps", "seed": 3, "snapshot_every": 10}


def test_runs_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, "c.yaml", SHORT_1D)
    assert cli.main(["evolve-1d", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["evolve-1d", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("series.csv", "snapshots.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["exit_status"] == 0 and summary["config"]["cells"] == 128
    assert all(c["passed"] for c in summary["invariants"])
    assert (tmp_path / "a" / "run.log").stat().st_size > 0


def test_entropy_track_short(tmp_path):
    cfg = write_cfg(tmp_path, "e.yaml", {"limiter": "constant", "cells": 128, "dt": 0.04, "T_end": 4.0,
                                         "output_every": 5})
    assert cli.main(["entropy-track", "--config", cfg, "--out", str(tmp_path / "e")]) == 0
    data = cli.read_csv(tmp_path / "e" / "series.csv")
    assert np.all(np.diff(data["E"]) <= 1e-12 * data["E"][0])
    np.testing.assert_allclose(data["w2_ratio"], data["w2_cdf"] / data["w2_quantile"], rtol=1e-15)


def test_critical_mass_summary(tmp_path):
    cfg = write_cfg(tmp_path, "m.yaml", {"n_a": 12, "masses": [0.9 * M_STAR, 1.5 * M_STAR]})
    assert cli.main(["critical-mass", "--config", cfg, "--out", str(tmp_path / "m")]) == 0
    res = json.loads((tmp_path / "m" / "summary.json").read_text())["results"]
    assert res["M_star"] == pytest.approx(M_STAR, rel=1e-12)
    assert res["inf_mass"] == pytest.approx(M_STAR, rel=0.03)


def test_config_error_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, "bad.yaml", {"alpha": -2.0})
    assert cli.main(["evolve-1d", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["evolve-1d", "--jobs", "0"]) == 2
    assert cli.main([]) == 2


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    def boom(cfg, out, jobs):
        raise SchemeFailure("diverged")
    monkeypatch.setitem(cli.RUNNERS, "evolve-1d", boom)
    assert cli.run(RunConfig(experiment="evolve-1d"), tmp_path / "f") == 3
    summary = json.loads((tmp_path / "f" / "summary.json").read_text())
    assert summary["status"] == "solver failure" and "diverged" in summary["error"]


def test_invariant_breach_exit_code(tmp_path, monkeypatch):
    def breach(cfg, out, jobs):
        return {}, [cli._check("fake", 1.0, 0.5)]
    monkeypatch.setitem(cli.RUNNERS, "evolve-1d", breach)
    assert cli.run(RunConfig(experiment="evolve-1d"), tmp_path / "g") == 1


@pytest.mark.slow
def test_check_flag_subprocess():
    proc = subprocess.run([sys.executable, "-m", "flks.cli", "--check"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "FAIL" not in proc.stdout and proc.stdout.count("PASS") >= 8


def test_csv_round_trip(tmp_path):
    p = tmp_path / "x.csv"
    vals = [(0.1, 1 / 3), (2.0, np.pi)]
    cli.write_csv(p, ["a", "b"], vals)
    back = cli.read_csv(p)
    assert back["b"][0] == 1 / 3 and back["b"][1] == np.pi
