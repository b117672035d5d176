import csv
import json

import jsonschema
import pytest

from cuspbilliard import harness as H
from cuspbilliard.cli import main
from cuspbilliard.errors import ConfigError


def cfg(tmp_path, **kw):
    return {"out_dir": str(tmp_path), **kw}


def test_config_error_carries_pointer(tmp_path):
    with pytest.raises(ConfigError) as e:
        H.load_config(cfg(tmp_path, experiment="tails", m=-3))
    assert e.value.pointer == "/m"
    with pytest.raises(ConfigError) as e:
        H.load_config(cfg(tmp_path, experiment="tails", n_grid=[1000, 100]))
    assert e.value.pointer == "/n_grid"
    with pytest.raises(ConfigError) as e:
        H.load_config(cfg(tmp_path, experiment="orbit", table={"beta": 1.5}))
    assert e.value.pointer.startswith("/table")
    with pytest.raises(ConfigError):
        H.load_config(cfg(tmp_path, experiment="no-such-experiment"))


def test_config_defaults_and_scale(tmp_path):
    c = H.load_config(cfg(tmp_path, experiment="tails", scale=0.01))
    assert c.m == 10**7 and c.count("m") == 10**5
    assert c.n_grid[0] == 100
    assert c.table.beta == 3


def test_config_from_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg(tmp_path, experiment="orbit", steps=10, seed=4)))
    c = H.load_config(str(p))
    assert c.seed == 4 and c.opt("steps") == 10


def test_validate_geometry_report(tmp_path):
    b = H.run_experiment(cfg(tmp_path, experiment="validate-geometry"))
    assert b.ok
    assert b.summary["criteria"] == []
    assert b.summary["estimates"]["mu_M"] == pytest.approx(0.24266040996168475)
    for k in ("samples", "summary", "plotdata"):
        assert b.files[k].exists()
    jsonschema.validate(json.loads(b.files["summary"].read_text()), H._schema("summary.schema.json"))


def test_orbit_trace(tmp_path):
    b = H.run_experiment(cfg(tmp_path, experiment="orbit", steps=50, seed=3))
    assert b.ok
    rows = list(csv.reader(open(b.files["samples"])))
    assert rows[0] == ["step", "component", "r", "phi", "tau", "flags"]
    assert len(rows) == 52


def test_insufficient_data_is_an_error_not_a_crash(tmp_path):
    b = H.run_experiment(cfg(tmp_path, experiment="tails", m=10, kac_m=10))
    assert not b.ok
    assert any("InsufficientData" in e for e in b.summary["errors"])
    assert {c["status"] for c in b.summary["criteria"]} == {"error"}


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["validate-geometry", "--out", out]) == 0
    assert main(["tails", "--out", out, "--config", json.dumps({"experiment": "tails", "m": 10, "kac_m": 10})]) == 1
    assert main(["tails", "--out", out, "--config", json.dumps({"experiment": "tails", "m": 0})]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_orbit_trace_out(tmp_path):
    dest = tmp_path / "trace.csv"
    rc = main(["orbit", "--out", str(tmp_path), "--steps", "20", "--table",
               json.dumps({"beta": 3, "s1": 1, "theta0": 0.5235987755982988}), "--trace-out", str(dest)])
    assert rc == 0
    assert len(list(csv.reader(open(dest)))) == 22


def test_samples_identical_across_workers(tmp_path):
    paths = []
    for w in (1, 2):
        d = tmp_path / f"w{w}"
        b = H.run_experiment({"experiment": "tails", "out_dir": str(d), "m": 40000, "kac_m": 40000,
                              "workers": w, "n_grid": [100, 1000]})
        paths.append(b.files["samples"])
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_selftest_stable_smoke(tmp_path):
    b = H.run_experiment(cfg(tmp_path, experiment="selftest-stable", draws=20000))
    c = b.criterion("C7")
    assert c is not None and c["status"] in ("pass", "fail")
    assert c["parts"]
