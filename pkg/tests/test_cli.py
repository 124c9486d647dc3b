import json
import subprocess
import sys

import pytest

from multitime import __version__, cli, selftest
from multitime.reports import read_csv

SMALL = {
    "lattice": {"L": 8},
    "T": 1.0,
    "margins": [0.0, 1.0, 2.0],
    "evolve": {"t": 0.5, "samples": 4},
    "multitime": {"target": [0.5, 0.25], "paths": [[[0, 2], [1, 1]], [[1, 1], [0, 2]]],
                  "kappas": [0.0, 0.5], "substeps": 2, "margin": 1.0},
    "consistency": {"n_probes": 1, "margin": 2.0},
}


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def run(tmp_path, cmd, data=SMALL, out="out", extra=()):
    cfg = write_config(tmp_path, data)
    return cli.run_subcommand([cmd, "--config", str(cfg), "--out", str(tmp_path / out), *extra])


@pytest.mark.parametrize("cmd", ["evolve", "green", "multitime", "consistency"])
def test_subcommands_succeed(tmp_path, cmd, capsys):
    assert run(tmp_path, cmd) == 0
    assert "all tolerances met" in capsys.readouterr().out
    payload = json.loads((tmp_path / "out" / f"{cmd}.json").read_text())
    assert payload["version"] == __version__
    assert payload["config"]["lattice"]["L"] == 8
    assert payload["results"]["failures"] == []


@pytest.mark.parametrize("cmd", ["evolve", "green", "multitime"])
def test_outputs_are_deterministic(tmp_path, cmd):
    assert run(tmp_path, cmd, out="a") == 0
    assert run(tmp_path, cmd, out="b") == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_embeds_config(tmp_path):
    assert run(tmp_path, "green") == 0
    path = tmp_path / "out" / "green_G.csv"
    assert path.read_text().splitlines()[0] == f"# multitime {__version__}"
    config, header, rows = read_csv(path)
    assert config["T"] == 1.0
    assert header == ["t", "z", "r", "rbar", "s", "re", "im"]
    assert len(rows) == 9 * 8 * 8


def test_zero_coupling_evolve(tmp_path):
    data = dict(SMALL, coupling={"strength": 0.0})
    assert run(tmp_path, "evolve", data) == 0
    res = json.loads((tmp_path / "out" / "evolve.json").read_text())["results"]
    assert res["norm_drift"] < 1e-12


def test_seed_override(tmp_path):
    assert run(tmp_path, "evolve", out="s1", extra=["--seed", "1"]) == 0
    assert run(tmp_path, "evolve", out="s2", extra=["--seed", "2"]) == 0
    a = (tmp_path / "s1" / "evolve.csv").read_bytes()
    assert a != (tmp_path / "s2" / "evolve.csv").read_bytes()


@pytest.mark.parametrize("bad, field", [
    ({"lattice": {"L": 0}}, "lattice"),
    ({"statistics": {"eps": [1, 1, 2]}}, "statistics"),
    ({"coupling": {"pattern": "ring"}}, "coupling.pattern"),
    ({"unknown": 1}, "unknown"),
    ({"schema": 99}, "schema"),
    ({"seed": -1}, "seed"),
    ({"T": 0}, "T"),
])
def test_config_errors_exit_2(tmp_path, capsys, bad, field):
    assert run(tmp_path, "evolve", bad) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config" and err["field"] == field


def test_invalid_json_and_missing_file(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert cli.run_subcommand(["evolve", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "<file>"
    assert cli.run_subcommand(["evolve", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_runtime_value_error_exit_2(tmp_path, capsys):
    # T beyond a quarter of the lattice is rejected by the Green-function tabulation
    assert run(tmp_path, "green", dict(SMALL, T=3.0)) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "ValueError"


def test_tolerance_failure_exit_1(tmp_path, capsys, monkeypatch):
    monkeypatch.setitem(cli.COMMANDS, "green", lambda cfg, out: ["forced residual 1.0 > 1e-3"])
    assert run(tmp_path, "green") == 1
    assert "FAILED: forced residual" in capsys.readouterr().err


def test_selftest_subcommand(tmp_path, monkeypatch, capsys):
    def quick():
        return selftest.Check("0 stub", True, 0.0, 1.0)

    monkeypatch.setattr(selftest, "ALL", (quick,))
    assert run(tmp_path, "selftest") == 0
    assert "[PASS] 0 stub" in capsys.readouterr().out
    res = json.loads((tmp_path / "out" / "selftest.json").read_text())["results"]
    assert res["passed"] and "seconds" not in res["criteria"][0]

    monkeypatch.setattr(selftest, "ALL", (lambda: selftest.Check("0 stub", False, 2.0, 1.0),))
    assert run(tmp_path, "selftest") == 1


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "multitime", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
    out = subprocess.run([sys.executable, "-m", "multitime", "evolve", "--config",
                          str(write_config(tmp_path, SMALL)), "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
