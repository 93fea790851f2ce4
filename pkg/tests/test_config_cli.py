import csv
import json
import subprocess
import sys

import pytest

from sqgattr.cli import EXIT_BLOWUP, EXIT_CONFIG, EXIT_OK, EXIT_VIOLATED, main
from sqgattr.config import config_from_dict, load_config
from sqgattr.errors import ConfigurationError
from sqgattr.grid import linf_norm

BASE = """
n = 16
gamma = 1.5
T = 0.5
seed = 3

[spectrum]
band = [1, 4]

[output]
interval = 0.05
"""

FORCED = BASE + """
[forcing]
modes = [[1, 1]]
amplitudes = [0.5]
"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_defaults_and_sections(tmp_path):
    cfg = load_config(write(tmp_path, FORCED))
    assert cfg.n == 16 and cfg.forcing.modes == ((1, 1),)
    assert linf_norm(cfg.forcing_field()) == pytest.approx(0.5)
    assert cfg.initial_field().grid.n == 16
    assert load_config(write(tmp_path, BASE), seed=9, out=tmp_path / "o").seed == 9


@pytest.mark.parametrize(
    "data,key",
    [
        ({"gamma": 2.5}, "gamma"),
        ({"gamma": 1.0}, "gamma"),
        ({"kappa": 0.5}, "kappa"),
        ({"c3": 10}, "c3"),
        ({"n": 15}, "n"),
        ({"bogus": 1}, "bogus"),
        ({"output": {"intervall": 0.1}}, "output.intervall"),
        ({"holder": {"beta": 0.3}}, "holder.beta"),
        ({"forcing": {"modes": [[0, 0]], "amplitudes": [1.0]}}, "forcing.modes"),
        ({"forcing": {"modes": [[1, 0]], "amplitudes": []}}, "forcing.amplitudes"),
        ({"convergence": {"gammas": [1.6]}}, "convergence.gammas"),
    ],
)
def test_invalid_config_names_key(data, key):
    with pytest.raises(ConfigurationError) as info:
        config_from_dict(data)
    assert info.value.key == key
    assert key in str(info.value)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "nope.toml")
    with pytest.raises(ConfigurationError):
        load_config(write(tmp_path, "n = = 3"))


def test_cli_rejects_bad_gamma(tmp_path, capsys):
    path = write(tmp_path, BASE.replace("gamma = 1.5", "gamma = 2.5"))
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "gamma" in capsys.readouterr().err


def test_cli_usage_errors(tmp_path):
    assert main([]) == EXIT_CONFIG
    assert main(["simulate"]) == EXIT_CONFIG
    assert main(["simulate", "--config", write(tmp_path, BASE), "--threads", "0"]) == EXIT_CONFIG


def test_simulate_outputs_are_deterministic(tmp_path):
    path = write(tmp_path, FORCED)
    for name in ("a", "b"):
        assert main(["simulate", "--config", path, "--out", str(tmp_path / name)]) == EXIT_OK
    for fname in ("trajectory.csv", "final.sqgf", "initial.sqgf", "forcing.sqgf"):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()
    a, b = (json.loads((tmp_path / d / "config.json").read_text()) for d in "ab")
    assert a["output"].pop("dir") != b["output"].pop("dir")
    assert a == b
    assert a["seed"] == 3 and a["gamma"] == 1.5


def test_seed_changes_output(tmp_path):
    path = write(tmp_path, BASE)
    main(["simulate", "--config", path, "--out", str(tmp_path / "a")])
    main(["simulate", "--config", path, "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a" / "initial.sqgf").read_bytes() != (tmp_path / "b" / "initial.sqgf").read_bytes()


def test_verify_passes_and_writes_reports(tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "--config", write(tmp_path, FORCED), "--out", str(out)]) == EXIT_OK
    reports = json.loads((out / "reports.json").read_text())
    names = {r["name"] for r in reports}
    assert {"decay_l2", "decay_linf", "energy_inequality"} <= names
    for r in reports:
        assert {"name", "status", "constant", "witness_time", "margin_min"} <= set(r)
        assert r["status"] != "violated"
    radii = json.loads((out / "radii.json").read_text())
    assert radii["R_inf"] == pytest.approx(1.0)


def test_verify_detects_tampered_trajectory(tmp_path):
    path = write(tmp_path, FORCED)
    run = tmp_path / "run"
    assert main(["simulate", "--config", path, "--out", str(run)]) == EXIT_OK
    rows = list(csv.reader(open(run / "trajectory.csv")))
    col = rows[0].index("l2")
    rows[4][col] = repr(float(rows[4][col]) + 10.0)
    with open(run / "trajectory.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    out = tmp_path / "check"
    assert main(["verify", "--trajectory", str(run), "--out", str(out)]) == EXIT_VIOLATED
    rep = json.loads((out / "reports" / "decay_l2.json").read_text())
    assert rep["status"] == "violated"
    assert rep["witness_time"] == pytest.approx(float(rows[4][0]))


def test_verify_missing_trajectory(tmp_path):
    (tmp_path / "empty").mkdir()
    code = main(["verify", "--config", write(tmp_path, BASE), "--trajectory", str(tmp_path / "empty")])
    assert code == EXIT_CONFIG


def test_converge_command(tmp_path):
    text = BASE + """
[initial]
modes = [[2, 0]]
amplitudes = [1.0]

[convergence]
T = 1.0
sample_every = 0.05
"""
    out = tmp_path / "c"
    assert main(["converge", "--config", write(tmp_path, text), "--out", str(out), "--threads", "2"]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["spread_factor"] < 1.05
    assert (out / "convergence.csv").exists()


def test_converge_gate_fails_on_tight_limit(tmp_path):
    text = BASE + """
[convergence]
T = 0.3
sample_every = 0.05
spread_limit = 1.0000001
"""
    assert main(["converge", "--config", write(tmp_path, text), "--out", str(tmp_path / "c")]) == EXIT_VIOLATED


def test_holder_command_unforced_is_monotone(tmp_path):
    out = tmp_path / "h"
    assert main(["holder", "--config", write(tmp_path, BASE), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "reports.json").read_text())[0]
    assert rep["details"]["holder_monotone"]
    header = open(out / "trajectory.csv").readline().strip().split(",")
    assert "psi" in header and "holder" in header


def test_lowerbounds_command(tmp_path):
    text = BASE.replace("n = 16", "n = 32") + """
[lowerbounds]
fields = 3
h = [2, 1]
"""
    out = tmp_path / "lb"
    assert main(["lowerbounds", "--config", write(tmp_path, text), "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "constants.csv")))
    assert len(rows) == 9
    assert all(float(r["value"]) > 0 for r in rows if r["quantity"] == "lower_bound_ratio")


def test_blow_up_exit_code(tmp_path):
    text = BASE.replace("[spectrum]", "[spectrum]\namplitude = 1e200")
    out = tmp_path / "b"
    assert main(["simulate", "--config", write(tmp_path, text), "--out", str(out)]) == EXIT_BLOWUP
    info = json.loads((out / "blowup.json").read_text())
    assert info["t"] == 0.0 and "non-finite" in info["error"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sqgattr", "simulate"], capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
