import json
import subprocess
import sys
import textwrap

import pytest

from conleyflow.cli import ConfigError, load_config, main


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


SMALL_SWEEP = """
    [system]
    name = spiral
    [parameters]
    lambdas = 0.0, 0.25
    [grid]
    lo = -6
    hi = 6
    divisions = 32
    [analysis]
    thresholds = 3
    signature_samples = 8
    [output]
    timestamp = no
"""


def test_selftest_is_stable(capsys):
    assert main(["selftest"]) == 0
    first = capsys.readouterr().out
    assert main(["selftest"]) == 0
    assert capsys.readouterr().out == first
    assert first.splitlines()[-1].endswith("pass")


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "conleyflow", "selftest"], capture_output=True, text=True)
    assert r.returncode == 0 and "overall" in r.stdout


@pytest.mark.parametrize(
    "body,message",
    [
        ("[system]\nname = spiral\n[parameters]\nlambda = 0.5\n[grid]\nlo = -1, 2\nhi = 1, 1\n",
         "lo >= hi on axis 1 (x2)"),
        ("[system]\nname = spiral\n[parameters]\nlambda = 5\n[grid]\nlo = -1\nhi = 1\n", "outside the range"),
        ("[system]\nname = nope.txt\n[parameters]\nlambda = 0.5\n", "cannot load"),
        ("[system]\nname = spiral\n[parameters]\nlambda = 0.5\nlambdas = 0.1, 0.2\n", "exactly one of"),
        ("[system]\nname = spiral\n[parameters]\nlambda = 0.5\n[grid]\nlo = -1\nhi = 1\nbox = cube\n",
         "use explicit, ball or lorenz"),
        ("[system]\nname = spiral\n[parameters]\nlambda = 0.5\n[grid]\nlo = -1\nhi = 1\nbox = ball\nradius = -2\n",
         "grid.radius"),
        ("[system]\nname = spiral\n[parameters]\nlambda = 0.5\n[grid]\nlo = -1\nhi = 1\n[map]\ntau = 0\n",
         "analysis:"),
        ("[system]\nname = spiral\n[parameters]\nlambda = 0.5\n[grid]\nlo = -1\nhi = 1\n[analysis]\nthresholds = 5\n",
         "circumradius"),
        ("[system\nname = spiral\n", "malformed"),
    ],
)
def test_config_errors_exit_2(tmp_path, capsys, body, message):
    p = write(tmp_path, body)
    assert main(["analyze", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert err.startswith("config error:") and message in err


def test_missing_config_and_bad_threads(capsys):
    assert main(["sweep"]) == 2
    assert main(["sweep", "--config", "x.ini", "--threads", "0"]) == 2
    assert main(["sweep", "--config", "/nonexistent/x.ini"]) == 2
    assert "cannot read config" in capsys.readouterr().err


def test_sweep_needs_two_values(tmp_path):
    p = write(tmp_path, "[system]\nname = spiral\n[parameters]\nlambda = 0.5\n[grid]\nlo = -1\nhi = 1\n")
    with pytest.raises(ConfigError, match="at least two"):
        load_config(p)


def test_text_system_relative_to_config(tmp_path):
    (tmp_path / "flow.txt").write_text("-x1\n-x2\n")
    p = write(tmp_path, "[system]\nname = flow.txt\n[parameters]\nlambda = 0\n[grid]\nlo = -1\nhi = 1\ndivisions = 8\n")
    cfg = load_config(p, single=True)
    assert cfg.flow.dim == 2 and cfg.grid.divisions == (8, 8)


def test_lorenz_box_requires_lorenz(tmp_path):
    p = write(tmp_path, "[system]\nname = spiral\n[parameters]\nlambda = 0.5\n[grid]\nbox = lorenz\n")
    with pytest.raises(ConfigError, match="lorenz system"):
        load_config(p, single=True)


def test_analyze_at_zero(tmp_path):
    p = write(tmp_path, """
        [system]
        name = spiral
        [parameters]
        lambda = 0
        [grid]
        lo = -3
        hi = 3
        divisions = 64
    """)
    out = tmp_path / "deep" / "out"
    assert main(["analyze", "--config", str(p), "--out", str(out), "--quiet"]) == 0
    doc = json.loads((out / "verdict.json").read_text())
    assert doc["command"] == "analyze"
    assert doc["result"]["global_attractor"]["trapping"] is True
    assert doc["result"]["continuation"]["broken"] is False
    assert doc["result"]["C"]["cells"] == 0
    assert (out / "sweep.csv").read_text().startswith("lambda,k_cells")
    assert (out / "cells.svg").exists()


def test_analyze_ring(tmp_path):
    p = write(tmp_path, """
        [system]
        name = spiral
        [parameters]
        lambda = 0.5
        [grid]
        lo = -6
        hi = 6
        divisions = 128
        [analysis]
        ladder = 2, 16, 128
        ladder_scaling = inverse_lambda
        signature_samples = 16
        [output]
        formats = json
    """)
    out = tmp_path / "o"
    assert main(["analyze", "--config", str(p), "--out", str(out), "--quiet"]) == 0
    res = json.loads((out / "verdict.json").read_text())["result"]
    assert res["C"]["cells"] > 0
    assert abs(res["C"]["diameter"] - 4.0) < 0.2
    assert res["signature"]["separates"] is True
    assert not (out / "sweep.csv").exists()


def test_ball_region_sweep(tmp_path):
    p = write(tmp_path, """
        [system]
        name = spiral
        [parameters]
        lambdas = 0.5, 1
        [grid]
        lo = -15
        hi = 15
        divisions = 64
        box = ball
        [analysis]
        signature_samples = 8
        [output]
        formats = json
    """)
    out = tmp_path / "o"
    assert main(["sweep", "--config", str(p), "--out", str(out), "--quiet", "--no-svg"]) == 0
    doc = json.loads((out / "verdict.json").read_text())
    assert doc["config"]["box"] == "ball"
    assert doc["result"]["uniform_dissipative"]["value"] is True


def test_sweep_outputs(tmp_path):
    p = write(tmp_path, SMALL_SWEEP)
    out = tmp_path / "o"
    assert main(["sweep", "--config", str(p), "--out", str(out), "--quiet"]) == 0
    names = sorted(x.name for x in out.iterdir())
    assert "verdict.json" in names and "sweep.csv" in names and "diameter.svg" in names
    assert "generated" not in (out / "diameter.svg").read_text()
    rows = (out / "sweep.csv").read_text().splitlines()
    assert len(rows) == 3
