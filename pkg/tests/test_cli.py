import json
import shutil
import subprocess

import numpy as np
import pytest

from atompol.cli import build_parser, main


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_subcommands_registered():
    names = build_parser()._subparsers._group_actions[0].choices
    assert set(names) == {"field", "leff", "oracle", "average", "synth", "extract", "fitpol",
                          "velocity", "alpha", "run"}


def test_leff_json(capsys):
    code, out, _ = run(["leff"], capsys)
    payload = json.loads(out)
    assert code == 0
    assert payload["L_exact_m"] >= payload["L_approx_m"] > 0


def test_field_csv(tmp_path, capsys):
    code, out, _ = run(["field", "--out", str(tmp_path)], capsys)
    assert code == 0
    lines = (tmp_path / "field.csv").read_text().splitlines()
    assert lines[0].startswith("#")
    assert np.loadtxt(tmp_path / "field.csv", delimiter=",", comments="#", skiprows=2).shape[1] >= 2


def test_average_stdout(capsys):
    code, out, _ = run(["average", "--points", "5"], capsys)
    lines = out.strip().splitlines()
    assert code == 0 and lines[0].startswith("# S_parallel") and len(lines) == 7


def test_velocity(capsys):
    code, out, _ = run(["velocity"], capsys)
    payload = json.loads(out)
    assert code == 0
    assert abs(payload["combined"]["value"] - 1065.7) <= 0.1


def test_alpha(capsys):
    code, out, _ = run(["alpha", "--k", "1.387e-4", "--sigma-k", "1e-7", "--u", "1065.7",
                        "--sigma-u", "5.8"], capsys)
    payload = json.loads(out)
    assert code == 0
    assert payload["alpha_au"]["value"] == pytest.approx(164.19, rel=1e-3)


def test_alpha_failure_is_tagged(capsys):
    code, _, err = run(["alpha", "--k", "-1"], capsys)
    assert code == 1
    assert err.startswith("error: [alpha] ValueError")


def test_missing_config(tmp_path, capsys):
    code, _, err = run(["leff", "--config", str(tmp_path / "nope.json")], capsys)
    assert code == 1 and "[config]" in err


def test_synth_extract_fitpol(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--seed", "3"]) == 0
    manifest = tmp_path / "recordings" / "manifest.json"
    assert manifest.exists()
    assert main(["extract", str(manifest), "--out", str(tmp_path)]) == 0
    assert main(["fitpol", str(tmp_path / "phase_shifts.csv"), "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    fit = json.loads((tmp_path / "polfit.json").read_text())
    assert fit["k"] == pytest.approx(1.387e-4, rel=5e-3)
    assert (tmp_path / "prediction.csv").exists()


def test_fitpol_bad_file(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("V0,phase_rad\n1,2\n")
    code, _, err = run(["fitpol", str(bad)], capsys)
    assert code == 1 and err.startswith("error: [unwrap]")


def test_run(tmp_path, capsys):
    code, out, _ = run(["run", "--out", str(tmp_path), "--noiseless"], capsys)
    assert code == 0 and "a.u." in out
    assert (tmp_path / "alpha.json").exists()


@pytest.mark.skipif(shutil.which("atompol") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["atompol", "alpha", "--k", "-1"], capture_output=True, text=True)
    assert proc.returncode == 1 and "[alpha]" in proc.stderr
