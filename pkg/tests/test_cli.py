import csv
import json
import subprocess
import sys

import pytest

from hkflow.cli import main
from hkflow.errors import ConfigError
from hkflow.harness import RunConfig, sha256_file


def _run(*args):
    return main([str(a) for a in args])


def test_run_F1_zero_beta(tmp_path, capsys):
    assert _run("run", "--fixture", "F1", "--N", 16, "--t-end", 0.5, "--dt", 1e-3, "--stride", 100,
                "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "diagnostics.json").read_text())
    assert all(r["min_eig_beta"] == 0 and r["lam0_0"] == 0 for r in doc["records"])
    assert "status 0" in capsys.readouterr().out


def test_run_F3_both(tmp_path):
    assert _run("run", "--fixture", "F3", "--scheme", "both", "--t-end", 0.01, "--dt", 1e-4,
                "--stride", 20, "--out", tmp_path) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["summary"]["cross_deviation_max"] <= 1e-5
    for name, digest in man["files"].items():
        assert sha256_file(tmp_path / name) == digest
    assert "tangent_lift" in json.loads((tmp_path / "diagnostics.json").read_text())


def test_run_step_too_large(tmp_path, capsys):
    assert _run("run", "--fixture", "F3", "--dt", 1.0, "--out", tmp_path) == 1
    assert "StepTooLarge" in capsys.readouterr().err
    assert json.loads((tmp_path / "manifest.json").read_text())["failed_invariants"] == ["StepTooLarge"]


def test_config_errors(tmp_path, capsys):
    assert _run("run", "--fixture", "F9", "--out", tmp_path) == 2
    assert _run("run", "--fixture", "F2", "--out", tmp_path) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"flow": {"bogus": 1}}))
    assert _run("run", "--config", bad, "--out", tmp_path) == 2
    assert _run("refine-study", "--fixture", "F3", "--levels", 1, "--out", tmp_path) == 2
    assert "config error" in capsys.readouterr().err


def test_run_from_field_file(tmp_path):
    assert _run("run", "--fixture", "F4", "--N", 16, "--t-end", 2e-3, "--dt", 5e-4, "--out", tmp_path / "a") == 0
    src = tmp_path / "a" / "fields" / "g_0000.bin"
    assert _run("run", "--fixture", src, "--t-end", 2e-3, "--dt", 5e-4, "--out", tmp_path / "b") == 0
    a = (tmp_path / "a" / "diagnostics.csv").read_bytes()
    b = (tmp_path / "b" / "diagnostics.csv").read_bytes()
    assert a == b


def test_normalized_run(tmp_path):
    assert _run("run", "--fixture", "F1", "--N", 16, "--normalized", "--t-end", 0.05, "--dt", 1e-3,
                "--stride", 10, "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "diagnostics.json").read_text())
    rates = doc["decay_rate"]
    assert rates and all(abs(r + 1) <= 1e-10 for d in rates.values() for r in d["series"])


def test_gate_command(tmp_path):
    assert _run("gate", "--fixture", "F3", "--N", 64, "--theta", 0.5, "--kappa-cut", 0.05,
                "--out", tmp_path) == 0
    g = json.loads((tmp_path / "gate.json").read_text())
    assert abs(g["S_max"] - 0.5 * 243 / (128 * 3.141592653589793**2)) <= 2e-3
    assert (tmp_path / "cutoff.csv").is_file() and (tmp_path / "cutoff_check.json").is_file()
    assert _run("gate", "--fixture", "F1", "--N", 16, "--out", tmp_path / "f1") == 0
    assert json.loads((tmp_path / "f1" / "gate.json").read_text())["S_max"] == "unbounded"
    assert _run("gate", "--fixture", "F3", "--kappa-cut", 0.2, "--out", tmp_path / "x") == 2


def test_refine_study(tmp_path, capsys):
    assert _run("refine-study", "--fixture", "F3", "--N", 32, "--out", tmp_path) == 0
    res = json.loads((tmp_path / "refine.json").read_text())
    for name in ("beta", "kappa", "Q", "defect"):
        assert all(1.9 <= o <= 2.1 for o in res["table"][name]["orders"]), name
    assert "beta" in capsys.readouterr().out
    assert _run("refine-study", "--fixture", "F1", "--N", 16, "--levels", 2, "--out", tmp_path / "f1") == 0
    res = json.loads((tmp_path / "f1" / "refine.json").read_text())
    assert all(o == "exact" for row in res["table"].values() for o in row["orders"])


def test_export_plots(tmp_path):
    assert _run("run", "--fixture", "F3", "--t-end", 0.01, "--dt", 1e-4, "--stride", 10, "--out", tmp_path) == 0
    assert _run("export-plots", tmp_path) == 0
    with open(tmp_path / "plots.csv") as fh:
        rows = list(csv.DictReader(fh))
    lam = [float(r["value"]) for r in rows if r["quantity"] == "lambda_1" and r["probe"] == "0"]
    steps = [b - a for a, b in zip(lam, lam[1:])]
    assert len(lam) == 11 and (all(d > 0 for d in steps) or all(d < 0 for d in steps))
    empty = tmp_path / "empty"
    empty.mkdir()
    assert _run("export-plots", empty) == 1


def test_determinism_via_subprocess(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        subprocess.run([sys.executable, "-m", "hkflow", "run", "--fixture", "F5", "--N", "16",
                        "--t-end", "0.002", "--dt", "5e-4", "--gate", "--out", str(out)],
                       check=True, capture_output=True, env={"HKFLOW_THREADS": "1", "PATH": ""})
        outs.append(json.loads((out / "manifest.json").read_text())["files"])
    assert outs[0] == outs[1]


def test_run_config_roundtrip(tmp_path):
    cfg = RunConfig.from_dict({"fixture": "F5", "grid": {"N": 32}})
    p = tmp_path / "c.json"
    p.write_text(cfg.canonical())
    again = RunConfig.load(p)
    assert again.hash() == cfg.hash()
    assert cfg.override(**{"grid.N": 64}).hash() != cfg.hash()
    assert cfg.override(output="elsewhere").hash() == cfg.hash()
    with pytest.raises(ConfigError):
        cfg.override(**{"grid.M": 3})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"grid": {"N": 24}})
