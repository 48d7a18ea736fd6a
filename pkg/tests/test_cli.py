import hashlib
import json
import time

import pytest

from stochhom.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main

POISSON = ["--override", "ensemble.kind=PoissonInclusion", "--override", "grid.h=0.5"]


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_sample_is_deterministic(tmp_path):
    args = ["sample", *POISSON, "--override", "grid.radius=6", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert _digest(tmp_path / "a" / "field.bin") == _digest(tmp_path / "b" / "field.bin")
    man = json.loads((tmp_path / "a" / "run_manifest.json").read_text())
    assert man["master_seed"] == 5 and "field.bin" in man["outputs"]
    assert main(args[:-1] + ["6", "--out", str(tmp_path / "c")]) == EXIT_OK
    assert _digest(tmp_path / "a" / "field.bin") != _digest(tmp_path / "c" / "field.bin")


def test_solve_constant_field(tmp_path):
    rc = main(["solve", "--out", str(tmp_path), "--override", "grid.h=0.5", "--override", "grid.radius=6",
               "--override", "solver.field=constant", "--override", "solver.T=4", "--override", "solver.L=2"])
    assert rc == EXIT_OK
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert diag["max_abs_phi"] <= 1e-8
    assert diag["estimate"]["value_with_zero_order"] == pytest.approx(1.0, abs=1e-8)


def test_config_errors_exit_2(tmp_path):
    assert main(["solve", *POISSON, "--out", str(tmp_path), "--override", "grid.radius=4",
                 "--override", "solver.T=-1"]) == EXIT_CONFIG
    assert main(["sample", "--out", str(tmp_path), "--override", "ensemble.kind=PoissonInclusion"]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG
    assert main(["study", "variance", "--preset", "nosuch", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_smoke_study_and_resume_conflict(tmp_path):
    study = ["study", "variance", *POISSON, "--out", str(tmp_path), "--override", "study.L_values=8",
             "--override", "study.n_samples=8"]
    t0 = time.time()
    assert main(study + ["--seed", "1"]) == EXIT_OK
    assert time.time() - t0 < 60
    for name in ("manifest.json", "samples.csv", "summary.json", "slopes.csv", "run_manifest.json"):
        assert (tmp_path / name).exists()
    assert main(study + ["--seed", "2"]) == EXIT_DATA


def test_sgcheck_command(tmp_path):
    assert main(["sgcheck", "--out", str(tmp_path), "--override", "sgcheck.q_values=1"]) == EXIT_OK
    report = json.loads((tmp_path / "sgcheck.json").read_text())
    assert report["all_passed"]


def test_green_command(tmp_path):
    rc = main(["green", "--out", str(tmp_path), "--override", "green.T=64", "--override", "green.radius=40",
               "--override", "green.radii=2,4,8,16"])
    assert rc in (0, 1)
    rep = json.loads((tmp_path / "green_report.json").read_text())
    assert "pointwise" in rep["extra"]
    assert (tmp_path / "annulus.csv").exists() and (tmp_path / "green.bin").exists()
