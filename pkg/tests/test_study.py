import csv
import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochhom.cookbook import PLANS
from stochhom.ensemble import EnsembleKind, EnsembleSpec
from stochhom.study import (ResumeError, StudyPlan, StudyRecord, execute, fit_variance_slope, moment_checks,
                            systematic_analysis, variance_table)

SPEC = EnsembleSpec(EnsembleKind.POISSON, 2, contrast=0.25)


def small_plan(**kw):
    base = dict(kind="variance", ensemble=SPEC, L_values=(8.0, 10.0), T_over_L=1.0, h=0.5, n_samples=8, seed=3)
    base.update(kw)
    return StudyPlan(**base)


@given(st.floats(0.1, 10.0), st.sampled_from([1, 2, 3]))
def test_injected_variance_rate_is_recovered(c, d):
    rng = np.random.default_rng(0)
    cells = []
    for L in (8.0, 16.0, 32.0):
        v = rng.normal(size=400)
        v = (v - v.mean()) / v.std(ddof=1) * np.sqrt(c * L ** -d)
        cells.append((L, L, v))
    fit, status = fit_variance_slope(variance_table(cells), d)
    assert status == "ok"
    assert fit.slope == pytest.approx(-d, abs=1e-9)


def test_systematic_analysis_recovers_inverse_T():
    Ts = [16.0, 32.0, 64.0, 128.0, 256.0]
    rng = np.random.default_rng(1)
    offsets = rng.normal(scale=1e-2, size=(30, 1))  # coupled: the same realisation for every T
    values = 0.26 + 3.0 / np.array(Ts) + offsets + rng.normal(scale=1e-7, size=(30, 5))
    out = systematic_analysis(Ts, values)
    assert out["verdict"] == "ok"
    assert out["fit"].slope == pytest.approx(-1.0, abs=0.01)
    assert out["reference"] == pytest.approx(0.26 + offsets.mean(), abs=1e-5)
    assert out["sign_consistent"]


def test_systematic_analysis_flags_underpowered_data():
    Ts = [16.0, 32.0, 64.0, 128.0]
    rng = np.random.default_rng(2)
    values = 0.26 + 3e-4 / np.array(Ts) + rng.normal(scale=1e-2, size=(10, 4))
    assert systematic_analysis(Ts, values)["verdict"] == "underpowered"


def test_moment_checks_linear_in_log_T():
    Ts = [16.0, 32.0, 64.0, 128.0]
    phi2 = np.sqrt(0.1 + 0.05 * np.log(Ts))
    chk = moment_checks(Ts, phi2, [1.0, 1.1, 1.2, 1.3])
    assert chk["lnT_slope"] == pytest.approx(0.05)
    assert chk["lnT_r2"] == pytest.approx(1.0)
    assert chk["grad_max_over_min"] == pytest.approx(1.3)


def test_plan_validation():
    with pytest.raises(ValueError):
        small_plan(n_samples=4)
    with pytest.raises(ValueError):
        small_plan(kappa=1.0)
    with pytest.raises(ValueError, match="correlation"):
        small_plan(L_values=(4.0,))
    with pytest.raises(ValueError, match="dyadic"):
        small_plan(kind="systematic", T_values=(16, 32, 60, 128))
    with pytest.raises(ValueError, match="geometry"):
        small_plan(kind="sensitivity", T_values=(16,), distances=(2.0, 6.0))


def test_plan_seed_sets_the_ensemble_seed():
    assert small_plan(seed=9).ensemble.master_seed == 9
    plan = small_plan()
    assert StudyPlan.from_dict(plan.to_dict()) == plan


def test_cookbook_plans_validate():
    for make in PLANS.values():
        make().validate()


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    out = tmp_path_factory.mktemp("variance")
    plan = small_plan()
    return plan, out, execute(plan, out, workers=1)


def test_study_layout(finished):
    plan, out, record = finished
    for name in ("manifest.json", "samples.csv", "summary.json", "slopes.csv"):
        assert (out / name).exists()
    assert len(record.rows) == 16
    assert record.summary["complete"]
    assert not record.failures


def test_resume_skips_completed_cells(finished):
    plan, out, record = finished
    again = execute(plan, out, workers=1)
    assert again.rows == record.rows


def test_partial_resume_reproduces_missing_cell(finished, tmp_path):
    plan, out, record = finished
    rows = [r for r in record.rows if r["cell"] == plan.cell_ids()[0]]
    partial = StudyRecord(plan, rows)
    partial.write(tmp_path)
    resumed = execute(plan, tmp_path, workers=1)
    assert resumed.rows == record.rows


def test_parallel_run_is_bitwise_identical(finished, tmp_path):
    plan, out, record = finished
    assert execute(plan, tmp_path, workers=2).rows == record.rows


def test_resume_with_a_different_plan_is_refused(finished):
    plan, out, _ = finished
    with pytest.raises(ResumeError):
        execute(dataclasses.replace(plan, seed=4), out, workers=1)


def test_truncated_samples_are_refused(finished, tmp_path):
    plan, out, record = finished
    record.write(tmp_path)
    text = (tmp_path / "samples.csv").read_text().splitlines()
    (tmp_path / "samples.csv").write_text("\n".join(text[:-1] + [text[-1].split(",")[0]]) + "\n")
    with pytest.raises(ResumeError):
        StudyRecord.load(tmp_path, plan)


def test_wrong_row_count_is_refused(finished, tmp_path):
    plan, out, record = finished
    record.write(tmp_path)
    lines = (tmp_path / "samples.csv").read_text().splitlines()
    (tmp_path / "samples.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ResumeError, match="rows"):
        StudyRecord.load(tmp_path, plan)


def test_header_mismatch_is_refused(finished, tmp_path):
    plan, out, record = finished
    record.write(tmp_path)
    moments = StudyPlan(kind="moments", ensemble=SPEC, T_values=(4, 8, 16), h=0.5, n_samples=8, seed=3)
    StudyRecord(moments).write(tmp_path / "m")
    (tmp_path / "m" / "samples.csv").write_text((tmp_path / "samples.csv").read_text())
    with pytest.raises(ResumeError, match="header"):
        StudyRecord.load(tmp_path / "m", moments)


def test_samples_csv_schema(finished):
    plan, out, _ = finished
    with open(out / "samples.csv") as fh:
        reader = csv.DictReader(fh)
        row = next(reader)
    assert reader.fieldnames[:3] == ["cell", "sample_index", "T"]
    assert float(row["value_with"]) >= float(row["value_without"])


@pytest.mark.parametrize("kind,extra", [
    ("systematic", dict(L_values=(8.0,), T_values=(2.0, 4.0, 8.0, 16.0))),
    ("gradient", dict(L_values=(8.0,), T_values=(2.0, 4.0, 8.0))),
    ("moments", dict(T_values=(2.0, 4.0, 8.0), q_list=(1.0, 2.0))),
    ("sensitivity", dict(T_values=(4.0,), distances=(3.0, 4.0, 5.0), ball_radius=1.0)),
])
def test_other_study_kinds_run(kind, extra, tmp_path):
    plan = small_plan(kind=kind, chunk_size=4, **extra)
    record = execute(plan, tmp_path, workers=1)
    assert record.summary["complete"]
    assert len(record.rows) == plan.n_samples * plan.rows_per_sample()
