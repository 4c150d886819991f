"""Exit codes, artifact layout, and determinism of the command driver."""

import json
import os

import numpy as np
import pytest

from sobotrace.cli import ExperimentConfig, main, run
from sobotrace.fields import Box, SampledField, load_field, save_field
from sobotrace.tracelift import StripDomain


def _files(directory):
    return sorted(os.listdir(directory))


def test_mollifier_run_writes_report_csv_and_figure(tmp_path):
    out = tmp_path / "m.json"
    code = run(ExperimentConfig("mollifier", {"dim": 1, "k": 2, "m": 2},
                                str(out)))
    assert code == 0
    report = json.loads(out.read_text())
    assert report["passed"] is True
    for check in report["checks"]:
        assert check["lhs"] <= 1e-9
    assert (tmp_path / "m.csv").exists()
    assert (tmp_path / "m.profile.png").exists()


def test_unknown_parameter_rejected_without_output(tmp_path):
    out = tmp_path / "r.json"
    code = run(ExperimentConfig("seminorm", {"shape": [12], "brut": True},
                                str(out)))
    assert code == 2
    assert _files(tmp_path) == []


def test_out_of_range_parameter_rejected(tmp_path):
    code = run(ExperimentConfig("mollifier", {"dim": 1, "k": -1, "m": 2},
                                str(tmp_path / "r.json")))
    assert code == 2
    assert _files(tmp_path) == []


def test_unknown_command_rejected(tmp_path):
    code = run(ExperimentConfig("granulate", {}, str(tmp_path / "r.json")))
    assert code == 2


def test_witness_without_experiment_rejected(tmp_path):
    code = run(ExperimentConfig("witness", {"p": 2.0},
                                str(tmp_path / "r.json")))
    assert code == 2


def test_fourier_shape_dim_mismatch_rejected(tmp_path):
    code = run(ExperimentConfig("fourier", {"dim": 2, "shape": [64]},
                                str(tmp_path / "r.json")))
    assert code == 2
    assert _files(tmp_path) == []


def test_failed_inequality_returns_one_but_writes_report(tmp_path):
    out = tmp_path / "w.json"
    params = {"experiment": "divergence", "radii": [10.0, 30.0, 100.0],
              "slope_window": [5.0, 6.0]}
    code = run(ExperimentConfig("witness", params, str(out)))
    assert code == 1
    report = json.loads(out.read_text())
    assert report["passed"] is False
    failed = [c for c in report["checks"] if not c["pass"]]
    assert [c["id"] for c in failed] == ["slope_in_window"]


def test_numerical_failure_returns_three_without_output(tmp_path):
    # a constant flux density violates the compatibility condition at runtime
    strip = StripDomain(0.0, 1.0, Box((0.0,), (1.0,), (True,)))
    grid = strip.grid((16, 8))
    psi_path = tmp_path / "psi.json"
    save_field(SampledField(grid, np.ones(grid.node_counts)), str(psi_path))
    params = {"problem": {"kind": "neumann", "p": 2.0,
                          "domain": {"cell": [1.0], "shape": [16, 8]},
                          "data": {"psi": str(psi_path)}}}
    out = tmp_path / "pde.json"
    code = run(ExperimentConfig("pde", params, str(out)))
    assert code == 3
    assert not out.exists()
    assert not (tmp_path / "pde.csv").exists()


def test_problem_file_contents_validated(tmp_path):
    bad = tmp_path / "prob.json"
    bad.write_text(json.dumps({"p": 2.0, "domain": {"shape": [16, 8]}}))
    code = run(ExperimentConfig("pde", {"problem_file": str(bad)},
                                str(tmp_path / "r.json")))
    assert code == 2
    assert not (tmp_path / "r.json").exists()


def test_missing_problem_file_rejected(tmp_path):
    code = run(ExperimentConfig("pde",
                                {"problem_file": str(tmp_path / "none.json")},
                                str(tmp_path / "r.json")))
    assert code == 2


def _seminorm_config(tmp_path, name):
    return ExperimentConfig(
        "seminorm", {"shape": [16], "fields": 2, "brute": True},
        str(tmp_path / name), seed=5)


def test_reports_byte_identical_across_reruns(tmp_path):
    assert run(_seminorm_config(tmp_path, "a.json")) == 0
    assert run(_seminorm_config(tmp_path, "b.json")) == 0
    a = (tmp_path / "a.json").read_bytes().replace(b"a.csv", b"x.csv")
    a = a.replace(b"a.values.png", b"x.values.png")
    b = (tmp_path / "b.json").read_bytes().replace(b"b.csv", b"x.csv")
    b = b.replace(b"b.values.png", b"x.values.png")
    assert a == b


def test_reports_thread_invariant_up_to_recorded_count(tmp_path, monkeypatch):
    assert run(_seminorm_config(tmp_path, "one.json")) == 0
    monkeypatch.setenv("SOBOTRACE_THREADS", "4")
    assert run(_seminorm_config(tmp_path, "four.json")) == 0
    one = json.loads((tmp_path / "one.json").read_text())
    four = json.loads((tmp_path / "four.json").read_text())
    assert one.pop("threads") != four.pop("threads")
    one["artifacts"] = four["artifacts"] = None
    assert one == four


def test_pde_solution_roundtrips_through_field_format(tmp_path):
    out = tmp_path / "pde.json"
    params = {"problem": {"kind": "dirichlet", "p": 2.0,
                          "domain": {"cell": [1.0], "shape": [16, 8]}}}
    code = run(ExperimentConfig("pde", params, str(out), seed=2))
    assert code == 0
    report = json.loads(out.read_text())
    assert report["artifacts"]["fields"] == ["pde.solution.json"]
    u = load_field(str(tmp_path / "pde.solution.json"))
    assert u.grid.node_counts == (16, 9)
    assert np.all(np.isfinite(u.values))
    assert report["results"]["energy_bound"]["lhs"] <= \
        report["results"]["energy_bound"]["rhs"] * (1.0 + 1e-9)


def test_suite_quick_profile_passes(tmp_path):
    out = tmp_path / "suite.json"
    code = run(ExperimentConfig("suite", {"profile": "quick"}, str(out),
                                seed=7))
    assert code == 0
    report = json.loads(out.read_text())
    assert report["passed"] is True
    assert all(f["passed"] for f in report["results"]["families"].values())
    assert (tmp_path / "suite.summary.png").exists()


def test_main_accepts_scalar_flags(tmp_path):
    out = tmp_path / "m.json"
    code = main(["mollifier", "--dim", "1", "--k", "2", "--m", "2",
                 "--output", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["parameters"] == {"dim": 1, "k": 2, "m": 2}


def test_main_flag_overrides_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dim": 1, "k": 2, "m": 2}))
    out = tmp_path / "m.json"
    code = main(["mollifier", "--config", str(cfg), "--m", "3",
                 "--output", str(out)])
    assert code == 0
    assert json.loads(out.read_text())["parameters"]["m"] == 3


def test_main_missing_config_file(tmp_path):
    code = main(["seminorm", "--config", str(tmp_path / "absent.json"),
                 "--output", str(tmp_path / "r.json")])
    assert code == 2


def test_main_threads_flag_sets_worker_count(tmp_path, monkeypatch):
    monkeypatch.delenv("SOBOTRACE_THREADS", raising=False)
    out = tmp_path / "m.json"
    code = main(["--threads", "3", "mollifier", "--dim", "1", "--k", "1",
                 "--m", "1", "--output", str(out)])
    assert code == 0
    assert json.loads(out.read_text())["threads"] == 3
