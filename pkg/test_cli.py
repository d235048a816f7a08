import json

import pytest

import harness
import run_stencil_experiments as cli
from harness import ValidationResult


def test_run_prints_a_json_report(capsys):
    assert cli.main(["run", "--method", "axpy", "--size", "8", "--iterations", "2", "--validate"]) == 0
    parsed = json.loads(capsys.readouterr().out)
    assert parsed["schema"] == "v1"
    (report,) = parsed["reports"]
    assert report["config"]["method"] == "axpy"
    assert report["validation"]["bit_exact"] is True


def test_run_writes_csv(tmp_path):
    out = tmp_path / "run.csv"
    assert cli.main(["run", "--method", "matmul", "--size", "1024", "--iterations", "100", "--model-only",
                     "--format", "csv", "--out", str(out)]) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(harness.CSV_COLUMNS)
    assert lines[1].startswith("v1,matmul,1024,100,pcie,0,False")


def test_validation_failure_exits_with_one(monkeypatch, capsys):
    def failing(method, initial, result, iterations):
        return ValidationResult("jacobi_run_reference", "bit-exact", 1.0, 128.0, False, False)
    monkeypatch.setattr(harness, "_compare", failing)
    assert cli.main(["run", "--method", "axpy", "--size", "4", "--validate"]) == 1


def test_validate_subcommand_passes(capsys):
    assert cli.main(["validate", "--sizes", "4", "16"]) == 0
    reports = json.loads(capsys.readouterr().out)["reports"]
    assert [(r["config"]["method"], r["config"]["size"]) for r in reports] == \
        [("axpy", 4), ("matmul", 4), ("axpy", 16), ("matmul", 16)]


def test_validate_refuses_model_only():
    assert cli.main(["validate", "--model-only"]) == 2


def test_validate_without_execution_is_a_usage_error():
    assert cli.main(["run", "--method", "axpy", "--size", "4", "--validate", "--model-only"]) == 2


def test_xlsx_needs_an_output_path():
    assert cli.main(["run", "--method", "axpy", "--size", "4", "--format", "xlsx"]) == 2


def test_unwritable_output_exits_with_three(tmp_path):
    out = tmp_path / "missing" / "report.json"
    assert cli.main(["run", "--method", "axpy", "--size", "4", "--out", str(out)]) == 3


def test_oversized_run_exits_with_four():
    assert cli.main(["run", "--method", "matmul", "--size", "16384", "--model-only"]) == 4


def test_bad_arguments_exit_with_two():
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["run", "--method", "fft", "--size", "4"])
    assert excinfo.value.code == 2


def test_sweep_failure_sets_exit_code(capsys):
    code = cli.main(["sweep", "--methods", "axpy", "matmul", "--sizes", "1024", "16384", "--model-only"])
    assert code == 4
    reports = json.loads(capsys.readouterr().out)["reports"]
    assert len(reports) == 3


def test_preset_sweep_skips_what_does_not_fit(tmp_path):
    out = tmp_path / "published.csv"
    assert cli.main(["sweep", "--preset", "published", "--format", "csv", "--out", str(out)]) == 0
    rows = out.read_text(encoding="utf-8").splitlines()[1:]
    # 6 Axpy sizes and the 4 MatMul sizes that fit, at 3 iteration counts
    assert len(rows) == 30
    assert not any(row.startswith("v1,matmul,16384") or row.startswith("v1,matmul,30720") for row in rows)


def test_sweep_from_config_file(tmp_path, capsys):
    configs = tmp_path / "configs.csv"
    configs.write_text("method,size,iterations,scenario,seed\naxpy,16,2,upm,3\nmatmul,16,2,uvm,3\n",
                       encoding="utf-8")
    assert cli.main(["sweep", "--configs", str(configs), "--validate"]) == 0
    reports = json.loads(capsys.readouterr().out)["reports"]
    assert [(r["config"]["method"], r["config"]["scenario"], r["config"]["seed"]) for r in reports] == \
        [("axpy", "upm", 3), ("matmul", "uvm", 3)]


def test_sweep_writes_a_workbook(tmp_path):
    out = tmp_path / "sweep.xlsx"
    assert cli.main(["sweep", "--methods", "cpu", "axpy", "matmul", "--sizes", "128", "--model-only",
                     "--format", "xlsx", "--out", str(out)]) == 0
    assert out.stat().st_size > 0


def test_machine_override_changes_the_model(tmp_path, capsys):
    machine = tmp_path / "machine.json"
    machine.write_text(json.dumps({"init_time": 0.25}), encoding="utf-8")
    assert cli.main(["run", "--method", "axpy", "--size", "32", "--iterations", "0", "--model-only",
                     "--machine", str(machine)]) == 0
    report = json.loads(capsys.readouterr().out)["reports"][0]
    assert report["modeled"]["phases_s"]["total"] == 0.25


def test_missing_machine_file_is_a_usage_error(tmp_path):
    assert cli.main(["run", "--method", "axpy", "--size", "4", "--machine", str(tmp_path / "nope.json")]) == 2


def test_calibrate_writes_a_machine(tmp_path, capsys):
    out = tmp_path / "fitted.json"
    assert cli.main(["calibrate", "--out", str(out)]) == 0
    fitted = json.loads(out.read_text(encoding="utf-8"))
    assert fitted["cpu_extract_throughput"] == pytest.approx(2.1e10, rel=0.01)
    assert "modeled_kernel_ms" in capsys.readouterr().out
