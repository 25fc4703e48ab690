import json
import subprocess
import sys

import pytest

from pesokit.cli import main
from pesokit.config import ConfigError, expand_sweep, parse_config
from pesokit.trace import RunTrace

QUAD = {"kind": "quadratic", "a": 10, "n": 16, "r_ones": 4}


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def lora_doc(steps=200, **method):
    return {
        "problem": dict(QUAD),
        "method": {"kind": "lora", "r": 3, **method},
        "optimizer": {"name": "adamw", "lr": 0.01},
        "seed": 0,
        "total_steps": steps,
    }


def peso_doc(steps=200):
    return {
        "problem": dict(QUAD),
        "method": {"kind": "peso_lora_r", "K": 50, "r": 3, "gamma": 2.0, "smoothing": True, "alignment": True},
        "optimizer": {"name": "adamw", "lr": 0.01},
        "noise": {"C": 0.0},
        "seed": 0,
        "total_steps": steps,
    }


def test_run_writes_trace_and_summary(tmp_path, capsys):
    cfg = write(tmp_path, "lora.json", lora_doc())
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out.strip()
    assert out.startswith("final_loss=") and " min_grad_norm=" in out and out.endswith("restarts=0")
    trace = RunTrace.from_csv(tmp_path / "o" / "trace.csv")
    assert len(trace) == 200


def test_run_uses_output_path_from_config(tmp_path):
    doc = lora_doc(20)
    doc["output"] = str(tmp_path / "deep" / "t.csv")
    assert main(["run", "--config", write(tmp_path, "c.json", doc)]) == 0
    assert (tmp_path / "deep" / "t.csv").exists()


def test_rerun_is_byte_identical(tmp_path):
    doc = peso_doc(150)
    doc["noise"] = {"C": 0.5}
    cfg = write(tmp_path, "p.json", doc)
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["run", "--config", cfg, "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    main(["run", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "7"])
    assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "c" / "trace.csv").read_bytes()


def test_zero_frequency_names_field(tmp_path, capsys):
    cfg = write(tmp_path, "bad.json", lora_doc(K=0))
    assert main(["run", "--config", cfg]) == 2
    assert "method.K" in capsys.readouterr().err


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda d: d["method"].update(colour=1), "method.colour"),
        (lambda d: d.update(extra=1), "extra"),
        (lambda d: d["problem"].update(kind="cubic"), "problem.kind"),
        (lambda d: d["optimizer"].update(lr="fast"), "optimizer.lr"),
        (lambda d: d["method"].update(tau2=2.0, smoothing=True), "method.tau2"),
        (lambda d: d["method"].update(r=40), "method.r"),
        (lambda d: d.pop("method"), "method"),
    ],
)
def test_config_errors_name_the_field(mutate, field):
    doc = lora_doc()
    mutate(doc)
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert info.value.field == field


def test_missing_and_malformed_files(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.json")]) == 2
    (tmp_path / "x.json").write_text("{not json")
    assert main(["run", "--config", str(tmp_path / "x.json")]) == 2


def test_numerical_failure_exit_code(tmp_path):
    doc = {
        "problem": dict(QUAD),
        "method": {"kind": "galore", "K": 1, "r": 4},
        "optimizer": {"name": "sgd", "lr": 5.0},
        "total_steps": 2000,
    }
    cfg = write(tmp_path, "div.json", doc)
    with pytest.warns(RuntimeWarning):
        code = main(["run", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == 3
    assert len(RunTrace.from_csv(tmp_path / "o" / "trace.csv")) > 0


def test_compare_columns_and_report(tmp_path, capsys):
    a = write(tmp_path, "a.json", lora_doc(100))
    b = write(tmp_path, "b.json", peso_doc(100))
    c = write(tmp_path, "c.json", lora_doc(100))
    assert main(["compare", a, b, c, "--out", str(tmp_path / "cmp")]) == 0
    lines = (tmp_path / "cmp" / "comparison.csv").read_text().splitlines()
    assert lines[0] == "step,lora,peso_lora_r,lora_2,gap_peso_lora_r,gap_lora_2"
    assert len(lines) == 101
    assert all(row.split(",")[-1] == "0" for row in lines[1:])
    report = json.loads((tmp_path / "cmp" / "comparison.json").read_text())
    assert report["lora_floor"] == 100.0
    assert "lora_floor=100" in capsys.readouterr().out


def test_compare_rejects_mismatched_problems(tmp_path):
    a = write(tmp_path, "a.json", lora_doc(10))
    other = lora_doc(10)
    other["problem"]["a"] = 5
    b = write(tmp_path, "b.json", other)
    assert main(["compare", a, b]) == 2


def test_compare_treats_defaults_as_equal(tmp_path):
    a = write(tmp_path, "a.json", lora_doc(10))
    short = lora_doc(10)
    short["problem"] = {"kind": "quadratic"}
    b = write(tmp_path, "b.json", short)
    assert main(["compare", a, b, "--out", str(tmp_path / "o")]) == 0


def test_check_suite_pass_and_report(tmp_path):
    assert main(["check", "--suite", "schedule", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "check_report.json").read_text())
    assert report["passed"] and report["suites"] == ["schedule"]


def test_check_fault_injection_names_invariant(tmp_path, capsys):
    code = main(["check", "linalg", "--tol", "svd_reconstruction=1e-30", "--out", str(tmp_path)])
    assert code == 1
    assert "linalg/svd_reconstruction" in capsys.readouterr().out
    report = json.loads((tmp_path / "check_report.json").read_text())
    assert report["failed"] == ["linalg/svd_reconstruction"]
    # the override does not leak into later checks
    assert main(["check", "linalg", "--out", str(tmp_path)]) == 0


def test_check_unknown_suite_and_tolerance(tmp_path):
    assert main(["check", "nonsense"]) == 2
    assert main(["check", "schedule", "--tol", "nope=1", "--out", str(tmp_path)]) == 2
    assert main(["check", "schedule", "--tol", "descent", "--out", str(tmp_path)]) == 2


def test_sweep_grid(tmp_path):
    doc = lora_doc(30)
    doc["sweep"] = {"method.r": [2, 3], "optimizer.lr": [0.01, 0.1, 0.2]}
    cfg = write(tmp_path, "s.json", doc)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "sw"), "--workers", "2"]) == 0
    index = (tmp_path / "sw" / "index.csv").read_text().splitlines()
    assert index[0] == "cell,method.r,optimizer.lr,file,final_loss,min_grad_norm,status"
    assert len(index) == 7
    assert index[1].startswith("0,2,0.01,cell_000.csv")
    assert len(RunTrace.from_csv(tmp_path / "sw" / "cell_005.csv")) == 30


def test_sweep_requires_grid():
    with pytest.raises(ConfigError):
        expand_sweep(lora_doc())


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, "c.json", lora_doc(5))
    out = subprocess.run(
        [sys.executable, "-m", "pesokit", "run", "--config", cfg, "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0 and out.stdout.startswith("final_loss=")
