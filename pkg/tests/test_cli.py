import json
from pathlib import Path

import pytest

from exitgrid.cli import main
from exitgrid.io import read_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(cmd, config, out, *extra):
    return main([cmd, "--config", config, "--out", str(out), "--quiet", *extra])


def test_solve_writes_field(tmp_path):
    assert run("solve", str(CONFIGS / "exa.toml"), tmp_path) == 0
    header, rows = read_csv(tmp_path / "field.csv")
    assert header == ["x1", "x2", "value", "status"]
    assert len(rows) == 201 * 171
    res = json.loads((tmp_path / "residuals.json").read_text())
    assert "hypotheses" in res
    assert (tmp_path / "run.log").exists()


def test_solve_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = str(CONFIGS / "exa.toml")
    assert run("solve", cfg, a, "--grid", "41,31") == 0
    assert run("solve", cfg, b, "--grid", "41,31") == 0
    for name in ("field.csv", "residuals.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_bench_rows_and_order(tmp_path):
    assert run("bench", str(CONFIGS / "bench.toml"), tmp_path) == 0
    header, rows = read_csv(tmp_path / "convergence.csv")
    assert len(rows) == 2
    linf = [float(r[header.index("linf")]) for r in rows]
    assert linf[0] > linf[1]


def test_diagnose_origin(tmp_path):
    cfg = write(tmp_path, '[problem]\nbuiltin = "EXA"\n[grid]\nn = [201, 171]\n[diagnose]\npoints = [[0.0, 0.0]]\n')
    assert run("diagnose", cfg, tmp_path / "o") == 0
    rep = json.loads((tmp_path / "o" / "regularity.json").read_text())
    pt = rep["points"][0]
    assert pt["hypograph_differentiable"] is True
    assert pt["direction"][1] < -0.99


def test_extremal_synthesize_sweep(tmp_path):
    cfg = str(CONFIGS / "exa.toml")
    for cmd in ("extremal", "synthesize", "sweep"):
        out = tmp_path / cmd
        assert run(cmd, cfg, out, "--grid", "101,86") == 0
        assert any(out.glob("*.csv"))
    mp = json.loads((tmp_path / "extremal" / "maximum_principle.json").read_text())
    assert mp
    syn = json.loads((tmp_path / "synthesize" / "synthesis.json").read_text())
    assert syn


def test_custom_problem_runs(tmp_path):
    assert run("synthesize", str(CONFIGS / "custom.toml"), tmp_path, "--grid", "61,61") == 0


def test_validation_failure_exit_code(tmp_path):
    text = (CONFIGS / "custom.toml").read_text().replace("G = 0.0", "G = 2.0")
    assert run("solve", write(tmp_path, text), tmp_path / "o") == 2


def test_missing_config_exit_code(tmp_path):
    assert run("solve", str(tmp_path / "absent.toml"), tmp_path / "o") == 2


def test_bad_grid_exit_code(tmp_path):
    assert run("solve", str(CONFIGS / "exa.toml"), tmp_path, "--grid", "2,5") == 2


def test_numerical_failure_exit_code(tmp_path):
    cfg = write(tmp_path, '[problem]\nbuiltin = "EIK64"\n[grid]\nn = 41\n[synthesize]\nx0 = [[5.0, 5.0]]\n')
    assert run("synthesize", cfg, tmp_path / "o") == 3


def test_unknown_command_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["frobnicate", "--config", "x.toml"])
