"""Command line: config handling, artifacts, exit codes, output shapes."""
import json

from shapenewton import cli, driver
from shapenewton.errors import StepFailureError


def write_config(tmp_path, text):
    path = tmp_path / "config.txt"
    path.write_text(text)
    return str(path)


def test_missing_config_file_exits_one(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    code = cli.main(["solve", "--out", str(tmp_path / "out"),
                     "--config", str(missing)])
    assert code == 1
    assert str(missing) in capsys.readouterr().err


def test_unknown_config_key_exits_one(tmp_path, capsys):
    cfg = write_config(tmp_path, "n = 16\nwidget = 3\n")
    code = cli.main(["solve", "--out", str(tmp_path / "out"), "--config", cfg])
    assert code == 1
    assert "widget" in capsys.readouterr().err


def test_bad_config_value_exits_one(tmp_path, capsys):
    cfg = write_config(tmp_path, "line_search = maybe\n")
    code = cli.main(["solve", "--out", str(tmp_path / "out"), "--config", cfg])
    assert code == 1
    assert "line_search" in capsys.readouterr().err


def test_invalid_config_combination_exits_one(tmp_path, capsys):
    cfg = write_config(tmp_path, "f1 = 5\nf2 = 5\n")
    code = cli.main(["solve", "--out", str(tmp_path / "out"), "--config", cfg])
    assert code == 1
    assert "f1" in capsys.readouterr().err


def test_solve_default_prints_three_row_table(tmp_path, capsys):
    out = tmp_path / "run"
    code = cli.main(["solve", "--out", str(out)])
    assert code == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0] == "level 1"
    assert lines[1].split() == ["iter", "dist", "J", "grad_norm",
                                "cg_iters", "alpha"]
    body = [line.split() for line in lines[2:]]
    assert [row[0] for row in body] == ["0", "1", "2"]
    dists = [float(row[1]) for row in body]
    assert dists[0] > dists[1] > dists[2]

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["f1"] == 1000.0
    assert manifest["version"]
    assert manifest["timestamp"]
    assert (out / "trace.csv").is_file()
    assert (out / "run.log").read_text().count("\n") >= 3
    for it in range(3):
        vtk = out / f"iter_{it:03d}.vtk"
        assert vtk.read_text().startswith("# vtk DataFile Version 3.0")
        assert (out / f"interface_{it:03d}.csv").is_file()


def test_rerun_requires_force(tmp_path, capsys):
    cfg = write_config(tmp_path, "n = 8\nmax_sqp_iters = 1\n")
    out = str(tmp_path / "run")
    assert cli.main(["solve", "--out", out, "--config", cfg]) == 0
    capsys.readouterr()
    assert cli.main(["solve", "--out", out, "--config", cfg]) == 1
    assert "--force" in capsys.readouterr().err
    assert cli.main(["solve", "--out", out, "--config", cfg, "--force"]) == 0


def test_flags_override_config_file(tmp_path):
    cfg = write_config(tmp_path, "n = 8\nmax_sqp_iters = 0\nstep_length = 0.5\n")
    out = tmp_path / "run"
    code = cli.main(["solve", "--out", str(out), "--config", cfg,
                     "--alpha", "0.25", "--cg-tol", "1e-6", "--seed", "7"])
    assert code == 0
    saved = json.loads((out / "manifest.json").read_text())["config"]
    assert saved["n"] == 8
    assert saved["step_length"] == 0.25
    assert saved["cg_tol"] == 1e-6
    assert saved["seed"] == 7


def test_invalid_level_exits_one(tmp_path, capsys):
    cfg = write_config(tmp_path, "n = 8\n")
    code = cli.main(["solve", "--out", str(tmp_path / "out"), "--config", cfg,
                     "--level", "0"])
    assert code == 1
    assert "level" in capsys.readouterr().err


def test_baseline_warns_on_insufficient_progress(tmp_path, capsys):
    cfg = write_config(tmp_path, "n = 16\n")
    code = cli.main(["baseline", "--out", str(tmp_path / "run"),
                     "--config", cfg, "--scaling", "1"])
    assert code == 0
    out = capsys.readouterr().out
    assert "insufficient progress" in out


def test_baseline_large_scaling_does_not_warn(tmp_path, capsys):
    cfg = write_config(tmp_path, "n = 16\nmax_sqp_iters = 1\n")
    code = cli.main(["baseline", "--out", str(tmp_path / "run"),
                     "--config", cfg])
    assert code == 0
    out = capsys.readouterr().out
    assert "steepest descent" in out
    assert "insufficient progress" not in out


def test_study_prints_level_matrix(tmp_path, capsys):
    cfg = write_config(tmp_path, "n = 8\nlevels = 2\nmax_sqp_iters = 1\n")
    code = cli.main(["study", "--out", str(tmp_path / "run"), "--config", cfg])
    assert code == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0].split() == ["iter", "level", "1", "level", "2"]
    assert len(lines) == 3
    assert len(lines[1].split()) == 3
    trace = (tmp_path / "run" / "trace.csv").read_text().strip().split("\n")
    assert len(trace) == 5  # header + two rows per level


def test_verify_lists_all_checks(capsys):
    code = cli.main(["verify"])
    out = capsys.readouterr().out
    assert code == 0
    assert out.count("PASS") == 6
    assert "FAIL" not in out
    assert "all 6 checks passed" in out


def test_solver_failure_exits_two(tmp_path, capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise StepFailureError("iteration 1: no acceptable step length found")

    monkeypatch.setattr(driver, "sqp_solve", boom)
    cfg = write_config(tmp_path, "n = 8\n")
    code = cli.main(["solve", "--out", str(tmp_path / "run"), "--config", cfg])
    assert code == 2
    err = capsys.readouterr().err
    assert "solver failure" in err
    assert "iteration 1" in err
