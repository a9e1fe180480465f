import os

import pytest

from finslerlab.cli import main

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CFG = os.path.join(ROOT, "configs")


def _write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_validate_prints_certificate(tmp_path, capsys):
    rc = main(["validate", os.path.join(CFG, "euclidean.ini"), "--set", f"output.dir={tmp_path}"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "α=1, κ=1, κ*=1, ρ=1" in out


def test_unknown_key_exits_1(tmp_path):
    cfg = _write(tmp_path, "[metric]\nkind = euclidean\n[constants]\nbogus = 1\n")
    assert main(["validate", cfg]) == 1


def test_unknown_section_exits_1(tmp_path):
    cfg = _write(tmp_path, "[metric]\nkind = euclidean\n[nonsense]\na = 1\n")
    assert main(["validate", cfg]) == 1


def test_bad_expression_exits_1(tmp_path, capsys):
    cfg = _write(tmp_path, "[metric]\nkind = randers\nb1 = 0.2x1\n")
    assert main(["validate", cfg]) == 1
    assert "byte offset" in capsys.readouterr().err


def test_non_positive_metric_exits_1(tmp_path):
    cfg = _write(tmp_path, "[metric]\nkind = randers\nb1 = 1.5\n")
    assert main(["validate", cfg]) == 1


def test_cfl_violation_exits_2(tmp_path):
    cfg = _write(tmp_path, (
        "[metric]\nkind = euclidean\n[grid]\ndomain = torus\nperiod = 6.283185307179586\nk = 32\n"
        "[initial]\nu0 = 1 + 0.5*cos(x1)\n[solver]\nt_end = 0.1\ndt = 1\n"
        f"[output]\ndir = {tmp_path}\n"))
    assert main(["solve", cfg]) == 2


def test_tensors_csv(tmp_path):
    rc = main(["tensors", os.path.join(CFG, "euclidean.ini"), "--set", f"output.dir={tmp_path}"])
    assert rc == 0
    lines = (tmp_path / "tensors.csv").read_text().splitlines()
    assert len(lines) == 1 + 2


def test_constants_profile_and_summary(tmp_path, capsys):
    rc = main(["constants", os.path.join(CFG, "funk.ini"), "--set", f"output.dir={tmp_path}"])
    assert rc == 0
    summary = (tmp_path / "constants_summary.txt").read_text()
    assert summary.rstrip().endswith("status: violations=0")


@pytest.mark.parametrize("override", ["nodot=1", "metric.kind"])
def test_malformed_override_exits_1(tmp_path, override):
    assert main(["validate", os.path.join(CFG, "euclidean.ini"), "--set", override]) == 1
