import json

import numpy as np
import pytest

from pssurf import cli, fixtures
from pssurf.solver import read_csv

GROUP1 = str(fixtures.path("group1"))
WINDOW = ["--dirichlet", "--xmin", "-0.15", "--xmax", "0.2", "--nx", "40", "--dt", "2e-5", "--tend", "0.04",
          "--store-every", "50", "--exact", "exp(-4*t)*sin(x+2*t)"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr()


def write_spec(tmp_path, **over):
    fields = {"k": "2", "eta": "2", "beta": "3", "sign": "+", "f11": "u", "f12": "z1", "f22": "beta",
              "f31": "u", "f32": "z1"}
    fields.update(over)
    p = tmp_path / "sys.pss"
    p.write_text("".join(f"{k} = {v}\n" for k, v in fields.items()))
    return str(p)


def test_check(tmp_path, capsys):
    code, out = run(capsys, "check", "--spec", GROUP1, "--out", str(tmp_path / "a"))
    assert code == cli.EXIT_OK and "PASS" in out.out
    report = json.loads((tmp_path / "a" / "check.json").read_text())
    assert report["passed"]
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["tolerances"]["seq"] == 1e-10

    code, _ = run(capsys, "check", "--spec", write_spec(tmp_path, f12="z2"), "--out", str(tmp_path / "b"))
    assert code == cli.EXIT_CHECK_FAILED


def test_usage_errors(tmp_path, capsys):
    code, out = run(capsys, "check", "--spec", str(tmp_path / "missing.pss"), "--out", str(tmp_path))
    assert code == cli.EXIT_USAGE and "not found" in out.err
    code, out = run(capsys, "check", "--spec", GROUP1, "--out", str(tmp_path), "--tol", "bogus=1")
    assert code == cli.EXIT_USAGE
    code, _ = run(capsys, "check", "--out", str(tmp_path))
    assert code == cli.EXIT_USAGE


@pytest.mark.parametrize("name,label", [("group1", "I (lambda=1)"), ("group4", "IV (C=1)"), ("group5", "V")])
def test_classify(tmp_path, capsys, name, label):
    code, out = run(capsys, "classify", "--spec", str(fixtures.path(name)), "--out", str(tmp_path))
    assert code == cli.EXIT_OK and out.out.strip() == label


def test_classify_ambiguous(tmp_path, capsys):
    # H is undefined at half of the samples
    code, out = run(capsys, "classify", "--spec", write_spec(tmp_path, f11="sqrt(u)"), "--out", str(tmp_path))
    assert code == cli.EXIT_AMBIGUOUS and "ambiguous" in out.out


def test_rhs(tmp_path, capsys):
    code, out = run(capsys, "rhs", "--spec", GROUP1)
    assert code == 0 and out.out.strip() == "z2 - (beta * z0 - eta * z1)"
    code, _ = run(capsys, "rhs", "--spec", write_spec(tmp_path, f11="1"))
    assert code == cli.EXIT_CHECK_FAILED


def test_solve_exact_and_reproducible(tmp_path, capsys):
    for d in ("a", "b"):
        code, out = run(capsys, "solve", "--spec", GROUP1, "--out", str(tmp_path / d), *WINDOW)
        assert code == 0 and "max error" in out.out
    a, b = (tmp_path / d / "solution.csv" for d in "ab")
    assert a.read_bytes() == b.read_bytes()
    sol = read_csv(a)
    assert sol.times.size == 41 and sol.x.size == 40


def test_solve_t_end_zero_and_abort(tmp_path, capsys):
    code, _ = run(capsys, "solve", "--spec", GROUP1, "--out", str(tmp_path / "z"), "--nx", "16", "--tend", "0")
    assert code == 0 and read_csv(tmp_path / "z" / "solution.csv").times.size == 1
    code, out = run(capsys, "solve", "--spec", GROUP1, "--out", str(tmp_path / "u"), "--nx", "64", "--dt", "0.05",
                    "--tend", "50")
    assert code == cli.EXIT_SOLVER_ABORT and "aborted" in out.out


def test_immerse_pipeline(tmp_path, capsys):
    out_dir = tmp_path / "sol"
    assert run(capsys, "solve", "--spec", GROUP1, "--out", str(out_dir), *WINDOW)[0] == 0
    code, out = run(capsys, "immerse", "--spec", GROUP1, "--out", str(tmp_path / "m"),
                    "--solution", str(out_dir / "solution.csv"), "--l", "3", "--gamma", "0.5")
    assert code == 0, out.out
    for name in ("mesh.obj", "diagnostics.csv", "immerse.json", "manifest.json"):
        assert (tmp_path / "m" / name).is_file()
    summary = json.loads((tmp_path / "m" / "immerse.json").read_text())
    assert summary["abc_sign"] == 1 and summary["sign_pairing"]["mode"] == "auto"
    K = np.loadtxt(tmp_path / "m" / "diagnostics.csv", delimiter=",", skiprows=1)[:, 7].reshape(41, 40)
    assert np.all(np.abs(K[3:-3, 3:-3] + 1) <= 0.02)


def test_immerse_outside_strip(tmp_path, capsys):
    code, out = run(capsys, "immerse", "--spec", GROUP1, "--out", str(tmp_path), "--nx", "16", "--dt", "1e-3",
                    "--tend", "0.01", "--l", "3", "--gamma", "1")
    assert code == cli.EXIT_STRIP and "strip" in out.out


def test_immerse_bad_parameters(tmp_path, capsys):
    code, _ = run(capsys, "immerse", "--spec", GROUP1, "--out", str(tmp_path), "--l", "2", "--gamma", "1")
    assert code == cli.EXIT_USAGE


def test_probe(tmp_path, capsys):
    code, out = run(capsys, "probe", "--spec", str(fixtures.path("group2")), "--out", str(tmp_path))
    assert code == 0 and json.loads(out.out)["conclusion"] == "inconsistent"
    assert json.loads((tmp_path / "witness.json").read_text())["det"] > 1
    code, out = run(capsys, "probe", "--spec", GROUP1, "--out", str(tmp_path))
    assert code == cli.EXIT_GROUP_I and "immersion" in out.out


def test_report(tmp_path, capsys):
    code, out = run(capsys, "report", "--spec", GROUP1, "--out", str(tmp_path / "r1"))
    assert code == 0 and "sign pairing: 1" in out.out
    code, out = run(capsys, "report", "--spec", str(fixtures.path("group3")), "--out", str(tmp_path / "r3"))
    report = json.loads((tmp_path / "r3" / "report.json").read_text())
    assert report["obstruction"]["conclusion"] == "inconsistent"
