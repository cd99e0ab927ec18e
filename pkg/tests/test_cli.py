import pytest

from instanton.cli import main
from instanton.records import parse_record


def run(capsys, *argv):
    status = main(list(argv))
    out, err = capsys.readouterr()
    return status, out, err


def records(out, kind):
    return [parse_record(l)[1] for l in out.splitlines() if l.startswith(kind + " ")]


def test_rest_points(capsys):
    status, out, _ = run(capsys, "rest-points", "torus_sin")
    assert status == 0
    rows = records(out, "rest_point")
    assert [r["index"] for r in rows] == ["2", "1", "1", "0"]
    assert rows[3]["position"] == "3.1415926535897931,3.1415926535897931"


def test_incidence_square(capsys, data_dir):
    status, out, _ = run(capsys, "incidence", str(data_dir / "square.poset"))
    assert status == 0
    assert "relation: pass; H: 1,0,0" in out.splitlines()


def test_incidence_failure_exits_one(capsys, tmp_path, data_dir):
    text = (data_dir / "square.poset").read_text().replace("a0*a1 a0*a11 -1", "a0*a1 a0*a11 1")
    bad = tmp_path / "bad.poset"
    bad.write_text(text)
    status, out, _ = run(capsys, "incidence", str(bad))
    assert status == 1 and out.startswith("poset") and "relation: fail" in out


def test_morse_and_outputs(capsys, tmp_path):
    status, out, _ = run(capsys, "--out", str(tmp_path), "morse", "torus_sin")
    assert status == 0
    rec = records(out, "morse")[0]
    assert rec["ranks"] == "1,2,1" and rec["betti"] == "1,2,1"
    assert (tmp_path / "morse_complex.txt").exists()
    trajs = sorted(p.name for p in tmp_path.glob("traj_*.csv"))
    assert len(trajs) == 8
    assert (tmp_path / trajs[0]).read_text().splitlines()[1] == "t, x0, x1"


def test_instantons_and_strata(capsys):
    status, out, _ = run(capsys, "instantons", "torus_sin", "#0", "#1")
    assert status == 0 and len(records(out, "instanton")) == 2
    status, out, _ = run(capsys, "strata", "torus_sin", "0,0", "#3", "--max-depth", "2")
    assert status == 0
    strata = records(out, "stratum")
    assert [s["dimension"] for s in strata] == ["1", "0", "empty"]
    assert len(records(out, "broken")) == 8


def test_local_solve(capsys, tmp_path):
    status, out, _ = run(capsys, "--out", str(tmp_path), "local-solve", "linear_saddle",
                         "--p", "0.05", "--q", "0.05", "--chi", "0.5")
    assert status == 0
    assert records(out, "solve")[0]["iterations"] == "1"
    assert records(out, "decay")[0]["passes"] == "true"
    assert (tmp_path / "local_solution.csv").exists()


def test_families(capsys, tmp_path):
    status, out, _ = run(capsys, "--out", str(tmp_path), "families", "torus_sin", "#0", "#3")
    assert status == 0
    rec = records(out, "families")[0]
    assert (rec["count"], rec["depth_one"], rec["signed_sum"]) == ("4", "8", "0")
    assert "relation: pass; H: 4,0" in out
    assert (tmp_path / "moduli.poset").exists()


def test_domain_errors_exit_one(capsys):
    status, out, err = run(capsys, "instantons", "torus_sin", "#0", "#3")
    assert status == 1 and out == "" and "IndexGapError" in err
    status, _, err = run(capsys, "local-solve", "saddle_cubic", "--p", "1", "--q", "1")
    assert status == 1 and "ContractionError" in err
    status, _, err = run(capsys, "instantons", "torus_sin", "#9", "#1")
    assert status == 1


def test_usage_errors_exit_two(capsys):
    assert run(capsys, "rest-points", "no/such/file.field")[0] == 2
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["rest-points", "torus_sin", "--tol", "-1"])
    assert exc.value.code == 2


def test_repeat_runs_identical(capsys):
    first = run(capsys, "rest-points", "torus_sin2", "--grid", "32")
    second = run(capsys, "rest-points", "torus_sin2", "--grid", "32")
    assert first == second
