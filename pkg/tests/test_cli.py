import os
import subprocess
import sys

import pytest

from icbar import harness
from icbar.cli import main

CONFIG = """scenario:
  preset: table1
  n: 80
  d: 4
  seed: 3
bench:
  reps: 2
  penalties: [bar, oracle]
  tau_grid: {size: 3, low: 0.05, high: 5.0}
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "config.yaml").write_text(CONFIG)
    assert main(["simulate", "--config", str(root / "config.yaml"), "--out", str(root / "sim"), "--reps", "1"]) == 0
    return root


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def data(workdir):
    return str(workdir / "sim" / "rep_0000.csv")


class TestExitCodes:
    def test_no_command(self, capsys):
        assert run([], capsys)[0] == 2

    def test_unknown_flag(self, capsys):
        assert run(["fit", "--bogus"], capsys)[0] == 2

    def test_bad_format(self, capsys):
        assert run(["--format", "xml", "fit", "--data", "x"], capsys)[0] == 2

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(["fit", "--data", str(tmp_path / "none.csv")], capsys)
        assert code == 2 and "error" in err

    def test_tau_without_penalty(self, workdir, capsys):
        assert run(["fit", "--data", data(workdir), "--tau", "1"], capsys)[0] == 2

    def test_tau_and_tune(self, workdir, capsys):
        assert run(["fit", "--data", data(workdir), "--penalty", "bar", "--tau", "1", "--tune"], capsys)[0] == 2

    def test_bad_threads(self, workdir, capsys):
        assert run(["--threads", "0", "fit", "--data", data(workdir)], capsys)[0] == 2

    def test_bad_config(self, tmp_path, capsys):
        p = tmp_path / "c.yaml"
        p.write_text("scenario: [unclosed\n")
        assert run(["bench", "--config", str(p)], capsys)[0] == 2

    def test_numeric_failure(self, workdir, capsys):
        code, _, err = run(["fit", "--data", data(workdir), "--max-iter", "1", "--tol", "1e-14"], capsys)
        assert code == 1 and "numerical" in err


class TestSimulate:
    def test_files(self, workdir):
        text = (workdir / "sim" / "rep_0000.csv").read_text().splitlines()
        assert len(text) == 81

    def test_tsv(self, workdir, capsys, tmp_path):
        assert main(["--format", "tsv", "simulate", "--config", str(workdir / "config.yaml"),
                     "--out", str(tmp_path), "--reps", "1"]) == 0
        assert "\t" in (tmp_path / "rep_0000.tsv").read_text().splitlines()[0]


class TestFit:
    def test_tau_zero_matches_unpenalized(self, workdir, capsys):
        _, plain, _ = run(["fit", "--data", data(workdir)], capsys)
        _, zero, _ = run(["fit", "--data", data(workdir), "--penalty", "bar", "--tau", "0"], capsys)
        assert plain == zero
        assert "risk,covariate,estimate,zero" in plain

    def test_penalized(self, workdir, capsys):
        code, out, _ = run(["fit", "--data", data(workdir), "--penalty", "bar", "--tau", "2"], capsys)
        assert code == 0 and "# penalty: BAR" in out
        rows = [line for line in out.splitlines() if not line.startswith("#")][1:]
        assert len(rows) == 8

    def test_tune_to_file(self, workdir, capsys, tmp_path):
        out = tmp_path / "fit.csv"
        code = main(["fit", "--data", data(workdir), "--penalty", "lasso", "--tune", "--tau-grid", "0.5,2",
                     "--out", str(out)])
        assert code == 0 and "# gcv:" in out.read_text()

    def test_flags_after_subcommand(self, workdir, capsys):
        code, out, _ = run(["fit", "--data", data(workdir), "--format", "tsv"], capsys)
        assert code == 0 and "risk\tcovariate\testimate\tzero" in out


class TestSelect:
    def test_table(self, workdir, capsys):
        code, out, _ = run(["select", "--data", data(workdir), "--penalty", "bar", "--tau-grid", "0.1,1,10"], capsys)
        assert code == 0
        lines = out.splitlines()
        assert any(line.startswith("# tau_star:") for line in lines)
        body = [line for line in lines if not line.startswith("#")]
        assert body[0] == "tau,gcv,n_nonzero,converged,iterations" and len(body) == 4


class TestGridsearch:
    def test_table(self, workdir, capsys):
        code, out, _ = run(["gridsearch", "--data", data(workdir), "--rmax", "1", "--rstep", "0.5"], capsys)
        assert code == 0
        lines = out.splitlines()
        assert lines[0].startswith("# best: ")
        assert lines[1] == "r1,r2,loglik,converged"
        assert [tuple(line.split(",")[:2]) for line in lines[2:]] == [
            ("0.5", "0.5"), ("0.5", "1"), ("1", "0.5"), ("1", "1")]

    def test_threads_identical(self, workdir, capsys):
        argv = ["gridsearch", "--data", data(workdir), "--rmax", "1", "--rstep", "0.5"]
        _, one, _ = run(argv, capsys)
        _, two, _ = run(["--threads", "2", *argv], capsys)
        assert one == two


class TestBench:
    def test_summary(self, workdir, capsys, tmp_path):
        code, out, _ = run(["bench", "--config", str(workdir / "config.yaml"), "--reps", "1",
                            "--out", str(tmp_path)], capsys)
        assert code == 0
        assert out.splitlines()[0] == ",".join(harness.SUMMARY_FIELDS)
        assert (tmp_path / "summary.csv").read_text() == out

    def test_reps_validation(self, workdir, capsys):
        assert run(["bench", "--config", str(workdir / "config.yaml"), "--reps", "0"], capsys)[0] == 2


def test_console_entry(workdir):
    env = dict(os.environ)
    proc = subprocess.run([sys.executable, "-m", "icbar.cli", "--help"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    for name in ("simulate", "fit", "select", "gridsearch", "bench"):
        assert name in proc.stdout
