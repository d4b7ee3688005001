import filecmp
import subprocess
import sys

import numpy as np
import pytest
from scipy.integrate import trapezoid

from mixrelabel import io
from mixrelabel.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, METHODS, main

QUICK = ["--iters", "600", "--burnin", "100"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def eq7_compare(tmp_path_factory):
    out = tmp_path_factory.mktemp("eq7")
    assert run("compare", "--experiment", "eq7", "--n", 100, "--seed", 3, "--out", out,
               *QUICK) == EXIT_OK
    return out


class TestSimulate:
    def test_eq7(self, tmp_path):
        assert run("simulate", "--experiment", "eq7", "--n", 100, "--seed", 7,
                   "--out", tmp_path) == EXIT_OK
        data = io.read_dataset(tmp_path / "data.csv")
        assert data.n == 100 and data.true_spec.K == 3
        assert (tmp_path / "data.csv").read_text().splitlines()[0] == "x_1,z_true"

    def test_spatial_lattice(self, tmp_path):
        assert run("simulate", "--experiment", "spatial", "--dims", "10,10,4",
                   "--out", tmp_path) == EXIT_OK
        data = io.read_dataset(tmp_path / "data.csv")
        assert data.points.shape == (400, 3) and data.true_spec.K == 2

    @pytest.mark.parametrize("argv", [
        ["--experiment", "eq7", "--n", "0"],
        ["--experiment", "spatial", "--dims", "10,10"],
        ["--n", "10"],
        ["--experiment", "nope"],
    ])
    def test_usage_errors(self, tmp_path, argv):
        assert run("simulate", "--out", tmp_path, *argv) == EXIT_USAGE
        assert not (tmp_path / "data.csv").exists()

    def test_unwritable_output(self, tmp_path, capsys):
        blocker = tmp_path / "f"
        blocker.write_text("")
        assert run("simulate", "--experiment", "eq7", "--out", blocker / "x") == EXIT_DATA
        assert str(blocker) in capsys.readouterr().err


class TestSample:
    def test_row_count(self, tmp_path):
        assert run("sample", "--experiment", "eq7", "--n", 50, "--out", tmp_path, *QUICK) == 0
        trace = io.read_trace(tmp_path / "trace.csv")
        assert len(trace) == 500 and trace.K == 3 and trace.n == 50

    def test_same_seed_is_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            run("sample", "--experiment", "eq8", "--n", 60, "--seed", 11,
                "--out", tmp_path / sub, *QUICK)
        for name in ("trace.csv", "trace.meta"):
            assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)

    def test_galaxy_runs(self, tmp_path):
        assert run("sample", "--experiment", "galaxy", "--out", tmp_path,
                   "--iters", 300, "--burnin", 50) == EXIT_OK
        trace = io.read_trace(tmp_path / "trace.csv")
        assert trace.K == 6 and trace.n == 82

    def test_k_mismatch(self, tmp_path):
        run("simulate", "--experiment", "eq7", "--n", 30, "--out", tmp_path)
        assert run("sample", "--data", tmp_path / "data.csv", "--K", 4,
                   "--out", tmp_path, *QUICK) == EXIT_DATA
        assert run("sample", "--data", tmp_path / "data.csv", "--K", 0,
                   "--out", tmp_path, *QUICK) == EXIT_USAGE

    def test_malformed_data(self, tmp_path):
        (tmp_path / "bad.csv").write_text("x_1\n1\nfoo\n")
        (tmp_path / "bad.meta").write_text("d=1\n")
        assert run("sample", "--data", tmp_path / "bad.csv", "--K", 2,
                   "--out", tmp_path, *QUICK) == EXIT_DATA


class TestRelabelAndDiagnose:
    def test_all_methods_fan_out(self, eq7_compare):
        for name in METHODS:
            rel = io.read_trace(eq7_compare / f"relabelled_{name}.csv")
            iters, perms = io.read_permutation_log(eq7_compare / f"permutations_{name}.csv")
            assert len(perms) == 500
            assert len(rel) == 500 - int(rel.meta["excluded_count"])
            assert rel.meta["relabel_method"] == name
        assert (eq7_compare / "excluded_fs.csv").exists()

    def test_summary_has_six_rows(self, eq7_compare):
        header, rows = io.read_table(eq7_compare / "summary.csv")
        assert header[:4] == ["method", "kl", "misclassification_rate", "total_variance"]
        assert [r[0] for r in rows] == list(METHODS)
        assert all(r[header.index("kl_reference")] == "truth" for r in rows)

    def test_density_curves_integrate_to_one(self, eq7_compare):
        header, rows = io.read_table(eq7_compare / "density_curves.csv")
        table = np.array(rows, dtype=float)
        assert header[:2] == ["x", "truth"]
        for j in range(1, len(header)):
            if not np.all(np.isnan(table[:, j])):
                area = trapezoid(table[:, j], table[:, 0])
                assert area == pytest.approx(1.0, abs=1e-3), header[j]

    def test_misclassification_matrices(self, eq7_compare):
        for name in METHODS:
            _, rows = io.read_table(eq7_compare / f"misclassification_{name}.csv")
            counts = np.array([r[1:] for r in rows], dtype=float)
            assert counts.shape == (3, 3) and counts.sum() == 100

    def test_separate_diagnose_matches_compare(self, eq7_compare, tmp_path):
        assert run("diagnose", "--relabelled", eq7_compare, "--data", eq7_compare / "data.csv",
                   "--out", tmp_path) == EXIT_OK
        assert filecmp.cmp(tmp_path / "summary.csv", eq7_compare / "summary.csv", shallow=False)

    def test_diagnose_without_truth_reports_na(self, eq7_compare, tmp_path):
        assert run("diagnose", "--relabelled", eq7_compare, "--method", "marin",
                   "--out", tmp_path) == EXIT_OK
        header, rows = io.read_table(tmp_path / "summary.csv")
        assert rows[0][header.index("misclassification_rate")] == "NA"

    def test_pivot_methods_are_fixed_points(self, eq7_compare, tmp_path):
        for name in ("marin", "cron_west", "papastamoulis"):
            sub = tmp_path / name
            # same data -> same plug-in pivot as the original run
            assert run("relabel", "--trace", eq7_compare / f"relabelled_{name}.csv",
                       "--data", eq7_compare / "data.csv", "--method", name,
                       "--out", sub) == EXIT_OK
            _, perms = io.read_permutation_log(sub / f"permutations_{name}.csv")
            np.testing.assert_array_equal(perms, np.tile(np.arange(3), (len(perms), 1)))

    def test_unknown_method(self, eq7_compare, tmp_path, capsys):
        assert run("relabel", "--trace", eq7_compare / "trace.csv", "--method", "stephens",
                   "--out", tmp_path) == EXIT_USAGE
        assert "minvar" in capsys.readouterr().err

    def test_missing_trace_file(self, tmp_path):
        assert run("relabel", "--trace", tmp_path / "none.csv", "--out", tmp_path) == EXIT_DATA

    def test_galaxy_uses_map_reference(self, tmp_path):
        assert run("compare", "--experiment", "galaxy", "--method", "marin,minvar",
                   "--iters", 400, "--burnin", 100, "--out", tmp_path) == EXIT_OK
        header, rows = io.read_table(tmp_path / "summary.csv")
        assert {r[header.index("kl_reference")] for r in rows} == {"map"}
        assert {r[header.index("misclassification_rate")] for r in rows} == {"NA"}


class TestRhat:
    def test_single_chain_is_usage_error(self, tmp_path):
        assert run("rhat", "--experiment", "eq7", "--chains", 1, "--out", tmp_path) == EXIT_USAGE

    def test_divergent_chains(self, tmp_path, capsys):
        assert run("rhat", "--experiment", "eq7", "--n", 60, "--chains", 2, "--divergent",
                   "--out", tmp_path, *QUICK) == EXIT_OK
        header, rows = io.read_table(tmp_path / "rhat.csv")
        rhat = np.array([r[header.index("rhat")] for r in rows], dtype=float)
        assert np.nanmax(rhat) > 1.5
        assert "max R-hat" in capsys.readouterr().out


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mixrelabel.cli", "simulate", "--experiment",
                           "eq8", "--n", "5", "--out", str(tmp_path)], capture_output=True)
    assert proc.returncode == 0 and (tmp_path / "data.csv").exists()
    proc = subprocess.run([sys.executable, "-m", "mixrelabel.cli", "bogus"], capture_output=True)
    assert proc.returncode == 2
