"""Command-line surface tests: every command end to end, plus exit codes."""

import json

import numpy as np
import pytest

from bllim import serialize
from bllim.cli import main


def run(args):
    return main([str(a) for a in args])


@pytest.fixture
def plan_a_dir(tmp_path):
    out = tmp_path / "sim"
    assert run(["simulate", "plan-a", "--n", 300, "--clusters", 2,
                "--dim", 10, "--response-dim", 1, "--seed", 3,
                "--out", out]) == 0
    return out


class TestSimulate:
    def test_plan_a_files_and_dimensions(self, tmp_path):
        out = tmp_path / "a"
        assert run(["simulate", "plan-a", "--n", 80, "--dim", 100,
                    "--seed", 7, "--out", out]) == 0
        x, xcols = serialize.read_matrix_csv(str(out / "X.csv"))
        y, ycols = serialize.read_matrix_csv(str(out / "Y.csv"))
        assert x.shape == (80, 100) and y.shape == (80, 2)
        assert xcols[0] == "x1" and ycols == ["y1", "y2"]
        truth = json.loads((out / "truth.json").read_text())
        assert truth["covariate_dim"] == 100
        assert "snr" in truth

    def test_manifold_files_and_dimensions(self, tmp_path):
        out = tmp_path / "m"
        assert run(["simulate", "manifold", "--fn", "f", "--cov", "identity",
                    "--seed", 1, "--out", out]) == 0
        x, _ = serialize.read_matrix_csv(str(out / "X.csv"))
        y, _ = serialize.read_matrix_csv(str(out / "Y.csv"))
        assert x.shape == (200, 50) and y.shape == (200, 1)
        truth = json.loads((out / "truth.json").read_text())
        assert truth["covariance"] == "identity"

    def test_same_flags_same_files(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(["simulate", "manifold", "--n", 30, "--dim", 8,
                        "--seed", 5, "--out", out]) == 0
        assert (a / "X.csv").read_bytes() == (b / "X.csv").read_bytes()
        assert (a / "truth.json").read_bytes() == (b / "truth.json").read_bytes()


class TestFitPredict:
    def test_fit_writes_model_and_report(self, plan_a_dir, tmp_path):
        out = tmp_path / "fit"
        assert run(["fit", "--x", plan_a_dir / "X.csv",
                    "--y", plan_a_dir / "Y.csv", "--out", out,
                    "--k-range", "1:2", "--seed", 3]) == 0
        theta, report = serialize.load_model(str(out / "model.json"))
        assert theta.covariate_dim == 10
        assert report is not None and "candidates" in report
        assert (out / "report.json").exists()

    def test_k1_fit_matches_ols_oracle(self, tmp_path, rng):
        n, d = 150, 4
        y = rng.standard_normal((n, 1))
        x = y @ rng.standard_normal((1, d)) + rng.standard_normal(d) \
            + 0.3 * rng.standard_normal((n, d))
        serialize.write_matrix_csv(str(tmp_path / "X.csv"), x,
                                   [f"x{i}" for i in range(d)])
        serialize.write_matrix_csv(str(tmp_path / "Y.csv"), y, ["y"])
        out = tmp_path / "fit"
        assert run(["fit", "--x", tmp_path / "X.csv", "--y", tmp_path / "Y.csv",
                    "--out", out, "--k-range", "1", "--seed", 0]) == 0
        theta, _ = serialize.load_model(str(out / "model.json"))
        design = np.hstack([y, np.ones((n, 1))])
        coef = np.linalg.lstsq(design, x, rcond=None)[0]
        np.testing.assert_allclose(theta.coeffs[0], coef[:-1].T, atol=1e-6)
        np.testing.assert_allclose(theta.intercepts[0], coef[-1], atol=1e-6)

    def test_fit_deterministic_byte_identical(self, plan_a_dir, tmp_path):
        outs = []
        for name in ("f1", "f2"):
            out = tmp_path / name
            assert run(["fit", "--x", plan_a_dir / "X.csv",
                        "--y", plan_a_dir / "Y.csv", "--out", out,
                        "--k-range", "2", "--seed", 11]) == 0
            outs.append((out / "model.json").read_bytes())
        assert outs[0] == outs[1]

    def test_mismatched_rows_exit_2(self, plan_a_dir, tmp_path):
        x, _ = serialize.read_matrix_csv(str(plan_a_dir / "X.csv"))
        serialize.write_matrix_csv(str(tmp_path / "short.csv"), x[:-5],
                                   [f"x{i}" for i in range(x.shape[1])])
        code = run(["fit", "--x", tmp_path / "short.csv",
                    "--y", plan_a_dir / "Y.csv", "--out", tmp_path / "o"])
        assert code == 2

    def test_predict_affine_for_k1(self, tmp_path, rng):
        n, d = 100, 3
        y = rng.standard_normal((n, 1))
        x = y @ rng.standard_normal((1, d)) + 0.2 * rng.standard_normal((n, d))
        serialize.write_matrix_csv(str(tmp_path / "X.csv"), x, ["a", "b", "c"])
        serialize.write_matrix_csv(str(tmp_path / "Y.csv"), y, ["y"])
        out = tmp_path / "fit"
        assert run(["fit", "--x", tmp_path / "X.csv", "--y", tmp_path / "Y.csv",
                    "--out", out, "--k-range", "1", "--seed", 0]) == 0
        assert run(["predict", "--model", out / "model.json",
                    "--x", tmp_path / "X.csv",
                    "--out", tmp_path / "pred.csv"]) == 0
        preds, cols = serialize.read_matrix_csv(str(tmp_path / "pred.csv"))
        assert cols == ["y1"]
        theta, _ = serialize.load_model(str(out / "model.json"))
        from bllim import forward_from_inverse
        star = forward_from_inverse(theta)
        expected = x @ star.coeffs[0].T + star.intercepts[0]
        np.testing.assert_allclose(preds, expected, atol=1e-10)

    def test_predict_weights_sum_to_one(self, plan_a_dir, tmp_path):
        out = tmp_path / "fit"
        assert run(["fit", "--x", plan_a_dir / "X.csv",
                    "--y", plan_a_dir / "Y.csv", "--out", out,
                    "--k-range", "2", "--seed", 3]) == 0
        assert run(["predict", "--model", out / "model.json",
                    "--x", plan_a_dir / "X.csv",
                    "--out", tmp_path / "pred.csv", "--weights"]) == 0
        preds, cols = serialize.read_matrix_csv(str(tmp_path / "pred.csv"))
        assert cols == ["y1", "w1", "w2"]
        np.testing.assert_allclose(preds[:, 1:].sum(axis=1), 1.0, atol=1e-10)

    def test_predict_dimension_mismatch_exit_2(self, plan_a_dir, tmp_path):
        out = tmp_path / "fit"
        run(["fit", "--x", plan_a_dir / "X.csv", "--y", plan_a_dir / "Y.csv",
             "--out", out, "--k-range", "1", "--seed", 3])
        code = run(["predict", "--model", out / "model.json",
                    "--x", plan_a_dir / "Y.csv", "--out", tmp_path / "p.csv"])
        assert code == 2


class TestCv:
    def test_stats_file_contents(self, plan_a_dir, tmp_path):
        stats_path = tmp_path / "cv.json"
        assert run(["cv", "--x", plan_a_dir / "X.csv",
                    "--y", plan_a_dir / "Y.csv", "--out", stats_path,
                    "--folds", 5, "--reps", 2, "--k-range", "1",
                    "--seed", 3]) == 0
        stats = json.loads(stats_path.read_text())
        assert stats["evaluations"] + stats["failures"] == 10
        assert len(stats["mean"]) == 1 and len(stats["sd"]) == 1


class TestBench:
    def test_single_replicate_records(self, tmp_path):
        out = tmp_path / "bench"
        assert run(["bench", "--table", "table2", "--replicates", 1,
                    "--n", 120, "--test-n", 60, "--dim", 12,
                    "--fn", "f", "--cov", "identity",
                    "--k-range", "1:2", "--seed", 2, "--out", out]) == 0
        records = (out / "records.csv").read_text().strip().splitlines()
        assert records[0] == "replicate,method,response,rmse"
        assert len(records) == 3  # header + bllim + gllim (one response each)
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["methods"]) == {"bllim", "gllim"}


class TestExportNetwork:
    def test_edge_count_matches_combinatorics(self, plan_a_dir, tmp_path):
        out = tmp_path / "fit"
        assert run(["fit", "--x", plan_a_dir / "X.csv",
                    "--y", plan_a_dir / "Y.csv", "--out", out,
                    "--k-range", "2", "--seed", 3]) == 0
        theta, _ = serialize.load_model(str(out / "model.json"))
        for cluster in (1, 2):
            net = tmp_path / f"net{cluster}.tsv"
            assert run(["export-network", "--model", out / "model.json",
                        "--cluster", cluster, "--out", net]) == 0
            text = net.read_text().splitlines()
            edge_rows = [l for l in text[1:] if l and not l.startswith("#")
                         and "\t" in l]
            isolated = [l for l in text[text.index("# isolated") + 1:] if l]
            groups = theta.structure.groups[cluster - 1]
            expected_edges = sum(len(g) * (len(g) - 1) // 2
                                 for g in groups if len(g) > 1)
            expected_isolated = sum(1 for g in groups if len(g) == 1)
            assert len(edge_rows) == expected_edges
            assert len(isolated) == expected_isolated

    def test_invalid_cluster_index(self, plan_a_dir, tmp_path):
        out = tmp_path / "fit"
        run(["fit", "--x", plan_a_dir / "X.csv", "--y", plan_a_dir / "Y.csv",
             "--out", out, "--k-range", "1", "--seed", 3])
        code = run(["export-network", "--model", out / "model.json",
                    "--cluster", 9, "--out", tmp_path / "net.tsv"])
        assert code == 2


class TestExitCodes:
    def test_usage_error_is_1(self):
        assert run(["no-such-command"]) == 1
        assert run(["fit"]) == 1  # missing required flags

    def test_missing_file_is_2(self, tmp_path):
        assert run(["fit", "--x", tmp_path / "nope.csv",
                    "--y", tmp_path / "nope.csv", "--out", tmp_path]) == 2

    def test_seed_env_fallback(self, plan_a_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("BLLIM_SEED", "3")
        out_env = tmp_path / "env"
        assert run(["fit", "--x", plan_a_dir / "X.csv",
                    "--y", plan_a_dir / "Y.csv", "--out", out_env,
                    "--k-range", "2"]) == 0
        out_flag = tmp_path / "flag"
        assert run(["fit", "--x", plan_a_dir / "X.csv",
                    "--y", plan_a_dir / "Y.csv", "--out", out_flag,
                    "--k-range", "2", "--seed", 3]) == 0
        assert (out_env / "model.json").read_bytes() == \
            (out_flag / "model.json").read_bytes()
