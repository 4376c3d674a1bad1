import numpy as np
import pandas as pd
import pytest

from cli import main
from datasets import read_snapshot
from results import load_manifest

SMALL = [
    "--set", "dataset.synthetic.users=60",
    "--set", "dataset.synthetic.items=30",
    "--set", "dataset.synthetic.observed_fraction=0.5",
    "--set", "als.rank=3",
    "--set", "metrics.k=5",
    "--set", "softimpute.max_iters=200",
]


def run(command, out, *extra):
    return main([command, "--out", str(out), "--seed", "11", "-q", *SMALL, *extra])


class TestComplete:
    def test_error_curve_has_one_row_per_grid_point(self, tmp_path):
        assert run("complete", tmp_path) == 0
        curve = pd.read_csv(tmp_path / "error_curve.csv")
        assert len(curve) == 10
        assert list(curve.columns) == [
            "lambda", "nuclear_norm", "rank", "train_mse", "test_mse", "iterations", "converged",
        ]
        assert curve["nuclear_norm"].is_monotonic_increasing
        manifest = load_manifest(tmp_path)
        assert manifest["command"] == "complete"
        assert manifest["config"]["split"]["seed"] == 11
        assert "error_curve.csv" in manifest["outputs"]

    def test_rerun_is_byte_identical(self, tmp_path):
        assert run("complete", tmp_path / "a") == 0
        assert run("complete", tmp_path / "b") == 0
        for name in ("error_curve.csv", "path_traces.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_failed_grid_point_is_recorded(self, tmp_path, failing_soft_impute):
        failing_soft_impute({5})
        assert run("complete", tmp_path) == 0
        curve = pd.read_csv(tmp_path / "error_curve.csv")
        assert len(curve) == 10
        failed = curve[curve["train_mse"].isna()]
        assert len(failed) == 1
        assert not failed["converged"].iloc[0]
        assert len(load_manifest(tmp_path)["diagnostics"]["gsi"]["failed_lambdas"]) == 1

    def test_every_grid_point_failing(self, tmp_path, failing_soft_impute):
        failing_soft_impute(set(range(1, 11)))
        assert run("complete", tmp_path / "out") == 4
        assert not (tmp_path / "out").exists()

    def test_svg_output(self, tmp_path):
        assert run("complete", tmp_path, "--emit-svg") == 0
        assert "<svg" in (tmp_path / "error_curve.svg").read_text()

    def test_missing_dataset_path(self, tmp_path):
        out = tmp_path / "out"
        code = run(
            "complete", out, "--set", "dataset.kind=movielens", "--set", f"dataset.path={tmp_path / 'u.data'}"
        )
        assert code == 3
        assert not out.exists()

    def test_unknown_config_key(self, tmp_path):
        assert run("complete", tmp_path / "out", "--set", "softimpute.epsilom=1") == 2
        assert not (tmp_path / "out").exists()

    def test_ratings_file(self, tmp_path):
        rng = np.random.default_rng(0)
        lines = [
            f"{user}\t{item}\t{rng.integers(1, 6)}\t0"
            for user in range(1, 31)
            for item in range(1, 21)
            if rng.random() < 0.5
        ]
        path = tmp_path / "u.data"
        path.write_text("\n".join(lines) + "\n")
        code = run(
            "complete", tmp_path / "out",
            "--set", "dataset.kind=movielens",
            "--set", f"dataset.path={path}",
            "--set", "softimpute.lambda_min=0.5",
        )
        assert code == 0
        manifest = load_manifest(tmp_path / "out")
        assert manifest["diagnostics"]["data"]["users"] == 30
        assert manifest["diagnostics"]["data"]["items"] == 20


class TestGroupRec:
    def test_row_count(self, tmp_path):
        code = run(
            "group-rec", tmp_path,
            "--set", "groups.sizes=[5, 25]",
            "--set", "groups.instances=2",
            "--threads", "2",
        )
        assert code == 0
        frame = pd.read_csv(tmp_path / "group_metrics.csv")
        assert len(frame) == 12
        assert list(frame.columns) == [
            "dataset", "method", "group_id", "group_size", "k", "tau", "lambda",
            "precision", "recall", "f1", "tp", "fp", "fn", "seed",
        ]
        assert set(frame["method"]) == {"gsi", "wbf", "af"}
        summary = pd.read_csv(tmp_path / "group_summary.csv")
        assert len(summary) == 6

    def test_singleton_groups(self, tmp_path):
        code = run("group-rec", tmp_path, "--set", "groups.sizes=[1]", "--set", "groups.instances=2")
        assert code == 0
        frame = pd.read_csv(tmp_path / "group_metrics.csv")
        assert np.isfinite(frame[["precision", "f1"]].to_numpy()).all()

    def test_rerun_is_byte_identical(self, tmp_path):
        extra = ["--set", "groups.sizes=[5]", "--set", "groups.instances=2"]
        assert run("group-rec", tmp_path / "a", *extra) == 0
        assert run("group-rec", tmp_path / "b", *extra, "--threads", "3") == 0
        name = "group_metrics.csv"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_too_few_candidates_leaves_rows_empty(self, tmp_path):
        code = run(
            "group-rec", tmp_path,
            "--set", "dataset.synthetic.observed_fraction=1.0",
            "--set", "groups.sizes=[1, 25]",
            "--set", "groups.instances=2",
            "--set", "metrics.k=20",
        )
        assert code == 0
        frame = pd.read_csv(tmp_path / "group_metrics.csv")
        assert len(frame) == 12
        singles = frame[frame["group_size"] == 1]
        assert singles["f1"].isna().all()
        assert singles["group_id"].notna().all()
        assert np.isfinite(frame.loc[frame["group_size"] == 25, "precision"]).all()
        assert load_manifest(tmp_path)["diagnostics"]["absent_rows"] == 6

    def test_failed_method_leaves_its_rows_empty(self, tmp_path, failing_soft_impute):
        failing_soft_impute(set(range(1, 11)))
        code = run("group-rec", tmp_path, "--set", "groups.sizes=[5]", "--set", "groups.instances=2")
        assert code == 0
        frame = pd.read_csv(tmp_path / "group_metrics.csv")
        absent = frame[frame["f1"].isna()]
        assert len(absent) == 1
        assert absent["method"].iloc[0] == "gsi"
        assert absent["lambda"].isna().all()
        assert frame["f1"].notna().sum() == 5

    @pytest.mark.slow
    def test_f1_by_method_on_synthetic_groups(self, tmp_path):
        code = main([
            "group-rec", "--out", str(tmp_path), "-q", "--threads", "4",
            "--set", "dataset.synthetic.users=500",
            "--set", "dataset.synthetic.items=100",
            "--set", "groups.sizes=[5, 10, 15, 20, 25]",
            "--set", "groups.instances=10",
            "--set", "metrics.k=[5, 20]",
        ])
        assert code == 0
        frame = pd.read_csv(tmp_path / "group_metrics.csv")
        assert frame["f1"].notna().all()
        means = frame.groupby(["method", "k"])[["f1", "recall"]].mean()
        assert means.loc[("gsi", 20), "f1"] >= means.loc[("af", 20), "f1"] - 0.02
        assert means.loc[("gsi", 5), "recall"] >= means.loc[("wbf", 5), "recall"] - 0.05


class TestRankTable:
    def test_five_rows_per_method(self, tmp_path):
        assert run("rank-table", tmp_path) == 0
        frame = pd.read_csv(tmp_path / "rank_table.csv")
        assert len(frame) == 15
        assert frame.groupby("method").size().to_dict() == {"af": 5, "gsi": 5, "wbf": 5}

    def test_rerun_is_byte_identical(self, tmp_path):
        assert run("rank-table", tmp_path / "a") == 0
        assert run("rank-table", tmp_path / "b", "--threads", "3") == 0
        name = "rank_table.csv"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_empty_method_list(self, tmp_path):
        assert run("rank-table", tmp_path / "out", "--set", "methods=[]") == 2


class TestConvergence:
    def test_single_iteration(self, tmp_path):
        assert run("convergence", tmp_path, "--set", "softimpute.max_iters=1") == 0
        series = pd.read_csv(tmp_path / "convergence.csv")
        assert len(series) == 1
        diagnostics = load_manifest(tmp_path)["diagnostics"]["convergence"]
        assert diagnostics["converged"] is False
        assert diagnostics["slope"] is None

    def test_series_decays(self, tmp_path):
        assert run("convergence", tmp_path) == 0
        diagnostics = load_manifest(tmp_path)["diagnostics"]["convergence"]
        assert diagnostics["slope"] < 0

    @pytest.mark.slow
    def test_log_linear_decay_on_default_synthetic(self, tmp_path):
        code = main([
            "convergence", "--out", str(tmp_path), "-q",
            "--set", "softimpute.epsilon=1e-6",
            "--set", "softimpute.max_iters=1000",
        ])
        assert code == 0
        diagnostics = load_manifest(tmp_path)["diagnostics"]["convergence"]
        assert diagnostics["converged"] is True
        assert diagnostics["slope"] < 0
        assert diagnostics["r2"] >= 0.9


class TestSynth:
    def test_snapshot(self, tmp_path):
        code = main([
            "synth", "--out", str(tmp_path), "-q",
            "--set", "dataset.synthetic.users=30", "--set", "dataset.synthetic.items=10",
        ])
        assert code == 0
        matrix = read_snapshot(tmp_path / "synthetic.gsi")
        assert matrix.shape == (30, 10)
        assert load_manifest(tmp_path)["outputs"] == ["synthetic.gsi"]


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["train"])
