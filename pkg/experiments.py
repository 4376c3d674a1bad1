"""
Command runners: dataset preparation plus one function per CLI command.

Every runner loads and validates its inputs before anything is written, then
writes its tables, optional charts and the run manifest into config.output.out.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

import plots
from datasets import (
    generate_synthetic,
    knn_impute,
    load_ratings_csv,
    subsample,
    synthetic_ground_truth,
    train_test_split,
    write_snapshot,
)
from errors import ConfigError, DataError, InsufficientDataError, NumericalError
from evaluation import (
    METRIC_COLUMNS,
    RANK_COLUMNS,
    candidate_items,
    convergence_series,
    error_curve,
    group_reference,
    metrics_frame,
    precision_recall_f1,
    rank_recovery_experiment,
    summarize_metrics,
)
from group_rec import af, aggregate_group, form_groups, gsi_svd, wbf
from mf_als import als_fit
from results import RunManifest, write_csv
from softimpute import fit_log_decay, soft_impute, soft_impute_path, tail_start
from utils import get_rng, ordered_map

logger = logging.getLogger(__name__)

ERROR_CURVE_COLUMNS = ["lambda", "nuclear_norm", "rank", "train_mse", "test_mse", "iterations", "converged"]
TRACE_COLUMNS = ["lambda", "iteration", "relative_error"]
CONVERGENCE_COLUMNS = ["iteration", "log10_relative_error"]
SNAPSHOT_NAME = "synthetic.gsi"


@dataclass(frozen=True, eq=False)
class PreparedData:
    """Observed matrix, its complete ground truth and the train/test split of the observed entries."""

    label: str
    observed: object
    truth: np.ndarray
    split: object
    train: object
    diagnostics: dict


def prepare_data(config, manifest=None):
    """
    Build the experiment matrices from config.dataset.

    Synthetic data uses the dense draws as ground truth. Rating files are
    subsampled to the most active users and items and KNN-imputed to form
    the ground truth.
    """
    dataset = config.dataset
    diagnostics = {"dataset": dataset.label}
    if dataset.kind == "synthetic":
        observed = generate_synthetic(dataset.synthetic)
        truth = synthetic_ground_truth(dataset.synthetic)
    else:
        table = load_ratings_csv(dataset.path, dataset.schema())
        if len(table) == 0:
            raise DataError(f"{dataset.path} holds no valid ratings")
        diagnostics.update(rejected_rows=table.rejected, malformed_rows=table.malformed)
        users, items = dataset.targets()
        observed = subsample(
            table,
            users if users is not None else len(table.users),
            items if items is not None else len(table.items),
            dataset.rule,
        )
        truth = knn_impute(observed, dataset.knn_k)
    split = train_test_split(observed.mask, config.split.fraction, config.split.seed)
    train = observed.restrict(split.omega_train)
    diagnostics.update(
        users=observed.m,
        items=observed.n,
        observed=observed.num_observed,
        sparsity=observed.sparsity,
        train_entries=split.train_size,
        test_entries=split.test_size,
    )
    if manifest is not None:
        manifest.diagnostics["data"] = diagnostics
    return PreparedData(dataset.label, observed, truth, split, train, diagnostics)


def _out_dir(config):
    return Path(config.output.out)


def _finish(manifest, out_dir):
    manifest.save(out_dir)
    logger.info(f"Results written to {out_dir}")
    return manifest


def run_complete(config):
    """
    Soft-impute path on the training entries; train/test error at every grid point.

    Grid points whose SVD failed are listed after the solved ones with empty
    error columns.
    """
    manifest = RunManifest("complete", config.to_dict())
    with manifest.stage("prepare"):
        data = prepare_data(config, manifest)
    with manifest.stage("soft_impute_path"):
        path = soft_impute_path(data.train, config.softimpute)
    with manifest.stage("evaluate"):
        reports = error_curve(path, data.truth, data.split)
    traces = {trace.lam: trace for trace in path.traces}
    curve = pd.DataFrame(
        [
            {
                "lambda": report.lam,
                "nuclear_norm": report.nuclear_norm,
                "rank": report.rank,
                "train_mse": report.train_mse,
                "test_mse": report.test_mse,
                "iterations": traces[report.lam].iterations,
                "converged": traces[report.lam].converged,
            }
            for report in reports
        ]
        + [
            {"lambda": trace.lam, "iterations": trace.iterations, "converged": False}
            for trace in path.traces
            if trace.failed
        ],
        columns=ERROR_CURVE_COLUMNS,
    )
    trace_rows = pd.DataFrame(
        [
            {"lambda": trace.lam, "iteration": iteration, "relative_error": error}
            for trace in path.traces
            for iteration, error in enumerate(trace.relative_errors)
        ],
        columns=TRACE_COLUMNS,
    )
    manifest.diagnostics["gsi"] = {
        "lambdas": list(path.lambdas),
        "total_iterations": path.total_iterations,
        "converged_points": sum(trace.converged for trace in path.traces),
        "failed_lambdas": path.failed_lambdas,
        "final_lambda": path.lambdas[path.final_index()],
    }

    out_dir = _out_dir(config)
    manifest.outputs.append(write_csv(curve, out_dir / "error_curve.csv").name)
    manifest.outputs.append(write_csv(trace_rows, out_dir / "path_traces.csv").name)
    if config.output.emit_svg:
        manifest.outputs.append(plots.plot_error_curve(curve, out_dir / "error_curve.svg").name)
    return _finish(manifest, out_dir)


def _predict_group(data, g, method, config, af_factors):
    """(predicted ratings, lambda) of one method for one group."""
    train = data.train
    divisor = config.groups.mean_divisor
    if method == "gsi":
        result = gsi_svd(train, g, config.softimpute, divisor)
        return result.group_ratings, result.path.lambdas[result.final_index]
    if method == "wbf":
        scores, _ = wbf(train, g, aggregate_group(train, g, divisor), config.als)
        return scores, config.als.reg_lambda
    if af_factors is None:
        raise NumericalError("ALS factors for the af baseline are unavailable")
    scores, _ = af(train, g, config.aggregation, config.als, factors=af_factors)
    return scores, config.als.reg_lambda


def _group_rows(data, g, config, af_factors):
    """
    Metric rows of every method and list size for one group.

    A method that fails numerically, or a list size larger than the group's
    candidate set, gives a row with empty metrics instead of stopping the run.
    """
    reference = group_reference(data.truth, g)
    candidates = candidate_items(data.split.omega_train, g, config.metrics.candidates)
    rows = []
    for method in config.methods:
        try:
            scores, lam = _predict_group(data, g, method, config, af_factors)
        except NumericalError as exc:
            logger.warning(f"{method} failed for group {g.id}: {exc}")
            scores, lam = None, None
        for k in config.metrics.k:
            row = {
                "dataset": data.label,
                "method": method,
                "group_id": g.id,
                "group_size": g.size,
                "k": k,
                "tau": config.metrics.tau,
                "lambda": lam,
                "seed": config.groups.seed,
            }
            if scores is not None:
                try:
                    metrics = precision_recall_f1(
                        reference, scores, k, config.metrics.tau, candidates, g.id, method
                    )
                except ConfigError as exc:
                    logger.warning(f"no {method} metrics at k={k} for group {g.id}: {exc}")
                else:
                    row.update(
                        precision=metrics.precision,
                        recall=metrics.recall,
                        f1=metrics.f1,
                        tp=metrics.tp,
                        fp=metrics.fp,
                        fn=metrics.fn,
                    )
            rows.append(row)
    logger.info(f"Evaluated group {g.id}")
    return rows


def run_group_rec(config):
    """
    Precision/recall/F1 at k of every method for every group instance.

    Rows a method could not score keep their keys with empty metrics; the
    manifest counts them under absent_rows.
    """
    manifest = RunManifest("group-rec", config.to_dict())
    with manifest.stage("prepare"):
        data = prepare_data(config, manifest)
        groups = [
            g
            for size in config.groups.sizes
            for g in form_groups(data.observed.m, size, config.groups.instances, config.groups.seed)
        ]
    if max(config.metrics.k) > data.observed.n:
        raise ConfigError(f"metrics.k = {max(config.metrics.k)} exceeds the {data.observed.n} items")
    af_factors = None
    if "af" in config.methods:
        try:
            with manifest.stage("als_fit"):
                af_factors, trace = als_fit(data.train, config.als)
        except NumericalError as exc:
            logger.warning(f"ALS fit for the af baseline failed: {exc}")
            manifest.diagnostics["af"] = {"failed": True}
        else:
            manifest.diagnostics["af"] = {
                "sweeps": trace.sweeps,
                "converged": trace.converged,
                "final_objective": trace.final_objective,
                "singular_warning": trace.singular_warning,
            }
    with manifest.stage("evaluate"):
        per_group = ordered_map(
            lambda g: _group_rows(data, g, config, af_factors), groups, config.output.threads
        )
    frame = metrics_frame(row for rows in per_group for row in rows)
    summary = summarize_metrics(frame)
    manifest.diagnostics["groups"] = len(groups)
    manifest.diagnostics["absent_rows"] = int(frame["f1"].isna().sum())

    out_dir = _out_dir(config)
    manifest.outputs.append(write_csv(frame, out_dir / "group_metrics.csv", METRIC_COLUMNS).name)
    manifest.outputs.append(write_csv(summary, out_dir / "group_summary.csv").name)
    if config.output.emit_svg:
        manifest.outputs.append(plots.plot_group_metrics(summary, out_dir / "group_metrics.svg").name)
    return _finish(manifest, out_dir)


def run_rank_table(config):
    """Recovered rank of each method's completed matrix across the lambda list."""
    manifest = RunManifest("rank-table", config.to_dict())
    with manifest.stage("prepare"):
        data = prepare_data(config, manifest)
        g = form_groups(data.observed.m, config.rank_table.group_size, 1, config.groups.seed)[0]
    with manifest.stage("rank_recovery"):
        table = rank_recovery_experiment(
            {data.label: (data.observed, g)},
            config.methods,
            config.rank_table.lambdas,
            config.softimpute,
            config.als,
            af_kind=config.aggregation,
            mean_divisor=config.groups.mean_divisor,
            threads=config.output.threads,
        )
    frame = table.to_frame()
    manifest.diagnostics["failed_cells"] = int(frame["rank"].isna().sum())

    out_dir = _out_dir(config)
    manifest.outputs.append(write_csv(frame, out_dir / "rank_table.csv", RANK_COLUMNS).name)
    if config.output.emit_svg:
        manifest.outputs.append(plots.plot_rank_table(frame, out_dir / "rank_table.svg").name)
    return _finish(manifest, out_dir)


def run_convergence(config):
    """
    One soft-impute run from the seeded random start; log10 relative error per iteration.

    The decay line in the manifest is fitted over the tail half of the trace.
    """
    manifest = RunManifest("convergence", config.to_dict())
    solver = config.softimpute
    with manifest.stage("prepare"):
        data = prepare_data(config, manifest)
    lam = config.convergence_lambda
    z_init = solver.init_scale * get_rng(solver.seed).standard_normal(data.train.shape)
    with manifest.stage("soft_impute"):
        solution, trace = soft_impute(data.train, lam, z_init, solver)
    series = convergence_series(trace)
    diagnostics = {
        "lambda": lam,
        "iterations": trace.iterations,
        "converged": trace.converged,
        "rank": solution.rank,
        "zero_errors": series.zero_errors,
        "rho": trace.estimated_rho,
        "slope": None,
        "intercept": None,
        "r2": None,
        "fit_start": tail_start(trace.iterations),
    }
    try:
        fit = fit_log_decay(trace.relative_errors, skip=diagnostics["fit_start"])
        diagnostics.update(slope=fit.slope, intercept=fit.intercept, r2=fit.r2)
    except InsufficientDataError as exc:
        logger.warning(f"No decay fit: {exc}")
    manifest.diagnostics["convergence"] = diagnostics
    frame = pd.DataFrame(list(series.points), columns=CONVERGENCE_COLUMNS)

    out_dir = _out_dir(config)
    manifest.outputs.append(write_csv(frame, out_dir / "convergence.csv").name)
    if config.output.emit_svg:
        manifest.outputs.append(plots.plot_convergence(frame, out_dir / "convergence.svg").name)
    return _finish(manifest, out_dir)


def run_synth(config):
    """Write the configured synthetic matrix as a snapshot file."""
    manifest = RunManifest("synth", config.to_dict())
    with manifest.stage("generate"):
        matrix = generate_synthetic(config.dataset.synthetic)
    manifest.diagnostics["data"] = {
        "users": matrix.m,
        "items": matrix.n,
        "observed": matrix.num_observed,
        "sparsity": matrix.sparsity,
    }
    out_dir = _out_dir(config)
    write_snapshot(matrix, out_dir / SNAPSHOT_NAME)
    manifest.outputs.append(SNAPSHOT_NAME)
    return _finish(manifest, out_dir)


COMMANDS = {
    "complete": run_complete,
    "group-rec": run_group_rec,
    "rank-table": run_rank_table,
    "convergence": run_convergence,
    "synth": run_synth,
}
