"""
Metrics and experiment tables: train/test MSE, top-k precision/recall/F1 for
group recommendations, recovered-rank tables, error-vs-nuclear-norm curves and
log relative-error series.
"""
import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from errors import ConfigError, GsiError, InsufficientDataError
from group_rec import AggregationKind, af, aggregate_group, gsi_complete_at, wbf
from linalg_core import RANK_REL_TOL, ThresholdedMatrix, nuclear_norm, numerical_rank
from mf_als import als_fit, predict
from utils import ordered_map

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "dataset", "method", "group_id", "group_size", "k", "tau", "lambda",
    "precision", "recall", "f1", "tp", "fp", "fn", "seed",
]
RANK_COLUMNS = ["dataset", "method", "lambda", "rank", "factor_rank"]
RANK_METHODS = ("gsi", "wbf", "af")
CANDIDATE_MODES = ("unseen", "all")


@dataclass(frozen=True)
class ErrorReport:
    train_mse: float | None
    test_mse: float | None
    nuclear_norm: float
    lam: float | None
    rank: int


@dataclass(frozen=True)
class MetricsAtK:
    precision: float
    recall: float | None
    f1: float
    k: int
    tau: float
    tp: int
    fp: int
    fn: int
    group_id: str = ""
    method: str = ""


@dataclass(frozen=True)
class RankCell:
    dataset: str
    method: str
    lam: float
    rank: int | None
    factor_rank: int | None = None


@dataclass(frozen=True)
class RankTable:
    cells: tuple

    def to_frame(self):
        rows = [
            {"dataset": c.dataset, "method": c.method, "lambda": c.lam, "rank": c.rank, "factor_rank": c.factor_rank}
            for c in self.cells
        ]
        frame = pd.DataFrame(rows, columns=RANK_COLUMNS)
        return frame.astype({"rank": "Int64", "factor_rank": "Int64"})

    def ranks(self, dataset, method):
        """Ranks for one (dataset, method) in lambda order."""
        cells = sorted((c for c in self.cells if c.dataset == dataset and c.method == method), key=lambda c: c.lam)
        return [c.rank for c in cells]


@dataclass(frozen=True)
class ConvergenceSeries:
    points: tuple
    zero_errors: int


def _mse(squared, mask):
    selected = squared[mask]
    return float(selected.mean()) if selected.size else None


def train_test_error(x_truth, z, split, lam=None, rank_tol=RANK_REL_TOL):
    """
    Mean squared error of z against the ground truth over the train and test sets.

    Args:
        x_truth: complete ground-truth matrix (array or RatingMatrix values)
        z: completed matrix, or a ThresholdedMatrix (its rank and nuclear norm are reused)
        split: SplitMask
        lam: regularization value recorded in the report

    Returns:
        ErrorReport; an empty set gives None for its MSE
    """
    truth = np.asarray(getattr(x_truth, "values", x_truth), dtype=float)
    if isinstance(z, ThresholdedMatrix):
        estimate, norm, rank = z.z, z.nuclear_norm, z.rank
    else:
        estimate = np.asarray(z, dtype=float)
        norm, rank = nuclear_norm(estimate), numerical_rank(estimate, rank_tol)
    if truth.shape != estimate.shape:
        raise ConfigError(f"truth shape {truth.shape} does not match estimate shape {estimate.shape}")
    squared = (truth - estimate) ** 2
    return ErrorReport(
        train_mse=_mse(squared, split.omega_train),
        test_mse=_mse(squared, split.omega_test),
        nuclear_norm=float(norm),
        lam=lam,
        rank=int(rank),
    )


def group_reference(x_truth, g):
    """Mean of the members' ground-truth rows (divisor |G|)."""
    truth = np.asarray(getattr(x_truth, "values", x_truth), dtype=float)
    return truth[list(g.members)].mean(axis=0)


def group_prediction_aggregate(z, g):
    """Mean of the members' rows of a completed matrix."""
    return np.asarray(z, dtype=float)[list(g.members)].mean(axis=0)


def candidate_items(train_mask, g, mode="unseen"):
    """
    Items eligible for recommendation.

    "unseen" drops items every member already rated in training; "all" keeps every item.
    """
    if mode not in CANDIDATE_MODES:
        raise ConfigError(f"candidate mode must be one of {CANDIDATE_MODES}, got {mode!r}")
    train_mask = np.asarray(train_mask, dtype=bool)
    if mode == "all":
        return np.ones(train_mask.shape[1], dtype=bool)
    return ~np.all(train_mask[list(g.members)], axis=0)


def precision_recall_f1(reference, predicted, k, tau, candidates=None, group_id="", method=""):
    """
    Top-k precision, recall and F1 against a reference rating vector.

    The k best-predicted candidates are recommended (ties to the lower item
    index); a candidate is relevant when its reference rating is at least tau.
    Recall is None when no candidate is relevant.

    Relevance is counted over the candidates only, so items outside the
    candidate set never count as false negatives. Passing no candidates (or
    the "all" candidate mode) counts relevance over every item.
    """
    reference = np.asarray(reference, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if reference.shape != predicted.shape:
        raise ConfigError("reference and predicted vectors differ in length")
    if candidates is None:
        candidates = np.ones(reference.size, dtype=bool)
    candidates = np.asarray(candidates)
    if candidates.dtype != bool:
        mask = np.zeros(reference.size, dtype=bool)
        mask[candidates.astype(int)] = True
        candidates = mask
    pool = np.flatnonzero(candidates)
    if pool.size == 0:
        raise ConfigError("candidate set is empty")
    if not 1 <= k <= pool.size:
        raise ConfigError(f"k must be between 1 and {pool.size} candidates, got {k}")

    order = np.lexsort((pool, -predicted[pool]))
    recommended = pool[order[:k]]
    relevant = candidates & (reference >= tau)
    tp = int(np.count_nonzero(relevant[recommended]))
    fp = k - tp
    n_relevant = int(np.count_nonzero(relevant))
    fn = n_relevant - tp
    precision = tp / k
    recall = tp / n_relevant if n_relevant else None
    if recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    return MetricsAtK(
        precision=precision, recall=recall, f1=f1, k=k, tau=tau,
        tp=tp, fp=fp, fn=fn, group_id=group_id, method=method,
    )


def _rank_cell(name, x, g, method, lam, softimpute_config, als_config, af_kind, mean_divisor):
    tol = softimpute_config.rank_tolerance
    if method == "gsi":
        solution, _ = gsi_complete_at(x, g, lam, softimpute_config, mean_divisor)
        return RankCell(name, method, lam, solution.rank)
    config = replace(als_config, reg_lambda=lam)
    if method == "wbf":
        _, factors = wbf(x, g, aggregate_group(x, g, mean_divisor), config)
        return RankCell(name, method, lam, numerical_rank(predict(factors), tol), factors.rank)
    factors, _ = als_fit(x, config)
    group_row, _ = af(x, g, af_kind, config, factors=factors)
    completed = np.vstack([predict(factors), group_row])
    return RankCell(name, method, lam, numerical_rank(completed, tol), factors.rank)


def rank_recovery_experiment(datasets, methods, lambda_list, softimpute_config, als_config,
                             af_kind=AggregationKind.AVERAGE, mean_divisor="raters", threads=1):
    """
    Recovered rank of every method's completed matrix at every lambda.

    Args:
        datasets: mapping of name to (RatingMatrix, Group)
        methods: subset of ("gsi", "wbf", "af")
        lambda_list: regularization values; each method uses it as its own regularizer

    Returns:
        RankTable; failed cells hold rank None
    """
    methods = list(methods)
    if not methods:
        raise ConfigError("rank recovery needs at least one method")
    unknown = sorted(set(methods) - set(RANK_METHODS))
    if unknown:
        raise ConfigError(f"unknown methods {unknown}; expected a subset of {RANK_METHODS}")
    jobs = [(name, method, float(lam)) for name in datasets for method in methods for lam in lambda_list]

    def run(job):
        name, method, lam = job
        x, g = datasets[name]
        try:
            cell = _rank_cell(name, x, g, method, lam, softimpute_config, als_config, af_kind, mean_divisor)
        except GsiError as exc:
            logger.warning(f"rank cell {name}/{method}/lambda={lam:g} failed: {exc}")
            return RankCell(name, method, lam, None)
        logger.info(f"rank {name}/{method}/lambda={lam:g}: {cell.rank}")
        return cell

    return RankTable(cells=tuple(ordered_map(run, jobs, threads)))


def error_curve(path, x_truth, split):
    """Train/test error of every solved grid point, ordered by ascending nuclear norm."""
    reports = [
        train_test_error(x_truth, solution, split, lam=lam)
        for lam, solution in zip(path.lambdas, path.solutions)
        if solution is not None
    ]
    return sorted(reports, key=lambda report: report.nuclear_norm)


def convergence_series(trace):
    """(iteration, log10 relative error) pairs; zero errors are dropped and counted."""
    errors = np.asarray(trace.relative_errors, dtype=float)
    if errors.size == 0:
        raise InsufficientDataError("convergence trace is empty")
    positive = errors > 0
    points = tuple(
        (int(iteration), float(np.log10(error)))
        for iteration, error in enumerate(errors)
        if error > 0
    )
    return ConvergenceSeries(points=points, zero_errors=int(np.count_nonzero(~positive)))


def metrics_frame(records):
    """DataFrame of metric rows in the stable METRIC_COLUMNS order."""
    frame = pd.DataFrame(list(records), columns=METRIC_COLUMNS)
    return frame.astype({"precision": float, "recall": float, "f1": float})


def summarize_metrics(frame):
    """Mean precision, recall and F1 per (dataset, method, group_size, k); groups counts the scored rows."""
    keys = ["dataset", "method", "group_size", "k"]
    summary = (
        frame.groupby(keys, sort=True)[["precision", "recall", "f1"]]
        .mean()
        .reset_index()
    )
    summary["groups"] = frame.groupby(keys, sort=True)["f1"].count().to_numpy()
    return summary
