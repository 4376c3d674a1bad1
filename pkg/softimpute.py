"""
Soft-impute for nuclear-norm regularized matrix completion.

Each iteration fills the unobserved entries with the current estimate and
soft-thresholds the singular values of the filled matrix:

    Z_new = S_lambda(P_Omega(X) + P_Omega^perp(Z_old))

The lambda path runs from sigma_max(P_Omega(X)) down to lambda_min, each grid
point warm-started from the previous solution.
"""
import logging
from dataclasses import dataclass, replace

import numpy as np

from errors import ConfigError, DegenerateInputError, InsufficientDataError, NumericalError
from linalg_core import (
    RANK_REL_TOL,
    SVD_METHODS,
    nuclear_norm,
    project_observed,
    soft_threshold_svd,
    svd,
)
from utils import get_rng

logger = logging.getLogger(__name__)

MIN_CONTRACTION_ITERATIONS = 5


@dataclass(frozen=True)
class SoftImputeConfig:
    grid_size: int = 10
    lambda_min: float = 1.0
    epsilon: float = 1e-5
    max_iters: int = 500
    rank_tolerance: float = RANK_REL_TOL
    init_scale: float = 0.01
    seed: int = 0
    warm_start: bool = True
    svd_method: str = "lapack"

    def __post_init__(self):
        if self.grid_size < 1:
            raise ConfigError(f"grid_size must be >= 1, got {self.grid_size}")
        if not self.lambda_min > 0:
            raise ConfigError(f"lambda_min must be > 0, got {self.lambda_min}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.rank_tolerance > 0:
            raise ConfigError(f"rank_tolerance must be > 0, got {self.rank_tolerance}")
        if self.init_scale < 0:
            raise ConfigError(f"init_scale must be >= 0, got {self.init_scale}")
        if self.svd_method not in SVD_METHODS:
            raise ConfigError(f"svd_method must be one of {SVD_METHODS}, got {self.svd_method!r}")


@dataclass(frozen=True)
class ConvergenceTrace:
    lam: float
    relative_errors: tuple
    iterations: int
    converged: bool
    estimated_rho: float | None = None
    failed: bool = False


@dataclass(frozen=True)
class SoftImputePath:
    lambdas: tuple
    solutions: tuple
    traces: tuple
    seed: int

    @property
    def total_iterations(self):
        return sum(trace.iterations for trace in self.traces)

    @property
    def failed_lambdas(self):
        return [trace.lam for trace in self.traces if trace.failed]

    def final_index(self):
        """
        Index of the smallest-lambda grid point that converged.

        Falls back to the smallest lambda that produced a solution when none
        converged. Failed points are never chosen.
        """
        solved = [index for index, solution in enumerate(self.solutions) if solution is not None]
        if not solved:
            raise NumericalError("no grid point of the path produced a solution")
        for index in reversed(solved):
            if self.traces[index].converged:
                return index
        logger.warning("No grid point converged; using the smallest solved lambda")
        return solved[-1]


@dataclass(frozen=True)
class LogDecayFit:
    slope: float
    intercept: float
    r2: float
    points: int


def _sigma_max(x, method="lapack"):
    observed = project_observed(x)
    if not np.any(observed):
        raise DegenerateInputError("P_Omega(X) is all zeros; nothing to complete")
    return float(svd(observed, method=method).sigma[0])


def geometric_grid(lambda_max, lambda_min, size):
    """Strictly descending geometric grid from lambda_max to lambda_min."""
    if size == 1:
        return (float(lambda_max),)
    if lambda_max <= lambda_min:
        raise DegenerateInputError(
            f"sigma_max(P_Omega(X)) = {lambda_max:.6g} does not exceed lambda_min = {lambda_min:.6g}"
        )
    return tuple(float(value) for value in np.geomspace(lambda_max, lambda_min, size))


def lambda_grid(x, config):
    """
    Regularization grid for the path.

    Args:
        x: RatingMatrix with at least one nonzero observed entry
        config: SoftImputeConfig (grid_size, lambda_min)

    Returns:
        Tuple of grid_size descending lambdas starting at sigma_max(P_Omega(x))
    """
    return geometric_grid(_sigma_max(x, config.svd_method), config.lambda_min, config.grid_size)


def completion_objective(x, z, lam):
    """0.5 * ||P_Omega(X - Z)||_F^2 + lambda * ||Z||_*, minimized by the soft-impute fixed point."""
    residual = np.where(x.mask, x.values - z, 0.0)
    return 0.5 * float(np.sum(residual**2)) + lam * nuclear_norm(z)


def soft_impute(x, lam, z_init, config):
    """
    Run soft-impute at a single lambda.

    Args:
        x: RatingMatrix being completed
        lam: nonnegative regularization weight
        z_init: m x n starting estimate
        config: SoftImputeConfig

    Returns:
        (ThresholdedMatrix, ConvergenceTrace); converged is False when max_iters ran out
    """
    if lam < 0:
        raise ConfigError(f"lambda must be nonnegative, got {lam}")
    z_old = np.array(z_init, dtype=float)
    if z_old.shape != x.shape:
        raise ConfigError(f"z_init shape {z_old.shape} does not match matrix shape {x.shape}")
    if not np.all(np.isfinite(z_old)):
        raise ConfigError("z_init must be finite")

    observed = project_observed(x)
    errors = []
    converged = False
    result = None
    for iteration in range(config.max_iters):
        filled = np.where(x.mask, observed, z_old)
        result = soft_threshold_svd(filled, lam, method=config.svd_method, rank_tol=config.rank_tolerance)
        change = float(np.sum((result.z - z_old) ** 2))
        scale = float(np.sum(z_old**2))
        # absolute change when the previous iterate is zero
        error = change / scale if scale > 0 else change
        errors.append(error)
        z_old = result.z
        logger.debug(f"lambda={lam:.6g} iter={iteration + 1} rel_err={error:.3e} rank={result.rank}")
        if error < config.epsilon:
            converged = True
            break

    if not converged:
        logger.warning(f"soft-impute at lambda={lam:.6g} did not converge in {config.max_iters} iterations")
    trace = ConvergenceTrace(
        lam=float(lam),
        relative_errors=tuple(errors),
        iterations=len(errors),
        converged=converged,
    )
    if trace.iterations >= MIN_CONTRACTION_ITERATIONS:
        try:
            trace = replace(trace, estimated_rho=estimate_contraction_rate(trace))
        except InsufficientDataError:
            pass
    return result, trace


def soft_impute_path(x, config):
    """
    Solve along the descending lambda grid.

    The first grid point starts from a seeded random matrix scaled by
    config.init_scale; each later one starts from the last solved point unless
    warm_start is off, in which case every point restarts from that matrix.

    A grid point whose SVD fails is recorded with a failed trace and a None
    solution; the path continues from the last good iterate.
    """
    lambdas = lambda_grid(x, config)
    z_random = config.init_scale * get_rng(config.seed).standard_normal(x.shape)
    z_start = z_random
    solutions, traces = [], []
    for lam in lambdas:
        try:
            solution, trace = soft_impute(x, lam, z_start if config.warm_start else z_random, config)
        except NumericalError as exc:
            logger.warning(f"lambda={lam:.6g} failed: {exc}")
            solutions.append(None)
            traces.append(
                ConvergenceTrace(lam=float(lam), relative_errors=(), iterations=0, converged=False, failed=True)
            )
            continue
        solutions.append(solution)
        traces.append(trace)
        z_start = solution.z
        logger.info(
            f"lambda={lam:.6g}: rank={solution.rank} nuclear_norm={solution.nuclear_norm:.6g} "
            f"iterations={trace.iterations} converged={trace.converged}"
        )
    return SoftImputePath(
        lambdas=lambdas,
        solutions=tuple(solutions),
        traces=tuple(traces),
        seed=config.seed,
    )


def complete_at(x, lam, config):
    """
    Completion at an arbitrary lambda.

    Runs the warm-started path from sigma_max down to lam; a lam at or above
    sigma_max gives the zero matrix (reached in one iteration from zero).
    """
    if not lam > 0:
        raise ConfigError(f"lambda must be > 0, got {lam}")
    if lam >= _sigma_max(x, config.svd_method):
        return soft_impute(x, lam, np.zeros(x.shape), config)
    path = soft_impute_path(x, replace(config, lambda_min=float(lam)))
    if path.solutions[-1] is None:
        raise NumericalError(f"soft-impute failed at lambda={lam:.6g}")
    return path.solutions[-1], path.traces[-1]


def tail_start(count):
    """First iteration of the tail window used by the decay diagnostics."""
    return count // 2


def fit_log_decay(errors, skip=0):
    """
    Least-squares line through (iteration, log10 error), skipping zero errors.

    Args:
        errors: relative errors in iteration order
        skip: number of leading iterations left out of the fit

    Returns:
        LogDecayFit with slope, intercept, coefficient of determination and point count
    """
    errors = np.asarray(errors, dtype=float)
    iterations = np.arange(errors.size)[skip:]
    errors = errors[skip:]
    keep = errors > 0
    if keep.sum() < 2:
        raise InsufficientDataError("need at least two positive errors to fit a decay line")
    xs, ys = iterations[keep], np.log10(errors[keep])
    slope, intercept = np.polyfit(xs, ys, 1)
    residual = ys - (slope * xs + intercept)
    total = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(np.sum(residual**2)) / total if total > 0 else 1.0
    return LogDecayFit(slope=float(slope), intercept=float(intercept), r2=r2, points=int(keep.sum()))


def estimate_contraction_rate(trace):
    """
    Geometric decay constant of the relative errors.

    Fits the log error against iteration over the tail half of the trace and
    returns the per-iteration factor; values below 1 indicate geometric decay.
    """
    if trace.iterations < MIN_CONTRACTION_ITERATIONS:
        raise InsufficientDataError(
            f"need at least {MIN_CONTRACTION_ITERATIONS} iterations, trace has {trace.iterations}"
        )
    try:
        fit = fit_log_decay(trace.relative_errors, skip=tail_start(trace.iterations))
    except InsufficientDataError:
        raise InsufficientDataError("tail of the trace has fewer than two positive errors") from None
    return float(10.0**fit.slope)
