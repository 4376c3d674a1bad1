"""
Rank-r matrix factorization fitted by alternating least squares.

Minimizes ||P_Omega(X) - P_Omega(U V^T)||_F^2 + lambda (||U||_F^2 + ||V||_F^2).
With one factor fixed every row of the other is an independent ridge
regression over that row's observed entries only.
"""
import logging
from dataclasses import dataclass

import numpy as np

from errors import ConfigError, NumericalError
from utils import get_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlsConfig:
    rank: int = 20
    reg_lambda: float = 0.1
    max_sweeps: int = 50
    tolerance: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.reg_lambda < 0:
            raise ConfigError(f"reg_lambda must be >= 0, got {self.reg_lambda}")
        if self.max_sweeps < 1:
            raise ConfigError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        if not self.tolerance > 0:
            raise ConfigError(f"tolerance must be > 0, got {self.tolerance}")


@dataclass(frozen=True, eq=False)
class FactorPair:
    user_factors: np.ndarray
    item_factors: np.ndarray

    def __post_init__(self):
        user = np.array(self.user_factors, dtype=float)
        item = np.array(self.item_factors, dtype=float)
        if user.ndim != 2 or item.ndim != 2 or user.shape[1] != item.shape[1]:
            raise ConfigError(f"factor shapes {user.shape} and {item.shape} are inconsistent")
        if not (np.all(np.isfinite(user)) and np.all(np.isfinite(item))):
            raise NumericalError("factor matrices contain non-finite entries")
        user.setflags(write=False)
        item.setflags(write=False)
        object.__setattr__(self, "user_factors", user)
        object.__setattr__(self, "item_factors", item)

    @property
    def rank(self):
        return self.user_factors.shape[1]


@dataclass(frozen=True)
class AlsTrace:
    # objective at the initial point and after every half-sweep
    half_sweep_objectives: tuple
    # objective after every full sweep
    objectives: tuple
    sweeps: int
    converged: bool
    singular_warning: bool

    @property
    def final_objective(self):
        return self.half_sweep_objectives[-1]


def ridge_solve(a, y, reg):
    """
    Solve (A^T A + reg I) beta = A^T y.

    Args:
        a: k x r design matrix (k may be 0)
        y: length-k targets
        reg: nonnegative ridge weight

    Returns:
        (beta, singular) where singular is True if the pseudo-inverse was needed
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    r = a.shape[1]
    if a.shape[0] == 0:
        return np.zeros(r), False
    gram = a.T @ a + reg * np.eye(r)
    rhs = a.T @ y
    if reg == 0 and np.linalg.matrix_rank(gram) < r:
        return np.linalg.pinv(gram) @ rhs, True
    try:
        return np.linalg.solve(gram, rhs), False
    except np.linalg.LinAlgError:
        return np.linalg.pinv(gram) @ rhs, True


def solve_half_sweep(values, mask, fixed, reg):
    """
    Solve every row of the free factor given the fixed one.

    Row i regresses values[i, mask[i]] on fixed[mask[i]]. Rows with no
    observed entries get the zero vector.

    Returns:
        (free factor as rows x r array, singular flag)
    """
    rows = values.shape[0]
    r = fixed.shape[1]
    weights = mask.astype(float)
    outer = np.einsum("jk,jl->jkl", fixed, fixed).reshape(fixed.shape[0], r * r)
    grams = (weights @ outer).reshape(rows, r, r) + reg * np.eye(r)
    rhs = (values * weights) @ fixed

    solution = np.zeros((rows, r))
    active = np.flatnonzero(mask.any(axis=1))
    if active.size == 0:
        return solution, False
    singular = np.zeros(active.size, dtype=bool)
    if reg == 0:
        singular = np.linalg.matrix_rank(grams[active]) < r
    regular = active[~singular]
    if regular.size:
        try:
            solution[regular] = np.linalg.solve(grams[regular], rhs[regular][..., None])[..., 0]
        except np.linalg.LinAlgError:
            singular[~singular] = True
    deficient = active[singular]
    if deficient.size:
        solution[deficient] = (np.linalg.pinv(grams[deficient]) @ rhs[deficient][..., None])[..., 0]
    return solution, bool(deficient.size)


def _objective(values, mask, user, item, reg):
    residual = np.where(mask, values - user @ item.T, 0.0)
    return float(np.sum(residual**2) + reg * (np.sum(user**2) + np.sum(item**2)))


def mf_objective(x, factors, reg_lambda):
    """||P_Omega(X) - P_Omega(U V^T)||_F^2 + lambda (||U||_F^2 + ||V||_F^2)."""
    return _objective(x.values, x.mask, factors.user_factors, factors.item_factors, reg_lambda)


def predict(factors):
    return factors.user_factors @ factors.item_factors.T


def als_fit(x, config):
    """
    Fit U (m x r) and V (n x r) by alternating ridge regressions.

    V starts as i.i.d. normal(0, 1/sqrt(r)) from config.seed and the user
    half-sweep runs first. Stops once the relative change of the objective
    between sweeps drops below config.tolerance.

    Returns:
        (FactorPair, AlsTrace)
    """
    m, n = x.shape
    r = config.rank
    if r > min(m, n):
        raise ConfigError(f"rank {r} exceeds min(m, n) = {min(m, n)}")
    reg = config.reg_lambda
    values, mask = x.values, x.mask

    item = get_rng(config.seed).normal(0.0, 1.0 / np.sqrt(r), size=(n, r))
    user = np.zeros((m, r))
    previous = _objective(values, mask, user, item, reg)
    half_objectives = [previous]
    objectives = []
    singular = False
    converged = False
    sweeps = 0
    for sweeps in range(1, config.max_sweeps + 1):
        user, flagged = solve_half_sweep(values, mask, item, reg)
        singular |= flagged
        half_objectives.append(_objective(values, mask, user, item, reg))
        item, flagged = solve_half_sweep(values.T, mask.T, user, reg)
        singular |= flagged
        current = _objective(values, mask, user, item, reg)
        half_objectives.append(current)
        objectives.append(current)
        change = abs(previous - current)
        relative = change / abs(previous) if previous != 0 else change
        logger.debug(f"ALS sweep {sweeps}: objective={current:.6g} relative_change={relative:.3e}")
        previous = current
        if relative < config.tolerance:
            converged = True
            break

    if singular:
        logger.warning("Singular normal equations with reg_lambda=0; used the pseudo-inverse")
    if not converged:
        logger.warning(f"ALS did not converge within {config.max_sweeps} sweeps")
    logger.info(f"ALS rank={r} reg={reg:g}: {sweeps} sweeps, objective={previous:.6g}")
    trace = AlsTrace(
        half_sweep_objectives=tuple(half_objectives),
        objectives=tuple(objectives),
        sweeps=sweeps,
        converged=converged,
        singular_warning=singular,
    )
    return FactorPair(user, item), trace
