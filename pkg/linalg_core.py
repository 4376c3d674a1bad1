"""
Dense rating matrices, observed-entry projections and the SVD operators the
completion solvers share.

Unobserved entries are stored as literal zeros and the observed index set is
kept separately as a boolean mask, so P_Omega(X) is just the stored array.
"""
import logging
from dataclasses import dataclass

import numpy as np

from errors import ConfigError, DataError, NumericalError

logger = logging.getLogger(__name__)

RATING_SCALE = (1.0, 5.0)

# Singular values below RANK_REL_TOL * sigma_max count as zero.
RANK_REL_TOL = 1e-10
JACOBI_TOL = 1e-12
SVD_METHODS = ("lapack", "jacobi")


def _readonly(array, dtype=float):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def as_mask(omega, shape):
    """
    Turn an observed-index description into a boolean mask.

    Args:
        omega: boolean array of the given shape, a RatingMatrix, or an iterable of (row, col) pairs
        shape: (m, n) of the target matrix

    Returns:
        Boolean numpy array of the given shape
    """
    if isinstance(omega, RatingMatrix):
        omega = omega.mask
    if isinstance(omega, np.ndarray) and omega.dtype == bool:
        if omega.shape != tuple(shape):
            raise ConfigError(f"mask shape {omega.shape} does not match matrix shape {tuple(shape)}")
        return omega
    mask = np.zeros(shape, dtype=bool)
    pairs = np.asarray(list(omega), dtype=int).reshape(-1, 2)
    if pairs.size:
        rows, cols = pairs[:, 0], pairs[:, 1]
        if rows.min() < 0 or cols.min() < 0 or rows.max() >= shape[0] or cols.max() >= shape[1]:
            raise ConfigError(f"observed index out of range for shape {tuple(shape)}")
        mask[rows, cols] = True
    return mask


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """An m x n rating matrix together with its observed set Omega."""

    values: np.ndarray
    mask: np.ndarray
    scale: tuple = RATING_SCALE

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError(f"rating matrix must be 2-D, got shape {values.shape}")
        mask = as_mask(self.mask, values.shape).copy()
        observed = values[mask]
        if not np.all(np.isfinite(observed)):
            raise DataError("observed ratings must be finite")
        if np.any(values[~mask] != 0):
            raise DataError("unobserved entries must be stored as 0")
        if self.scale is not None and observed.size:
            low, high = self.scale
            if observed.min() < low or observed.max() > high:
                raise DataError(f"observed ratings fall outside the rating scale [{low}, {high}]")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_dense(cls, values, mask, scale=RATING_SCALE):
        """Build from a dense array, zeroing everything outside the mask."""
        values = np.asarray(values, dtype=float)
        mask = as_mask(mask, values.shape)
        return cls(np.where(mask, values, 0.0), mask, scale)

    @property
    def m(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def observed(self):
        """Observed (row, col) pairs in row-major order, as a k x 2 integer array."""
        return np.argwhere(self.mask)

    @property
    def num_observed(self):
        return int(self.mask.sum())

    @property
    def sparsity(self):
        """Fraction of unobserved entries."""
        total = self.mask.size
        return 1.0 - self.num_observed / total if total else 0.0

    def restrict(self, omega):
        """Keep only the observed entries that are also in omega."""
        keep = self.mask & as_mask(omega, self.shape)
        return RatingMatrix(np.where(keep, self.values, 0.0), keep, self.scale)


@dataclass(frozen=True, eq=False)
class SvdFactors:
    """u (m x p), sigma (p, descending) and v (n x p) with x = u diag(sigma) v^T."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u, sigma, v = _readonly(self.u), _readonly(self.sigma), _readonly(self.v)
        if u.shape[1] != sigma.size or v.shape[1] != sigma.size:
            raise ConfigError("SVD factor shapes are inconsistent")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "v", v)

    @property
    def components(self):
        return self.sigma.size

    def reconstruct(self):
        return (self.u * self.sigma) @ self.v.T


@dataclass(frozen=True, eq=False)
class ThresholdedMatrix:
    """Result of S_lambda: the low-rank matrix and its r retained components."""

    z: np.ndarray
    rank: int
    nuclear_norm: float
    factors: SvdFactors

    def __post_init__(self):
        object.__setattr__(self, "z", _readonly(self.z))


def project_observed(x):
    """P_Omega(X): observed ratings, zeros elsewhere."""
    return np.where(x.mask, x.values, 0.0)


def project_unobserved(x, omega):
    """P_Omega^perp(X): entries outside omega, zeros on omega."""
    x = np.asarray(x, dtype=float)
    return np.where(as_mask(omega, x.shape), 0.0, x)


def _fix_signs(u, v):
    # largest-magnitude entry of every left singular vector is made positive
    if u.size == 0:
        return u, v
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, v * signs


def _round_robin(n):
    """Tournament schedule: n-1 rounds of disjoint column pairs covering every pair once."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = sorted((min(a, b), max(a, b)) for a, b in pairs if a >= 0 and b >= 0)
        if pairs:
            left, right = zip(*pairs)
            rounds.append((np.array(left), np.array(right)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(u, good):
    """Replace columns of u flagged not-good with an orthonormal completion."""
    if good.all():
        return u
    m = u.shape[0]
    basis, _ = np.linalg.qr(np.hstack([u[:, good], np.eye(m)]))
    u = u.copy()
    k = int(good.sum())
    u[:, ~good] = basis[:, k:k + int((~good).sum())]
    return u


def _jacobi_svd(a):
    """One-sided (Hestenes) Jacobi SVD with round-robin pair ordering."""
    transposed = a.shape[0] < a.shape[1]
    work = (a.T if transposed else a).copy()
    m, n = work.shape
    v = np.eye(n)
    max_sweeps = 100 * max(n, 1)
    schedule = _round_robin(n)
    for sweep in range(max_sweeps):
        off = 0.0
        for left, right in schedule:
            p, q = work[:, left], work[:, right]
            alpha = np.einsum("ij,ij->j", p, p)
            beta = np.einsum("ij,ij->j", q, q)
            gamma = np.einsum("ij,ij->j", p, q)
            scale = np.sqrt(alpha * beta)
            active = (scale > 0) & (np.abs(gamma) > JACOBI_TOL * scale)
            if not active.any():
                continue
            off = max(off, float(np.max(np.abs(gamma[active]) / scale[active])))
            left, right = left[active], right[active]
            zeta = (beta[active] - alpha[active]) / (2.0 * gamma[active])
            sign = np.where(zeta >= 0, 1.0, -1.0)
            t = sign / (np.abs(zeta) + np.sqrt(1.0 + zeta**2))
            c = 1.0 / np.sqrt(1.0 + t**2)
            s = c * t
            for target in (work, v):
                p, q = target[:, left].copy(), target[:, right]
                target[:, left] = c * p - s * q
                target[:, right] = s * p + c * q
        if off <= JACOBI_TOL:
            logger.debug(f"Jacobi SVD converged after {sweep + 1} sweeps")
            break
    else:
        raise NumericalError(f"Jacobi SVD did not converge within {max_sweeps} sweeps")

    sigma = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sigma, kind="stable")
    sigma, work, v = sigma[order], work[:, order], v[:, order]
    floor = np.finfo(float).eps * max(m, n) * (sigma[0] if sigma.size else 0.0)
    good = sigma > floor
    u = np.zeros_like(work)
    u[:, good] = work[:, good] / sigma[good]
    u = _complete_basis(u, good)
    if transposed:
        return v, sigma, u
    return u, sigma, v


def svd(x, method="lapack"):
    """
    Thin singular value decomposition with a deterministic sign convention.

    Args:
        x: m x n real array with finite entries
        method: "lapack" (numpy) or "jacobi" (in-repo one-sided Jacobi)

    Returns:
        SvdFactors with p = min(m, n) components, sigma non-increasing
    """
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise ConfigError(f"svd expects a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("svd input contains non-finite entries")
    if method == "lapack":
        try:
            u, sigma, vt = np.linalg.svd(a, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"LAPACK SVD did not converge: {exc}") from exc
        v = vt.T
    elif method == "jacobi":
        u, sigma, v = _jacobi_svd(a)
    else:
        raise ConfigError(f"unknown SVD method {method!r}; expected one of {SVD_METHODS}")
    u, v = _fix_signs(u, v)
    return SvdFactors(u, sigma, v)


def soft_threshold_svd(x, lam, method="lapack", rank_tol=RANK_REL_TOL):
    """
    S_lambda(X) = U_r diag((sigma_i - lambda)_+) V_r^T over the retained components.

    Only components whose shrunken value stays above the rank noise floor are
    kept, so the reconstruction costs O(mnr) rather than O(mn min(m, n)).
    """
    if lam < 0:
        raise ConfigError(f"lambda must be nonnegative, got {lam}")
    factors = svd(x, method=method)
    shrunk = factors.sigma - lam
    floor = rank_tol * factors.sigma[0] if factors.sigma.size else 0.0
    r = int(np.count_nonzero(shrunk > floor))
    u_r, s_r, v_r = factors.u[:, :r], shrunk[:r], factors.v[:, :r]
    z = (u_r * s_r) @ v_r.T
    return ThresholdedMatrix(
        z=z,
        rank=r,
        nuclear_norm=float(s_r.sum()),
        factors=SvdFactors(u_r, s_r, v_r),
    )


def frobenius_norm(x):
    return float(np.sqrt(np.sum(np.square(np.asarray(x, dtype=float)))))


def nuclear_norm(x, method="lapack"):
    return float(svd(x, method=method).sigma.sum())


def numerical_rank(x, rel_tol=RANK_REL_TOL):
    """Number of singular values above rel_tol * sigma_max."""
    a = np.asarray(x, dtype=float)
    if a.size == 0:
        return 0
    try:
        sigma = np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"LAPACK SVD did not converge: {exc}") from exc
    if sigma[0] <= 0:
        return 0
    return int(np.count_nonzero(sigma > rel_tol * sigma[0]))
