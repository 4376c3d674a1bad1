"""
Group recommendation: preference aggregation, matrix augmentation and the
three group recommenders.

- gsi_svd: append a weighted group-mean row, complete with soft-impute and read
  the completed row back as the group's predicted ratings.
- wbf: same augmented matrix, completed by ALS matrix factorization.
- af: plain ALS, then aggregate the members' latent user factors.
"""
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from errors import ConfigError
from linalg_core import RatingMatrix
from mf_als import als_fit
from softimpute import complete_at, soft_impute_path
from utils import get_rng

logger = logging.getLogger(__name__)

MEAN_DIVISORS = ("raters", "group_size")


class AggregationKind(str, Enum):
    AVERAGE = "average"
    WEIGHTED_AVERAGE = "weighted_average"
    MINIMUM = "minimum"
    MAXIMUM = "maximum"


@dataclass(frozen=True)
class Group:
    id: str
    members: tuple

    def __post_init__(self):
        members = tuple(int(member) for member in self.members)
        if not members:
            raise ConfigError(f"group {self.id!r} is empty")
        if len(set(members)) != len(members):
            raise ConfigError(f"group {self.id!r} has duplicate members")
        if min(members) < 0:
            raise ConfigError(f"group {self.id!r} has a negative member index")
        object.__setattr__(self, "members", members)

    @property
    def size(self):
        return len(self.members)

    def check(self, m):
        if max(self.members) >= m:
            raise ConfigError(f"group {self.id!r} references user {max(self.members)} but the matrix has {m} users")


@dataclass(frozen=True, eq=False)
class GroupAggregate:
    mean_ratings: np.ndarray
    weights: np.ndarray
    rater_counts: np.ndarray
    std_devs: np.ndarray
    rated_mask: np.ndarray
    group_size: int


@dataclass(frozen=True, eq=False)
class AugmentedMatrix:
    base: RatingMatrix
    group_row_index: int
    extended: RatingMatrix


@dataclass(frozen=True, eq=False)
class GsiResult:
    completed: np.ndarray
    group_ratings: np.ndarray
    path: object
    final_index: int
    augmented: AugmentedMatrix

    @property
    def final_solution(self):
        return self.path.solutions[self.final_index]


def aggregate_group(x, g, mean_divisor="raters"):
    """
    Per-item group statistics over the members' observed ratings.

    Args:
        x: RatingMatrix
        g: Group whose members index rows of x
        mean_divisor: "raters" averages over the members who rated the item;
            "group_size" divides the same sum by |G|

    Returns:
        GroupAggregate; entries of unrated items are 0
    """
    if mean_divisor not in MEAN_DIVISORS:
        raise ConfigError(f"mean_divisor must be one of {MEAN_DIVISORS}, got {mean_divisor!r}")
    g.check(x.m)
    rows = list(g.members)
    values, mask = x.values[rows], x.mask[rows]
    counts = mask.sum(axis=0)
    rated = counts > 0
    divisor = np.maximum(counts, 1)
    totals = values.sum(axis=0)
    rater_mean = totals / divisor
    # population standard deviation over the raters
    spread = np.where(mask, values - rater_mean, 0.0)
    std = np.sqrt(np.sum(spread**2, axis=0) / divisor)
    mean = rater_mean if mean_divisor == "raters" else totals / g.size
    weights = (counts / g.size) / (1.0 + std)
    return GroupAggregate(
        mean_ratings=np.where(rated, mean, 0.0),
        weights=np.where(rated, weights, 0.0),
        rater_counts=counts.astype(int),
        std_devs=np.where(rated, std, 0.0),
        rated_mask=rated,
        group_size=g.size,
    )


def augment(x, agg):
    """Append the weighted group row r_{G,j} * w_{G,j}, observed where any member rated j."""
    row = np.where(agg.rated_mask, agg.mean_ratings * agg.weights, 0.0)
    values = np.vstack([x.values, row])
    mask = np.vstack([x.mask, agg.rated_mask])
    return AugmentedMatrix(
        base=x,
        group_row_index=x.m,
        extended=RatingMatrix(values, mask, scale=None),
    )


def gsi_svd(x, g, config, mean_divisor="raters"):
    """
    Group soft-impute SVD.

    Runs the warm-started soft-impute path on the augmented matrix. The final
    solution is the smallest-lambda grid point that converged, and its last
    row is the group's predicted rating for every item.
    """
    agg = aggregate_group(x, g, mean_divisor)
    augmented = augment(x, agg)
    if not agg.rated_mask.any():
        logger.warning(f"group {g.id!r} rated nothing; the group row is fully unobserved")
    path = soft_impute_path(augmented.extended, config)
    index = path.final_index()
    completed = np.array(path.solutions[index].z)
    return GsiResult(
        completed=completed,
        group_ratings=completed[augmented.group_row_index].copy(),
        path=path,
        final_index=index,
        augmented=augmented,
    )


def gsi_complete_at(x, g, lam, config, mean_divisor="raters"):
    """GSI-SVD completion of the augmented matrix at one lambda: (ThresholdedMatrix, trace)."""
    augmented = augment(x, aggregate_group(x, g, mean_divisor))
    return complete_at(augmented.extended, lam, config)


def wbf(x, g, agg, als_config):
    """
    Weighted-before-factorization baseline.

    Fits ALS on the augmented matrix; the pseudo-user row's factor times the
    item factors gives the group predictions.

    Returns:
        (predicted group ratings, FactorPair)
    """
    augmented = augment(x, agg)
    factors, _ = als_fit(augmented.extended, als_config)
    profile = factors.user_factors[augmented.group_row_index]
    return profile @ factors.item_factors.T, factors


def aggregate_profiles(profiles, kind, activity=None):
    """
    Combine member factor rows componentwise.

    Args:
        profiles: |G| x r member factors
        kind: AggregationKind
        activity: per-member observed-rating counts (weighted_average only)
    """
    kind = AggregationKind(kind)
    profiles = np.asarray(profiles, dtype=float)
    if kind is AggregationKind.AVERAGE:
        return profiles.mean(axis=0)
    if kind is AggregationKind.MINIMUM:
        return profiles.min(axis=0)
    if kind is AggregationKind.MAXIMUM:
        return profiles.max(axis=0)
    weights = np.ones(len(profiles)) if activity is None else np.asarray(activity, dtype=float)
    if weights.sum() <= 0:
        weights = np.ones(len(profiles))
    weights = weights / weights.sum()
    return weights @ profiles


def af(x, g, h, als_config, factors=None):
    """
    After-factorization baseline.

    Fits ALS on x (or reuses factors fitted on x), aggregates the members'
    user factors with h and scores every item against the group profile.

    Returns:
        (predicted group ratings, FactorPair)
    """
    g.check(x.m)
    if factors is None:
        factors, _ = als_fit(x, als_config)
    rows = list(g.members)
    activity = x.mask[rows].sum(axis=1)
    profile = aggregate_profiles(factors.user_factors[rows], h, activity)
    return profile @ factors.item_factors.T, factors


def form_groups(m, size, count, seed):
    """
    Draw count disjoint groups of the given size from m users.

    Returns:
        List of Group with ids "g{size}-{i}"
    """
    if size < 1 or count < 1:
        raise ConfigError(f"group size and count must be >= 1, got size={size} count={count}")
    if size * count > m:
        raise ConfigError(f"cannot draw {count} disjoint groups of size {size} from {m} users")
    order = get_rng([seed, size]).permutation(m)
    return [
        Group(id=f"g{size}-{i}", members=tuple(sorted(order[i * size:(i + 1) * size].tolist())))
        for i in range(count)
    ]
