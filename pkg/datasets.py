"""
Rating data: CSV ingestion, subsampling to a dense matrix, KNN imputation,
train/test masking, the synthetic generator and the text snapshot format.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from errors import ConfigError, DataError
from linalg_core import RATING_SCALE, RatingMatrix
from results import atomic_write_text
from utils import get_rng

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = "GSI-MATRIX"
SNAPSHOT_VERSION = "v1"
SUBSAMPLE_RULES = ("most_active",)
RECORD_COLUMNS = ["user_id", "item_id", "rating", "timestamp"]


@dataclass(frozen=True)
class CsvSchema:
    delimiter: str
    columns: tuple
    header: bool

    def __post_init__(self):
        required = {"user_id", "item_id", "rating"}
        if not required.issubset(self.columns):
            raise ConfigError(f"schema columns {self.columns} must include {sorted(required)}")


# u.data: tab separated user, item, rating, timestamp; 1-indexed ids, no header
MOVIELENS_100K = CsvSchema("\t", ("user_id", "item_id", "rating", "timestamp"), False)
# ratings.csv: header user_id,book_id,rating
GOODBOOKS = CsvSchema(",", ("user_id", "item_id", "rating"), True)

SCHEMAS = {"movielens": MOVIELENS_100K, "goodbooks": GOODBOOKS}


@dataclass(frozen=True, eq=False)
class RatingsTable:
    frame: pd.DataFrame
    rejected: int = 0
    malformed: int = 0

    @classmethod
    def empty(cls):
        frame = pd.DataFrame({
            "user_id": pd.Series(dtype="int64"),
            "item_id": pd.Series(dtype="int64"),
            "rating": pd.Series(dtype="float64"),
            "timestamp": pd.Series(dtype="float64"),
        })
        return cls(frame)

    def __len__(self):
        return len(self.frame)

    @property
    def users(self):
        return np.sort(self.frame["user_id"].unique())

    @property
    def items(self):
        return np.sort(self.frame["item_id"].unique())

    @property
    def records(self):
        """(user_id, item_id, rating, timestamp or None) tuples in file order."""
        return [
            (int(user), int(item), float(rating), None if pd.isna(stamp) else int(stamp))
            for user, item, rating, stamp in self.frame[RECORD_COLUMNS].itertuples(index=False)
        ]


@dataclass(frozen=True, eq=False)
class SplitMask:
    omega_train: np.ndarray
    omega_test: np.ndarray
    seed: int
    fraction: float

    @property
    def train_size(self):
        return int(self.omega_train.sum())

    @property
    def test_size(self):
        return int(self.omega_test.sum())


@dataclass(frozen=True)
class SyntheticConfig:
    users: int = 2000
    items: int = 200
    mean: float = 3.5
    std: float = 0.65
    observed_fraction: float = 0.25
    low: float = RATING_SCALE[0]
    high: float = RATING_SCALE[1]
    seed: int = 0

    def __post_init__(self):
        if self.users < 1 or self.items < 1:
            raise ConfigError(f"synthetic shape must be positive, got {self.users} x {self.items}")
        if not 0 < self.observed_fraction <= 1:
            raise ConfigError(f"observed_fraction must be in (0, 1], got {self.observed_fraction}")
        if not self.std > 0:
            raise ConfigError(f"std must be > 0, got {self.std}")
        if not 0 < self.low < self.high:
            raise ConfigError(f"rating bounds must satisfy 0 < low < high, got [{self.low}, {self.high}]")


def load_ratings_csv(path, schema):
    """
    Read a ratings file into a validated RatingsTable.

    Args:
        path: CSV/TSV file
        schema: CsvSchema describing delimiter, column order and header

    Returns:
        RatingsTable with malformed and out-of-range rows dropped and counted;
        duplicate (user, item) pairs keep the last occurrence
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"ratings file not found: {path}")
    bad_lines = []

    def skip_bad_line(fields):
        bad_lines.append(fields)
        return None

    try:
        raw = pd.read_csv(
            path,
            sep=schema.delimiter,
            header=0 if schema.header else None,
            names=list(schema.columns),
            dtype=str,
            engine="python",
            on_bad_lines=skip_bad_line,
            skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError:
        logger.info(f"{path} is empty")
        return RatingsTable.empty()
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise DataError(f"could not read {path}: {exc}") from exc

    users = pd.to_numeric(raw["user_id"], errors="coerce")
    items = pd.to_numeric(raw["item_id"], errors="coerce")
    ratings = pd.to_numeric(raw["rating"], errors="coerce")
    if "timestamp" in raw:
        stamps = pd.to_numeric(raw["timestamp"], errors="coerce")
    else:
        stamps = pd.Series(np.nan, index=raw.index)
    parsed = users.notna() & items.notna() & ratings.notna()
    parsed &= (users % 1 == 0) & (items % 1 == 0)
    low, high = RATING_SCALE
    in_scale = ratings.between(low, high)
    keep = parsed & in_scale

    malformed = len(bad_lines) + int((~parsed).sum())
    rejected = int((parsed & ~in_scale).sum())
    if malformed or rejected:
        logger.warning(f"{path}: skipped {malformed} malformed rows and rejected {rejected} out-of-scale ratings")

    frame = pd.DataFrame({
        "user_id": users[keep].astype("int64"),
        "item_id": items[keep].astype("int64"),
        "rating": ratings[keep].astype("float64"),
        "timestamp": stamps[keep].astype("float64"),
    })
    frame = frame.drop_duplicates(subset=["user_id", "item_id"], keep="last").reset_index(drop=True)
    logger.info(f"Loaded {len(frame)} ratings from {path}")
    return RatingsTable(frame, rejected=rejected, malformed=malformed)


def _most_active(frame, key, target):
    counts = frame.groupby(key).size().reset_index(name="count")
    if target > len(counts):
        logger.warning(f"requested {target} {key} values but only {len(counts)} exist; clamping")
        target = len(counts)
    ranked = counts.sort_values(["count", key], ascending=[False, True], kind="stable")
    return np.sort(ranked[key].to_numpy()[:target])


def subsample(table, m_target, n_target, rule="most_active"):
    """
    Densify the m_target most active users and n_target most rated items.

    Both rankings count ratings over the whole table and break ties by
    ascending id. Rows and columns are ordered by ascending id.
    """
    if len(table) == 0:
        raise DataError("cannot subsample an empty ratings table")
    if rule not in SUBSAMPLE_RULES:
        raise ConfigError(f"unknown subsample rule {rule!r}; expected one of {SUBSAMPLE_RULES}")
    if m_target < 1 or n_target < 1:
        raise ConfigError(f"subsample targets must be positive, got {m_target} x {n_target}")
    frame = table.frame
    users = _most_active(frame, "user_id", m_target)
    items = _most_active(frame, "item_id", n_target)
    chosen = frame[frame["user_id"].isin(users) & frame["item_id"].isin(items)]
    rows = pd.Index(users).get_indexer(chosen["user_id"])
    cols = pd.Index(items).get_indexer(chosen["item_id"])
    values = np.zeros((users.size, items.size))
    mask = np.zeros(values.shape, dtype=bool)
    values[rows, cols] = chosen["rating"].to_numpy()
    mask[rows, cols] = True
    matrix = RatingMatrix(values, mask)
    logger.info(f"Subsampled {matrix.m} users x {matrix.n} items, sparsity {matrix.sparsity:.1%}")
    return matrix


def knn_impute(x, k_neighbors):
    """
    Fill every unobserved entry from the k nearest users who rated that item.

    Distance between users is the Euclidean distance over their commonly
    observed items divided by sqrt(overlap); users with no overlap are never
    neighbors. Ties go to the lower user index. With fewer than k rating
    neighbors all of them are used; with none the item mean is used, and the
    global mean for items nobody rated.

    Returns:
        Dense m x n array; observed entries are left untouched
    """
    if k_neighbors < 1:
        raise ConfigError(f"k_neighbors must be >= 1, got {k_neighbors}")
    values, mask = x.values, x.mask
    if not mask.any():
        raise DataError("cannot impute a matrix with no observed entries")
    item_counts = mask.sum(axis=0)
    item_means = values.sum(axis=0) / np.maximum(item_counts, 1)
    global_mean = float(values[mask].mean())
    fallback = np.where(item_counts > 0, item_means, global_mean)

    result = values.copy()
    for i in range(x.m):
        missing = np.flatnonzero(~mask[i])
        if missing.size == 0:
            continue
        common = mask & mask[i]
        overlap = common.sum(axis=1)
        squared = np.sum(np.where(common, values - values[i], 0.0) ** 2, axis=1)
        distance = np.full(x.m, np.inf)
        linked = overlap > 0
        distance[linked] = np.sqrt(squared[linked] / overlap[linked])
        distance[i] = np.inf
        order = np.argsort(distance, kind="stable")
        order = order[np.isfinite(distance[order])]

        rated = mask[np.ix_(order, missing)]
        chosen = rated & (np.cumsum(rated, axis=0) <= k_neighbors)
        counts = chosen.sum(axis=0)
        totals = np.sum(np.where(chosen, values[np.ix_(order, missing)], 0.0), axis=0)
        result[i, missing] = np.where(counts > 0, totals / np.maximum(counts, 1), fallback[missing])
    logger.info(f"KNN-imputed {int((~mask).sum())} entries with k={k_neighbors}")
    return result


def train_test_split(omega, fraction, seed):
    """Uniform random partition of omega into round(fraction * |omega|) training entries and the rest."""
    if not 0 < fraction < 1:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    mask = omega.mask if isinstance(omega, RatingMatrix) else np.asarray(omega, dtype=bool)
    flat = np.flatnonzero(mask)
    n_train = int(np.floor(fraction * flat.size + 0.5))
    order = get_rng(seed).permutation(flat.size)
    train = np.zeros(mask.shape, dtype=bool)
    train.flat[flat[order[:n_train]]] = True
    return SplitMask(omega_train=train, omega_test=mask & ~train, seed=seed, fraction=fraction)


def _draw_synthetic(config):
    rng = get_rng(config.seed)
    shape = (config.users, config.items)
    dense = np.clip(rng.normal(config.mean, config.std, size=shape), config.low, config.high)
    mask = rng.random(shape) < config.observed_fraction
    return dense, mask


def synthetic_ground_truth(config):
    """The complete clipped-normal matrix behind generate_synthetic(config)."""
    dense, _ = _draw_synthetic(config)
    return dense


def generate_synthetic(config):
    """Clipped normal ratings observed through an independent Bernoulli(observed_fraction) mask."""
    dense, mask = _draw_synthetic(config)
    matrix = RatingMatrix.from_dense(dense, mask, scale=(config.low, config.high))
    logger.info(f"Generated {matrix.m} x {matrix.n} synthetic ratings, {matrix.num_observed} observed")
    return matrix


def format_snapshot(x):
    lines = [f"{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} {x.m} {x.n} {x.num_observed}"]
    lines.extend(f"{i} {j} {x.values[i, j]:.6g}" for i, j in x.observed)
    return "\n".join(lines) + "\n"


def write_snapshot(x, path):
    atomic_write_text(path, format_snapshot(x))


def read_snapshot(path):
    """Parse a snapshot file back into a RatingMatrix (rating scale not enforced)."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"could not read snapshot {path}: {exc}") from exc
    header = lines[0].split() if lines else []
    if len(header) != 5 or header[0] != SNAPSHOT_MAGIC or header[1] != SNAPSHOT_VERSION:
        raise DataError(f"{path} is not a {SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} snapshot")
    try:
        m, n, count = (int(field) for field in header[2:])
    except ValueError:
        raise DataError(f"{path}: malformed snapshot header {lines[0]!r}") from None
    if m < 0 or n < 0 or count < 0:
        raise DataError(f"{path}: negative size in snapshot header {lines[0]!r}")
    entries = [line.split() for line in lines[1:] if line.strip()]
    if len(entries) != count:
        raise DataError(f"{path}: header declares {count} entries, found {len(entries)}")
    values = np.zeros((m, n))
    mask = np.zeros((m, n), dtype=bool)
    for number, entry in enumerate(entries, start=1):
        try:
            i, j, value = entry
            i, j, value = int(i), int(j), float(value)
        except ValueError:
            raise DataError(f"{path}: entry {number} is malformed: {' '.join(entry)!r}") from None
        if not (0 <= i < m and 0 <= j < n):
            raise DataError(f"{path}: entry {number} has index ({i}, {j}) outside the {m} x {n} matrix")
        values[i, j] = value
        mask[i, j] = True
    return RatingMatrix(values, mask, scale=None)
