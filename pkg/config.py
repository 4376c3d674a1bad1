"""
Experiment configuration.

A run is described by one YAML mapping whose sections mirror the dataclasses
below. Unknown keys are rejected with their dotted path, every seed is made
explicit, and the resolved config is stored in the run manifest.

Example:
    seed: 7
    dataset:
      kind: movielens
      path: data/ml-100k/u.data
    softimpute:
      epsilon: 1.0e-5
    metrics:
      k: [10, 20]
"""
import copy
import logging
import types
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from datasets import SCHEMAS, SUBSAMPLE_RULES, CsvSchema, SyntheticConfig
from errors import ConfigError
from evaluation import CANDIDATE_MODES, RANK_METHODS
from group_rec import MEAN_DIVISORS, AggregationKind
from mf_als import AlsConfig
from softimpute import SoftImputeConfig

logger = logging.getLogger(__name__)

DATASET_KINDS = ("synthetic", "movielens", "goodbooks", "csv")
# most active users x most rated items kept from each public dataset
PRESET_TARGETS = {"movielens": (943, 500), "goodbooks": (2000, 200)}
TABLE_LAMBDAS = (0.001, 0.01, 0.1, 1.0, 10.0)


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    name: str | None = None
    path: str | None = None
    delimiter: str = ","
    columns: tuple[str, ...] = ("user_id", "item_id", "rating")
    header: bool = True
    users: int | None = None
    items: int | None = None
    rule: str = "most_active"
    knn_k: int = 10
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind != "synthetic" and not self.path:
            raise ConfigError(f"a {self.kind} dataset needs a path")
        if self.rule not in SUBSAMPLE_RULES:
            raise ConfigError(f"rule must be one of {SUBSAMPLE_RULES}, got {self.rule!r}")
        if self.knn_k < 1:
            raise ConfigError(f"knn_k must be >= 1, got {self.knn_k}")
        for key in ("users", "items"):
            value = getattr(self, key)
            if value is not None and value < 1:
                raise ConfigError(f"{key} must be >= 1, got {value}")

    @property
    def label(self):
        return self.name or self.kind

    def schema(self):
        if self.kind in SCHEMAS:
            return SCHEMAS[self.kind]
        return CsvSchema(self.delimiter, tuple(self.columns), self.header)

    def targets(self):
        """(users, items) subsample targets; None keeps every user or item."""
        preset = PRESET_TARGETS.get(self.kind, (None, None))
        return (
            self.users if self.users is not None else preset[0],
            self.items if self.items is not None else preset[1],
        )


@dataclass(frozen=True)
class SplitConfig:
    fraction: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise ConfigError(f"fraction must be in (0, 1), got {self.fraction}")


@dataclass(frozen=True)
class GroupsConfig:
    sizes: tuple[int, ...] = (5, 10, 15, 20, 25)
    instances: int = 10
    seed: int = 0
    mean_divisor: str = "raters"

    def __post_init__(self):
        if not self.sizes or min(self.sizes) < 1:
            raise ConfigError(f"sizes must be a non-empty list of positive integers, got {list(self.sizes)}")
        if self.instances < 1:
            raise ConfigError(f"instances must be >= 1, got {self.instances}")
        if self.mean_divisor not in MEAN_DIVISORS:
            raise ConfigError(f"mean_divisor must be one of {MEAN_DIVISORS}, got {self.mean_divisor!r}")


@dataclass(frozen=True)
class MetricsConfig:
    k: tuple[int, ...] = (20,)
    tau: float = 3.5
    candidates: str = "unseen"

    def __post_init__(self):
        if not self.k or min(self.k) < 1:
            raise ConfigError(f"k must be a positive integer or list of them, got {list(self.k)}")
        if self.candidates not in CANDIDATE_MODES:
            raise ConfigError(f"candidates must be one of {CANDIDATE_MODES}, got {self.candidates!r}")


@dataclass(frozen=True)
class RankTableConfig:
    lambdas: tuple[float, ...] = TABLE_LAMBDAS
    group_size: int = 5

    def __post_init__(self):
        if not self.lambdas or min(self.lambdas) <= 0:
            raise ConfigError(f"lambdas must be a non-empty list of positive values, got {list(self.lambdas)}")
        if self.group_size < 1:
            raise ConfigError(f"group_size must be >= 1, got {self.group_size}")


@dataclass(frozen=True)
class ConvergenceConfig:
    # None runs at softimpute.lambda_min
    lam: float | None = None

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise ConfigError(f"lam must be > 0, got {self.lam}")


@dataclass(frozen=True)
class OutputConfig:
    out: str = "results"
    emit_svg: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    methods: tuple[str, ...] = RANK_METHODS
    af_aggregation: str = "average"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    softimpute: SoftImputeConfig = field(default_factory=SoftImputeConfig)
    als: AlsConfig = field(default_factory=AlsConfig)
    groups: GroupsConfig = field(default_factory=GroupsConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    rank_table: RankTableConfig = field(default_factory=RankTableConfig)
    convergence: ConvergenceConfig = field(default_factory=ConvergenceConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("methods must name at least one of gsi, wbf, af")
        unknown = sorted(set(self.methods) - set(RANK_METHODS))
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; expected a subset of {list(RANK_METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError(f"methods contains duplicates: {list(self.methods)}")
        valid = [kind.value for kind in AggregationKind]
        if self.af_aggregation not in valid:
            raise ConfigError(f"af_aggregation must be one of {valid}, got {self.af_aggregation!r}")

    @property
    def aggregation(self):
        return AggregationKind(self.af_aggregation)

    @property
    def convergence_lambda(self):
        return self.convergence.lam if self.convergence.lam is not None else self.softimpute.lambda_min

    def to_dict(self):
        return _plain(asdict(self))


# sections whose seed follows the top-level seed unless set explicitly
SEEDED_SECTIONS = (("split",), ("groups",), ("softimpute",), ("als",), ("dataset", "synthetic"))


def _plain(value):
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def _coerce(value, hint, key):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is tuple:
        items = value if isinstance(value, (list, tuple)) else [value]
        return tuple(_coerce(item, args[0], key) for item in items)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [arg for arg in args if arg is not type(None)]
        return _coerce(value, inner[0], key)
    try:
        if hint is bool:
            if not isinstance(value, bool):
                raise ValueError
            return value
        if hint is int:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        if hint is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if hint is str:
            if not isinstance(value, str):
                raise ValueError
            return value
    except (TypeError, ValueError, OverflowError):
        raise ConfigError(f"{key}: expected {hint.__name__}, got {value!r}") from None
    return value


def _build(cls, raw, prefix=""):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'} must be a mapping, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"unknown config key {prefix}{key}")
    kwargs = {}
    for name, value in raw.items():
        hint = hints[name]
        if is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value, hint, f"{prefix}{name}")
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from None


def _section(raw, path):
    node = raw
    for key in path:
        child = node.get(key)
        if child is None:
            child = {}
            node[key] = child
        if not isinstance(child, dict):
            return None
        node = child
    return node


def _set_dotted(raw, key, value):
    *parents, leaf = key.split(".")
    node = raw
    for part in parents:
        child = node.setdefault(part, {})
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigError(f"cannot set {key}: {part} is not a section")
        node = child
    node[leaf] = value
    return raw


def apply_override(raw, assignment):
    """Set a dotted key from a "section.key=value" string; the value is parsed as YAML."""
    key, sep, text = assignment.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} must look like section.key=value")
    try:
        value = yaml.safe_load(text) if text.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: {exc}") from None
    return _set_dotted(raw, key, value)


def read_config_file(path):
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"could not read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return raw


def resolve_config(raw, overrides=()):
    """
    Build an ExperimentConfig from a raw mapping plus "key=value" overrides.

    The top-level seed is copied into every seeded section that does not set
    its own, so the resolved config names every seed explicitly.
    """
    raw = copy.deepcopy(dict(raw or {}))
    for assignment in overrides:
        apply_override(raw, assignment)
    seed = _coerce(raw.get("seed", 0), int, "seed")
    raw["seed"] = seed
    for path in SEEDED_SECTIONS:
        section = _section(raw, path)
        if section is not None and section.get("seed") is None:
            section["seed"] = seed
    config = _build(ExperimentConfig, raw)
    logger.debug(f"Resolved config: {config.to_dict()}")
    return config


def load_config(path=None, overrides=(), seed=None, out=None, threads=None, emit_svg=None):
    """
    Load a YAML config (or the defaults) and apply command-line values.

    Explicit flags take precedence over both the file and --set overrides.
    """
    raw = read_config_file(path) if path is not None else {}
    for assignment in overrides:
        apply_override(raw, assignment)
    flags = {"seed": seed, "output.out": None if out is None else str(out), "output.threads": threads}
    if emit_svg:
        flags["output.emit_svg"] = True
    for key, value in flags.items():
        if value is not None:
            _set_dotted(raw, key, value)
    return resolve_config(raw)
