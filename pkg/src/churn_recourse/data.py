"""User-behavior panels with right-censored lifetimes.

Provides the synthetic generator, CSV/JSON ingestion, train/test splitting
and the binary ``label`` rule shared by every downstream stage: a user is
labelled 1 when the observed lifetime reaches ``threshold_days`` (and was not
censored earlier), 0 when an uncensored lifetime falls short, and None
(indeterminate) when censoring happened before the threshold.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, ParseError

DIRECTIONS = ("free", "increase_only", "decrease_only")
WINDOWS = ("first15", "last15", "first30", "last60", "other")

DEFAULT_THRESHOLD_DAYS = 90.0


@dataclass(frozen=True)
class FeatureMeta:
    """Actionability, direction and bound constraints for one feature."""

    name: str
    actionable: bool
    direction: str = "free"
    lower_bound: float = 0.0
    upper_bound: float = 1.0
    aggregation_window: str = "other"

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"unknown direction {self.direction!r} for feature {self.name!r}")
        if self.aggregation_window not in WINDOWS:
            raise ConfigError(
                f"unknown aggregation window {self.aggregation_window!r} for feature {self.name!r}"
            )
        if not self.lower_bound <= self.upper_bound:
            raise ConfigError(
                f"feature {self.name!r}: lower_bound {self.lower_bound} > upper_bound {self.upper_bound}"
            )
        if not self.actionable and self.direction != "free":
            raise ConfigError(
                f"feature {self.name!r}: non-actionable features must have direction 'free'"
            )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "actionable": self.actionable,
            "direction": self.direction,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "aggregation_window": self.aggregation_window,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureMeta":
        return cls(
            name=d["name"],
            actionable=bool(d["actionable"]),
            direction=d["direction"],
            lower_bound=float(d["lower_bound"]),
            upper_bound=float(d["upper_bound"]),
            aggregation_window=d.get("aggregation_window", _window_from_name(d["name"])),
        )


def _window_from_name(name: str) -> str:
    for w in ("first15", "last15", "first30", "last60"):
        if w in name:
            return w
    return "other"


@dataclass
class UserRecord:
    """One user: feature vector, observed lifetime, censoring flag, label."""

    user_id: str
    features: np.ndarray
    lifetime_days: float
    censored: bool
    label: Optional[int] = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 1:
            raise ConfigError(f"user {self.user_id}: features must be a flat vector")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError(f"user {self.user_id}: non-finite feature value")
        if self.lifetime_days < 0:
            raise ConfigError(f"user {self.user_id}: negative lifetime {self.lifetime_days}")


def resolve_label(lifetime_days: float, censored: bool, threshold_days: float) -> Optional[int]:
    """Binary label rule. None marks censoring before the threshold."""
    if lifetime_days >= threshold_days:
        return 1
    return None if censored else 0


@dataclass
class Dataset:
    """A list of user records plus feature metadata and the label threshold."""

    records: list[UserRecord]
    meta: list[FeatureMeta]
    threshold_days: float = DEFAULT_THRESHOLD_DAYS
    split_tag: str = "all"

    def __post_init__(self):
        f = len(self.meta)
        for r in self.records:
            if r.features.shape[0] != f:
                raise ConfigError(
                    f"user {r.user_id}: {r.features.shape[0]} features, meta declares {f}"
                )
        lo = np.array([m.lower_bound for m in self.meta])
        hi = np.array([m.upper_bound for m in self.meta])
        for r in self.records:
            bad = np.where((r.features < lo) | (r.features > hi))[0]
            if bad.size:
                j = int(bad[0])
                raise ConfigError(
                    f"user {r.user_id}: feature {self.meta[j].name!r} value "
                    f"{r.features[j]} outside [{lo[j]}, {hi[j]}]"
                )

    @property
    def n_features(self) -> int:
        return len(self.meta)

    def __len__(self) -> int:
        return len(self.records)

    def feature_matrix(self) -> np.ndarray:
        return np.array([r.features for r in self.records], dtype=float)

    def lifetimes(self) -> np.ndarray:
        return np.array([r.lifetime_days for r in self.records], dtype=float)

    def event_flags(self) -> np.ndarray:
        """True where the churn event was observed (not censored)."""
        return np.array([not r.censored for r in self.records], dtype=bool)

    def labels(self) -> list[Optional[int]]:
        return [r.label for r in self.records]

    def determinate(self) -> "Dataset":
        """Records with a usable binary label (drops censored-before-threshold)."""
        return Dataset(
            records=[r for r in self.records if r.label is not None],
            meta=self.meta,
            threshold_days=self.threshold_days,
            split_tag=self.split_tag,
        )


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

BASE_METRICS = [
    # (metric name, actionable, direction when actionable)
    ("action_count", True, "increase_only"),
    ("session_count", True, "increase_only"),
    ("connection_time", True, "increase_only"),
    ("elearning_action_count", True, "increase_only"),
    ("connected_days", True, "increase_only"),
    ("days_between_actions", True, "decrease_only"),
]
META_WINDOWS = ["first15", "first30", "last15", "last60"]

# Default planted effect: log-lifetime weight per feature index.  All default
# weights are positive so that raising the feature never shortens the
# underlying survival scale.  Indices follow default_feature_meta() order;
# the default signal lives on actionable (trailing-window) features.
DEFAULT_SIGNAL = {
    2: 0.9,   # action_count_last15
    6: 0.6,   # session_count_last15
    10: 0.6,  # connection_time_last15
    11: 0.8,  # connection_time_last60
    14: 0.7,  # elearning_action_count_last15
    18: 0.6,  # connected_days_last15
}

# Signal features draw on independent engagement factors so no single split
# can capture the whole effect; indices not listed load on factor 0.
FACTOR_OF_FEATURE = {2: 0, 6: 0, 11: 1, 10: 1, 14: 2, 18: 2}


def default_feature_meta(n_features: int = 24) -> list[FeatureMeta]:
    """Window-tagged activity features.

    Windows over the first days of a user's history describe the past and are
    locked (non-actionable); trailing-window metrics can still be moved.
    """
    metas = []
    for metric, actionable, direction in BASE_METRICS:
        for window in META_WINDOWS:
            locked = window.startswith("first")
            metas.append(
                FeatureMeta(
                    name=f"{metric}_{window}_norm_max",
                    actionable=actionable and not locked,
                    direction=direction if (actionable and not locked) else "free",
                    lower_bound=0.0,
                    upper_bound=1.0,
                    aggregation_window=window,
                )
            )
    if n_features > len(metas):
        raise ConfigError(f"default meta supports at most {len(metas)} features")
    return metas[:n_features]


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic user-panel generator."""

    n_users: int = 2000
    n_features: int = 24
    seed: int = 0
    censor_rate: float = 0.15
    signal: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_SIGNAL))
    base_scale_days: float = 85.0
    shape: float = 3.5
    threshold_days: float = DEFAULT_THRESHOLD_DAYS

    def __post_init__(self):
        if self.n_users < 2:
            raise ConfigError(f"n_users must be >= 2, got {self.n_users}")
        if self.n_features < 2:
            raise ConfigError(f"n_features must be >= 2, got {self.n_features}")
        if not 0.0 <= self.censor_rate < 1.0:
            raise ConfigError(f"censor_rate must be in [0, 1), got {self.censor_rate}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        for j in self.signal:
            if not 0 <= j < self.n_features:
                raise ConfigError(f"signal feature index {j} out of range")


def survival_scale(config: SynthConfig, features: np.ndarray) -> float:
    """Log-logistic scale (median lifetime in days) for one feature vector.

    Monotone in every planted-signal feature: positive weights can only
    lengthen the scale as the feature grows.
    """
    z = sum(w * (features[j] - 0.5) for j, w in config.signal.items())
    return config.base_scale_days * math.exp(z)


def synthesize(config: SynthConfig) -> Dataset:
    """Draw a synthetic panel: correlated activity features, log-logistic
    lifetimes whose scale follows the planted signal, independent censoring.
    """
    rng = np.random.default_rng(config.seed)
    n, f = config.n_users, config.n_features
    meta = default_feature_meta(f)

    # Independent latent engagement factors drive the signal features; a few
    # non-signal features get a weak loading on the first factor so the panel
    # carries realistic correlations.
    n_factors = max(FACTOR_OF_FEATURE.values()) + 1
    factors = rng.beta(2.0, 2.0, size=(n, n_factors))
    loadings = np.zeros(f)
    factor_idx = np.zeros(f, dtype=int)
    for j in config.signal:
        loadings[j] = 0.75
        factor_idx[j] = FACTOR_OF_FEATURE.get(j, 0)
    for j in (0, 1, 8, 17):
        if j < f and loadings[j] == 0.0:
            loadings[j] = 0.15
    noise = rng.beta(2.0, 2.0, size=(n, f))
    raw = factors[:, factor_idx] * loadings[None, :] + noise * (1.0 - loadings[None, :])

    # Imitate max-normalized aggregates: scale each column so its max is 1.
    col_max = raw.max(axis=0)
    col_max[col_max == 0.0] = 1.0
    features = raw / col_max[None, :]

    scales = np.array([survival_scale(config, features[i]) for i in range(n)])
    u = rng.uniform(1e-9, 1.0 - 1e-9, size=n)
    lifetimes = scales * (u / (1.0 - u)) ** (1.0 / config.shape)

    censor_mask = rng.uniform(size=n) < config.censor_rate
    censor_frac = rng.uniform(size=n)
    observed = np.where(censor_mask, lifetimes * censor_frac, lifetimes)

    records = []
    for i in range(n):
        lifetime = float(observed[i])
        censored = bool(censor_mask[i])
        records.append(
            UserRecord(
                user_id=f"u{i:05d}",
                features=features[i],
                lifetime_days=lifetime,
                censored=censored,
                label=resolve_label(lifetime, censored, config.threshold_days),
            )
        )
    return Dataset(records=records, meta=meta, threshold_days=config.threshold_days)


# ---------------------------------------------------------------------------
# CSV / JSON ingestion
# ---------------------------------------------------------------------------

RESERVED_COLUMNS = ["user_id", "lifetime_days", "censored"]


def load_meta(meta_path: str) -> list[FeatureMeta]:
    """Feature metadata file: JSON array, one object per feature."""
    with open(meta_path, encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list) or not entries:
        raise ParseError(f"{meta_path}: expected a non-empty JSON array of feature objects")
    return [FeatureMeta.from_dict(e) for e in entries]


def save_meta(meta: Sequence[FeatureMeta], meta_path: str) -> None:
    with open(meta_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([m.to_dict() for m in meta], fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_csv(path: str, meta_path: str, threshold_days: float = DEFAULT_THRESHOLD_DAYS) -> Dataset:
    """Read a user panel CSV laid out as user_id,lifetime_days,censored,<features...>."""
    meta = load_meta(meta_path)
    expected = RESERVED_COLUMNS + [m.name for m in meta]
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header != expected:
            missing = [c for c in expected if c not in header]
            if missing:
                raise ParseError(f"{path}: missing column {missing[0]!r}")
            raise ParseError(
                f"{path}: header mismatch; expected {len(expected)} columns "
                f"{expected[:4]}..., got {header[:4]}..."
            )
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ParseError(f"{path}: row {rownum} has {len(row)} cells, expected {len(expected)}")
            user_id = row[0]
            try:
                lifetime = float(row[1])
            except ValueError:
                raise ParseError(f"{path}: row {rownum}, column 'lifetime_days': non-numeric {row[1]!r}") from None
            cens_raw = row[2].strip().lower()
            if cens_raw not in ("true", "false"):
                raise ParseError(f"{path}: row {rownum}, column 'censored': expected true/false, got {row[2]!r}")
            censored = cens_raw == "true"
            values = np.empty(len(meta))
            for j, cell in enumerate(row[3:]):
                try:
                    values[j] = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {rownum}, column {meta[j].name!r}: non-numeric {cell!r}"
                    ) from None
            records.append(
                UserRecord(
                    user_id=user_id,
                    features=values,
                    lifetime_days=lifetime,
                    censored=censored,
                    label=resolve_label(lifetime, censored, threshold_days),
                )
            )
    return Dataset(records=records, meta=meta, threshold_days=threshold_days)


def save_csv(dataset: Dataset, path: str) -> None:
    header = RESERVED_COLUMNS + [m.name for m in dataset.meta]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in dataset.records:
            writer.writerow(
                [r.user_id, repr(r.lifetime_days), "true" if r.censored else "false"]
                + [repr(float(v)) for v in r.features]
            )


# ---------------------------------------------------------------------------
# Splitting and normalization
# ---------------------------------------------------------------------------


def split(dataset: Dataset, train_fraction: float = 0.5, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Disjoint user partition of sizes ceil(n*f) and n - ceil(n*f)."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset.records)
    if n == 0:
        raise ConfigError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = math.ceil(n * train_fraction)
    train_idx = sorted(order[:n_train].tolist())
    test_idx = sorted(order[n_train:].tolist())
    make = lambda idx, tag: Dataset(
        records=[dataset.records[i] for i in idx],
        meta=dataset.meta,
        threshold_days=dataset.threshold_days,
        split_tag=tag,
    )
    return make(train_idx, "train"), make(test_idx, "test")


def fit_max_normalizer(train: Dataset) -> np.ndarray:
    """Per-feature max over the training split; reused on held-out data."""
    scales = np.abs(train.feature_matrix()).max(axis=0)
    scales[scales == 0.0] = 1.0
    return scales


def apply_max_normalizer(dataset: Dataset, scales: np.ndarray) -> Dataset:
    if scales.shape[0] != dataset.n_features:
        raise ConfigError("normalizer length does not match feature count")
    records = [
        replace(r, features=np.clip(r.features / scales, 0.0, 1.0))
        for r in dataset.records
    ]
    return Dataset(
        records=records,
        meta=dataset.meta,
        threshold_days=dataset.threshold_days,
        split_tag=dataset.split_tag,
    )
