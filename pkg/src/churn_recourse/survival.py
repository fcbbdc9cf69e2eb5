"""Survival trees with Kaplan-Meier leaves and a churn classifier on top.

The forest splits nodes by the two-sample log-rank statistic, stores a
product-limit curve at every leaf, and predicts by averaging leaf curves
pointwise over the union of their time grids.  The binary churn classifier
thresholds the predicted median lifetime at ``threshold_days``; the
continuous score is the ensemble survival probability at that horizon.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import ConfigError, DimensionError

FOREST_FORMAT = "churn-survival-forest"
FOREST_VERSION = 1


# ---------------------------------------------------------------------------
# Kaplan-Meier estimation
# ---------------------------------------------------------------------------


@dataclass
class SurvivalCurve:
    """Step function S(t) over an increasing time grid."""

    times: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.probs = np.asarray(self.probs, dtype=float)
        if self.times.shape != self.probs.shape:
            raise ConfigError("times and probs must have equal length")
        if self.times.size:
            if np.any(np.diff(self.times) <= 0):
                raise ConfigError("times must be strictly increasing")
            if np.any(np.diff(self.probs) > 1e-12):
                raise ConfigError("survival probabilities must be non-increasing")
            if self.probs[0] > 1.0 + 1e-12 or self.probs[-1] < -1e-12:
                raise ConfigError("survival probabilities must lie in [0, 1]")

    def probability_at(self, t: float) -> float:
        """S(t) via step lookup: value at the largest grid time <= t, else 1."""
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return 1.0 if idx < 0 else float(self.probs[idx])

    def median_time(self) -> float:
        """Smallest grid time with S <= 0.5; the last grid time if never reached."""
        if self.times.size == 0:
            raise ConfigError("median of an empty curve")
        below = np.nonzero(self.probs <= 0.5)[0]
        if below.size:
            return float(self.times[below[0]])
        return float(self.times[-1])


def km_estimate(lifetimes: Sequence[tuple[float, bool]]) -> SurvivalCurve:
    """Product-limit estimator over all distinct observed times.

    ``lifetimes`` is a sequence of (time, event_flag) pairs; event_flag False
    marks right censoring.  Censoring times appear in the grid but leave the
    running product unchanged.
    """
    if len(lifetimes) == 0:
        raise ConfigError("km_estimate needs at least one observation")
    t = np.array([p[0] for p in lifetimes], dtype=float)
    e = np.array([bool(p[1]) for p in lifetimes], dtype=bool)
    if np.any(t < 0):
        raise ConfigError("negative observation time")
    order = np.argsort(t, kind="stable")
    t, e = t[order], e[order]
    grid = np.unique(t)
    probs = np.empty_like(grid)
    n_at_risk = t.size
    s = 1.0
    for j, tj in enumerate(grid):
        at_tj = t == tj
        d = int(np.count_nonzero(e & at_tj))
        if d > 0:
            s *= 1.0 - d / n_at_risk
        probs[j] = s
        n_at_risk -= int(np.count_nonzero(at_tj))
    return SurvivalCurve(times=grid, probs=probs)


# ---------------------------------------------------------------------------
# Log-rank statistic
# ---------------------------------------------------------------------------


def logrank_statistic(
    group_a: Sequence[tuple[float, bool]], group_b: Sequence[tuple[float, bool]]
) -> float:
    """Squared standardized two-sample log-rank statistic (chi-square form).

    Sums observed-minus-expected events in group A over the pooled event
    times and normalizes by the hypergeometric variance.  Degenerate risk
    sets contribute nothing; a zero total variance yields 0 (no split
    signal), not an error.
    """
    if len(group_a) == 0 or len(group_b) == 0:
        raise ConfigError("both groups must be non-empty")
    ta = np.array([p[0] for p in group_a], dtype=float)
    ea = np.array([bool(p[1]) for p in group_a], dtype=bool)
    tb = np.array([p[0] for p in group_b], dtype=float)
    eb = np.array([bool(p[1]) for p in group_b], dtype=bool)
    t = np.concatenate([ta, tb])
    e = np.concatenate([ea, eb])
    in_a = np.zeros(t.size, dtype=bool)
    in_a[: ta.size] = True

    event_times = np.unique(t[e])
    if event_times.size == 0:
        return 0.0
    o_minus_e = 0.0
    variance = 0.0
    for tj in event_times:
        at_risk = t >= tj
        events_here = e & (t == tj)
        n = int(np.count_nonzero(at_risk))
        n_a = int(np.count_nonzero(at_risk & in_a))
        d = int(np.count_nonzero(events_here))
        d_a = int(np.count_nonzero(events_here & in_a))
        o_minus_e += d_a - d * n_a / n
        if n > 1:
            variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1)
    if variance <= 0.0:
        return 0.0
    return float(o_minus_e * o_minus_e / variance)


def _logrank_sweep(
    times: np.ndarray,
    events: np.ndarray,
    order: np.ndarray,
) -> np.ndarray:
    """Log-rank statistics for every prefix split of ``order``.

    Returns stat[p] for p = 1..m-1 where the left group is the first p
    samples in the given order.  Matches logrank_statistic exactly; the
    cumulative-sum formulation just evaluates all thresholds in one pass.
    """
    t = times[order]
    e = events[order]
    m = t.size
    event_times = np.unique(times[events])
    k = event_times.size
    if k == 0 or m < 2:
        return np.zeros(max(m - 1, 0))

    n_j = (times[:, None] >= event_times[None, :]).sum(axis=0).astype(float)
    d_j = np.zeros(k)
    np.add.at(d_j, np.searchsorted(event_times, times[events]), 1.0)

    risk = (t[:, None] >= event_times[None, :]).astype(float)
    event_mask = np.zeros((m, k))
    ev_rows = np.nonzero(e)[0]
    event_mask[ev_rows, np.searchsorted(event_times, t[ev_rows])] = 1.0

    n_a = np.cumsum(risk, axis=0)[:-1]     # (m-1, k): left at-risk for p=1..m-1
    d_a = np.cumsum(event_mask, axis=0)[:-1]

    with np.errstate(divide="ignore", invalid="ignore"):
        o_minus_e = d_a.sum(axis=1) - (n_a * (d_j / n_j)).sum(axis=1)
        coef = np.where(n_j > 1.0, d_j * (n_j - d_j) / ((n_j - 1.0) * n_j * n_j), 0.0)
    variance = (coef[None, :] * n_a * (n_j[None, :] - n_a)).sum(axis=1)
    stats = np.zeros(m - 1)
    ok = variance > 0.0
    stats[ok] = o_minus_e[ok] ** 2 / variance[ok]
    return stats


# ---------------------------------------------------------------------------
# Survival trees
# ---------------------------------------------------------------------------


@dataclass
class TreeNode:
    """Internal node (feature, threshold, children) or leaf (curve)."""

    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    curve: Optional[SurvivalCurve] = None
    n_samples: int = 0
    surv_at_horizon: Optional[float] = None

    @property
    def is_leaf(self) -> bool:
        return self.curve is not None


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 20
    min_leaf_size: int = 10
    features_per_split: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_leaf_size < 1:
            raise ConfigError(f"min_leaf_size must be >= 1, got {self.min_leaf_size}")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ConfigError("features_per_split must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


def _best_split(
    x_mat: np.ndarray,
    times: np.ndarray,
    events: np.ndarray,
    candidates: Iterable[int],
    min_leaf: int,
) -> Optional[tuple[float, int, float]]:
    """Best (stat, feature, threshold) over the offered features, or None.

    Ties resolve to the lowest feature index, then the smallest threshold,
    so refits are reproducible.
    """
    m = times.size
    best: Optional[tuple[float, int, float]] = None
    for f in sorted(int(c) for c in candidates):
        col = x_mat[:, f]
        order = np.argsort(col, kind="stable")
        sorted_col = col[order]
        valid = sorted_col[:-1] < sorted_col[1:]
        p_range = np.arange(1, m)
        valid &= (p_range >= min_leaf) & (m - p_range >= min_leaf)
        if not np.any(valid):
            continue
        stats = _logrank_sweep(times, events, order)
        stats = np.where(valid, stats, -np.inf)
        p_best = int(np.argmax(stats))  # first occurrence = smallest threshold
        stat = float(stats[p_best])
        if stat <= 0.0:
            continue
        threshold = float((sorted_col[p_best] + sorted_col[p_best + 1]) / 2.0)
        if best is None or stat > best[0]:
            best = (stat, f, threshold)
    return best


def _grow_tree(
    x_mat: np.ndarray,
    times: np.ndarray,
    events: np.ndarray,
    config: ForestConfig,
    n_candidates: int,
    rng: np.random.Generator,
    horizon: float,
) -> TreeNode:
    m = times.size
    split = None
    if m >= 2 * config.min_leaf_size:
        candidates = rng.choice(x_mat.shape[1], size=n_candidates, replace=False)
        split = _best_split(x_mat, times, events, candidates, config.min_leaf_size)
    if split is None:
        curve = km_estimate(list(zip(times, events)))
        return TreeNode(
            curve=curve,
            n_samples=m,
            surv_at_horizon=curve.probability_at(horizon),
        )
    _, f, thr = split
    mask = x_mat[:, f] <= thr
    left = _grow_tree(x_mat[mask], times[mask], events[mask], config, n_candidates, rng, horizon)
    right = _grow_tree(x_mat[~mask], times[~mask], events[~mask], config, n_candidates, rng, horizon)
    return TreeNode(feature=f, threshold=thr, left=left, right=right, n_samples=m)


def _route(node: TreeNode, x: np.ndarray) -> TreeNode:
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node


def _route_batch(node: TreeNode, x_mat: np.ndarray) -> list[TreeNode]:
    out: list[Optional[TreeNode]] = [None] * x_mat.shape[0]
    stack = [(node, np.arange(x_mat.shape[0]))]
    while stack:
        nd, idx = stack.pop()
        if idx.size == 0:
            continue
        if nd.is_leaf:
            for i in idx:
                out[i] = nd
            continue
        mask = x_mat[idx, nd.feature] <= nd.threshold
        stack.append((nd.left, idx[mask]))
        stack.append((nd.right, idx[~mask]))
    return out  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# Forest / churn classifier
# ---------------------------------------------------------------------------


@dataclass
class ChurnClassifier:
    """Survival-forest classifier: class 1 = predicted lifetime >= threshold."""

    trees: list[TreeNode]
    threshold_days: float
    n_features: int
    config: ForestConfig = field(default_factory=ForestConfig)

    def __post_init__(self):
        if not self.trees:
            raise ConfigError("forest must contain at least one tree")

    # -- single-vector API ---------------------------------------------------

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_features,):
            raise DimensionError(
                f"expected feature vector of length {self.n_features}, got shape {x.shape}"
            )
        return x

    def predict_curve(self, x: np.ndarray) -> SurvivalCurve:
        """Average the routed leaf curves pointwise over their union grid."""
        x = self._check(x)
        leaves = [_route(t, x) for t in self.trees]
        return _average_curves([lf.curve for lf in leaves])

    def predict_lifetime(self, x: np.ndarray) -> float:
        return self.predict_curve(x).median_time()

    def classify(self, x: np.ndarray) -> int:
        return int(self.predict_lifetime(x) >= self.threshold_days)

    def class_score(self, x: np.ndarray) -> float:
        """Ensemble survival probability at the horizon, S(threshold_days)."""
        x = self._check(x)
        return float(np.mean([_route(t, x).surv_at_horizon for t in self.trees]))

    # -- batch API -------------------------------------------------------------

    def _check_matrix(self, x_mat: np.ndarray) -> np.ndarray:
        x_mat = np.asarray(x_mat, dtype=float)
        if x_mat.ndim != 2 or x_mat.shape[1] != self.n_features:
            raise DimensionError(
                f"expected matrix with {self.n_features} columns, got shape {x_mat.shape}"
            )
        return x_mat

    def class_scores(self, x_mat: np.ndarray) -> np.ndarray:
        x_mat = self._check_matrix(x_mat)
        acc = np.zeros(x_mat.shape[0])
        for tree in self.trees:
            leaves = _route_batch(tree, x_mat)
            acc += np.array([lf.surv_at_horizon for lf in leaves])
        return acc / len(self.trees)

    def predict_lifetimes(self, x_mat: np.ndarray) -> np.ndarray:
        x_mat = self._check_matrix(x_mat)
        per_tree = [_route_batch(tree, x_mat) for tree in self.trees]
        out = np.empty(x_mat.shape[0])
        for i in range(x_mat.shape[0]):
            out[i] = _average_curves([per_tree[t][i].curve for t in range(len(self.trees))]).median_time()
        return out

    def classify_batch(self, x_mat: np.ndarray) -> np.ndarray:
        return (self.predict_lifetimes(x_mat) >= self.threshold_days).astype(int)

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": FOREST_FORMAT,
            "version": FOREST_VERSION,
            "threshold_days": self.threshold_days,
            "n_features": self.n_features,
            "config": {
                "n_trees": self.config.n_trees,
                "min_leaf_size": self.config.min_leaf_size,
                "features_per_split": self.config.features_per_split,
                "seed": self.config.seed,
            },
            "trees": [_node_to_json(t) for t in self.trees],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ChurnClassifier":
        if doc.get("format") != FOREST_FORMAT:
            raise ConfigError(f"not a survival forest file (format={doc.get('format')!r})")
        if doc.get("version") != FOREST_VERSION:
            raise ConfigError(f"unsupported forest version {doc.get('version')!r}")
        cfg = doc.get("config", {})
        return cls(
            trees=[_node_from_json(t) for t in doc["trees"]],
            threshold_days=float(doc["threshold_days"]),
            n_features=int(doc["n_features"]),
            config=ForestConfig(
                n_trees=cfg.get("n_trees", len(doc["trees"])),
                min_leaf_size=cfg.get("min_leaf_size", 10),
                features_per_split=cfg.get("features_per_split"),
                seed=cfg.get("seed", 0),
            ),
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "ChurnClassifier":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _average_curves(curves: list[SurvivalCurve]) -> SurvivalCurve:
    if len(curves) == 1:
        return curves[0]
    grid = np.unique(np.concatenate([c.times for c in curves]))
    acc = np.zeros(grid.size)
    for c in curves:
        idx = np.searchsorted(c.times, grid, side="right") - 1
        vals = np.where(idx >= 0, c.probs[np.clip(idx, 0, None)], 1.0)
        acc += vals
    return SurvivalCurve(times=grid, probs=acc / len(curves))


def _node_to_json(node: TreeNode) -> dict:
    if node.is_leaf:
        return {
            "leaf": {
                "times": node.curve.times.tolist(),
                "probs": node.curve.probs.tolist(),
                "n": node.n_samples,
                "surv_at_horizon": node.surv_at_horizon,
            }
        }
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "n": node.n_samples,
        "left": _node_to_json(node.left),
        "right": _node_to_json(node.right),
    }


def _node_from_json(doc: dict) -> TreeNode:
    if "leaf" in doc:
        leaf = doc["leaf"]
        return TreeNode(
            curve=SurvivalCurve(times=np.array(leaf["times"]), probs=np.array(leaf["probs"])),
            n_samples=int(leaf["n"]),
            surv_at_horizon=float(leaf["surv_at_horizon"]),
        )
    return TreeNode(
        feature=int(doc["feature"]),
        threshold=float(doc["threshold"]),
        n_samples=int(doc.get("n", 0)),
        left=_node_from_json(doc["left"]),
        right=_node_from_json(doc["right"]),
    )


def fit(data: Dataset, config: ForestConfig) -> ChurnClassifier:
    """Train the forest: bootstrap per tree, log-rank splits, KM leaves.

    Each tree draws from an independent stream derived from the master seed,
    so results do not depend on fitting order.
    """
    if len(data.records) == 0:
        raise ConfigError("training data is empty")
    x_mat = data.feature_matrix()
    times = data.lifetimes()
    events = data.event_flags()
    n, f = x_mat.shape
    n_candidates = config.features_per_split or math.ceil(math.sqrt(f))
    n_candidates = min(n_candidates, f)

    trees = []
    for i in range(config.n_trees):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, i]))
        boot = rng.integers(0, n, size=n)
        trees.append(
            _grow_tree(
                x_mat[boot], times[boot], events[boot], config, n_candidates, rng,
                horizon=data.threshold_days,
            )
        )
    return ChurnClassifier(
        trees=trees,
        threshold_days=data.threshold_days,
        n_features=f,
        config=config,
    )
