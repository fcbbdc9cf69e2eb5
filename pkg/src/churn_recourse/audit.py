"""Recourse-as-auditing exports: PCA scatter and cost histograms.

Everything here produces data files (CSV/JSON) for offline plotting; no
rendering.  PCA is fitted on the original training features, mean-centered
without variance scaling (features arrive max-normalized already).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .countergan import RecourseAction
from .errors import ConfigError, DimensionError


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, F), unit rows, orthogonal
    explained_variance_shares: np.ndarray  # (k,)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.mean.shape[0]:
            raise DimensionError(
                f"expected {self.mean.shape[0]} features, got {x.shape[-1]}"
            )
        return (x - self.mean) @ self.components.T

    def to_json(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance_shares": self.explained_variance_shares.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PcaModel":
        return cls(
            mean=np.array(doc["mean"], dtype=float),
            components=np.array(doc["components"], dtype=float),
            explained_variance_shares=np.array(doc["explained_variance_shares"], dtype=float),
        )


def fit_pca(data: np.ndarray, n_components: int = 2) -> PcaModel:
    """Mean-centered covariance eigendecomposition, top components first.

    Sign convention: the largest-magnitude entry of each component is made
    positive, so refits are reproducible.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ConfigError(f"PCA needs at least a 2x2 matrix, got shape {x.shape}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    total = float(np.trace(cov))
    if total <= 1e-300:
        raise ConfigError("PCA on degenerate data: all rows are identical")
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n_components]
    comps = eigvecs[:, order].T
    for i in range(comps.shape[0]):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    shares = np.clip(eigvals[order], 0.0, None) / total
    return PcaModel(mean=mean, components=comps, explained_variance_shares=shares)


# ---------------------------------------------------------------------------
# Scatter (pre vs post recourse in component space)
# ---------------------------------------------------------------------------

SCATTER_COLUMNS = ["user_id", "pc1", "pc2", "phase", "y", "post_class"]


def build_scatter(
    actions: Sequence[RecourseAction],
    pca: PcaModel,
    truths: dict[str, Optional[int]],
) -> list[dict]:
    """Two rows per denied user with an action: pre (x) and post (x + a).

    Each row carries the true outcome y and the action's efficacy verdict,
    giving the four quadrant groups (y, post_class).
    """
    rows = []
    for a in actions:
        pre = pca.transform(a.counterfactual - a.delta)
        post = pca.transform(a.counterfactual)
        y = truths.get(a.user_id)
        for phase, point in (("pre", pre), ("post", post)):
            rows.append(
                {
                    "user_id": a.user_id,
                    "pc1": float(point[0]),
                    "pc2": float(point[1]) if point.shape[0] > 1 else 0.0,
                    "phase": phase,
                    "y": y,
                    "post_class": a.post_class,
                }
            )
    return rows


def write_scatter_csv(rows: Sequence[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCATTER_COLUMNS)
        for r in rows:
            writer.writerow(
                [r["user_id"], repr(r["pc1"]), repr(r["pc2"]), r["phase"],
                 "" if r["y"] is None else r["y"], r["post_class"]]
            )


# ---------------------------------------------------------------------------
# Cost histograms
# ---------------------------------------------------------------------------


@dataclass
class HistogramTable:
    split_by: str
    feature_index: Optional[int]
    bin_edges: np.ndarray  # (bins + 1,)
    counts: dict[str, np.ndarray]  # group label -> (bins,)

    def total(self) -> int:
        return int(sum(c.sum() for c in self.counts.values()))


def cost_histograms(
    actions: Sequence[RecourseAction],
    split_by: str,
    feature_index: Optional[int] = None,
    truths: Optional[dict[str, Optional[int]]] = None,
    bins: int = 20,
) -> HistogramTable:
    """Fixed-width histogram of action costs per split group.

    split_by "efficacy" groups by post_class; "true_outcome" groups by the
    observed label (requires truths; indeterminate users are dropped).  With
    feature_index set, the cost is that coordinate's squared delta alone.
    """
    if len(actions) == 0:
        raise ConfigError("no actions to histogram")
    if split_by not in ("efficacy", "true_outcome"):
        raise ConfigError(f"unknown split {split_by!r}")
    if split_by == "true_outcome" and truths is None:
        raise ConfigError("true_outcome split needs the user label map")

    costs, groups = [], []
    for a in actions:
        cost = float(a.delta[feature_index] ** 2) if feature_index is not None else a.cost_sq
        if split_by == "efficacy":
            group = "effective" if a.post_class == 1 else "ineffective"
        else:
            y = truths.get(a.user_id)
            if y is None:
                continue
            group = f"y={y}"
        costs.append(cost)
        groups.append(group)
    if not costs:
        raise ConfigError("no labelled actions to histogram")

    costs_arr = np.asarray(costs)
    lo, hi = float(costs_arr.min()), float(costs_arr.max())
    if lo == hi:  # numpy's convention for a degenerate range
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts: dict[str, np.ndarray] = {}
    for group in sorted(set(groups)):
        members = costs_arr[[g == group for g in groups]]
        counts[group], _ = np.histogram(members, bins=edges)
    return HistogramTable(
        split_by=split_by, feature_index=feature_index, bin_edges=edges, counts=counts
    )


def write_histogram_csv(table: HistogramTable, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "group", "count"])
        for group, counts in table.counts.items():
            for b in range(counts.shape[0]):
                writer.writerow(
                    [repr(float(table.bin_edges[b])), repr(float(table.bin_edges[b + 1])),
                     group, int(counts[b])]
                )


def write_pca_json(pca: PcaModel, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(pca.to_json(), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
