"""Evaluation metrics for the classifier/recourse pipeline.

All functions are pure.  Every aggregate carries its denominator in the
report, and empty denominators yield None (rendered as "n/a"), never a
silent zero.  Costs are squared L2 norms of the action deltas; a plain
(unsquared) column is kept alongside for comparison.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .countergan import RecourseAction
from .errors import ConfigError


def accuracy(pred: Sequence[int], truth: Sequence[int]) -> float:
    """Share of matching predictions, (1/n) * sum of indicator agreement."""
    if len(pred) == 0 or len(pred) != len(truth):
        raise ConfigError(f"need equal non-empty lists, got {len(pred)} and {len(truth)}")
    return float(np.mean(np.asarray(pred) == np.asarray(truth)))


def percent_denied(pred: Sequence[int]) -> float:
    """Share of users predicted to churn (class 0), i.e. recourse-eligible."""
    if len(pred) == 0:
        raise ConfigError("empty prediction list")
    return float(np.mean(np.asarray(pred) == 0))


def percent_successful_recourse(actions: Sequence[RecourseAction]) -> Optional[float]:
    """Share of denied users whose action flipped the prediction to 1.

    Denominator is the denied set; None when no user was denied.
    """
    if any(a.pre_class != 0 for a in actions):
        raise ConfigError("actions must all start from a denied (class 0) prediction")
    if len(actions) == 0:
        return None
    return float(np.mean([a.post_class == 1 for a in actions]))


def mean_cost_successful(actions: Sequence[RecourseAction]) -> Optional[float]:
    """Mean squared-norm cost over successful actions; None if none succeeded."""
    costs = [a.cost_sq for a in actions if a.post_class == 1]
    if not costs:
        return None
    return float(np.mean(costs))


def cumulative_cost_denied(actions: Sequence[RecourseAction]) -> float:
    """Total squared-norm cost spent on actions that failed to flip."""
    return float(sum(a.cost_sq for a in actions if a.post_class == 0))


def mean_clock_time(timings: Sequence[tuple[float, float]]) -> float:
    """Mean duration in seconds over (start, end) monotonic-clock pairs."""
    if len(timings) == 0:
        raise ConfigError("empty timing list")
    for start, end in timings:
        if end < start:
            raise ConfigError(f"timing row ends before it starts: ({start}, {end})")
    return float(np.mean([end - start for start, end in timings]))


@dataclass
class EvaluationReport:
    """All metrics for one (classifier, recourse-method) pair."""

    method: str
    n_trees: int
    model_accuracy_all: Optional[float] = None
    model_accuracy_y0: Optional[float] = None
    discriminator_accuracy_real: Optional[float] = None
    discriminator_accuracy_fake: Optional[float] = None
    post_recourse_classifier_accuracy: Optional[float] = None
    percent_denied: Optional[float] = None
    percent_successful_recourse: Optional[float] = None
    mean_cost_successful: Optional[float] = None
    mean_distance_successful: Optional[float] = None  # unsquared companion
    cumulative_cost_denied: Optional[float] = None
    mean_clock_time_seconds: Optional[float] = None
    n: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        for name in (
            "model_accuracy_all",
            "model_accuracy_y0",
            "discriminator_accuracy_real",
            "discriminator_accuracy_fake",
            "post_recourse_classifier_accuracy",
            "percent_denied",
            "percent_successful_recourse",
        ):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be a fraction in [0, 1], got {value}")
        for name in ("mean_cost_successful", "cumulative_cost_denied"):
            value = getattr(self, name)
            if value is not None and value < 0.0:
                raise ConfigError(f"{name} must be non-negative, got {value}")

    def to_dict(self, include_timing: bool = True) -> dict:
        doc = {
            "method": self.method,
            "n_trees": self.n_trees,
            "model_accuracy_all": self.model_accuracy_all,
            "model_accuracy_y0": self.model_accuracy_y0,
            "discriminator_accuracy_real": self.discriminator_accuracy_real,
            "discriminator_accuracy_fake": self.discriminator_accuracy_fake,
            "post_recourse_classifier_accuracy": self.post_recourse_classifier_accuracy,
            "percent_denied": self.percent_denied,
            "percent_successful_recourse": self.percent_successful_recourse,
            "mean_cost_successful": self.mean_cost_successful,
            "mean_distance_successful": self.mean_distance_successful,
            "cumulative_cost_denied": self.cumulative_cost_denied,
            "n": dict(self.n),
            "flags": list(self.flags),
        }
        if include_timing:
            doc["mean_clock_time_seconds"] = self.mean_clock_time_seconds
        return doc

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"


def _fmt(value, pct=False, digits=4) -> str:
    if value is None:
        return "n/a"
    if pct:
        return f"{100.0 * value:.1f}%"
    if isinstance(value, float) and (abs(value) < 1e-3 and value != 0.0):
        return f"{value:.6f}"
    return f"{value:.{digits}f}"


def render_accuracy_table(reports: Sequence[EvaluationReport]) -> str:
    """Aligned text: model/discriminator/post-recourse accuracy per run."""
    headers = [
        "method", "trees", "model acc (all/y0)", "disc acc (real/fake)", "post-recourse acc",
    ]
    rows = []
    for r in reports:
        rows.append(
            [
                r.method,
                str(r.n_trees),
                f"{_fmt(r.model_accuracy_all)} / {_fmt(r.model_accuracy_y0)}",
                f"{_fmt(r.discriminator_accuracy_real)} / {_fmt(r.discriminator_accuracy_fake)}",
                _fmt(r.post_recourse_classifier_accuracy),
            ]
        )
    return _render_table(headers, rows)


def render_recourse_table(reports: Sequence[EvaluationReport]) -> str:
    """Aligned text: denial, success, costs and timing per run."""
    headers = [
        "method", "trees", "% denied", "% successful", "mean cost", "cumulative cost", "mean time (s)",
    ]
    rows = []
    for r in reports:
        rows.append(
            [
                r.method,
                str(r.n_trees),
                _fmt(r.percent_denied, pct=True),
                _fmt(r.percent_successful_recourse, pct=True),
                _fmt(r.mean_cost_successful),
                _fmt(r.cumulative_cost_denied, digits=2),
                _fmt(r.mean_clock_time_seconds, digits=6),
            ]
        )
    return _render_table(headers, rows)


def _render_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    sep = "-" * len(line)
    body = "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows)
    return f"{line}\n{sep}\n{body}\n"
