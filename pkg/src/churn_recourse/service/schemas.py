"""Pydantic request/response models for the inference service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class FeatureMetaOut(BaseModel):
    name: str
    actionable: bool
    direction: str
    lower_bound: float
    upper_bound: float
    aggregation_window: str


class SurvivalCurveOut(BaseModel):
    times: list[float]
    probs: list[float]


class PredictRequest(BaseModel):
    features: list[float]


class PredictResponse(BaseModel):
    predicted_class: int = Field(serialization_alias="class")
    score: float
    median_lifetime_days: float
    survival_curve: SurvivalCurveOut


class RecourseRequest(BaseModel):
    features: list[float]


class FeatureChange(BaseModel):
    name: str
    original: float
    required: float


class RecourseResponse(BaseModel):
    delta: list[float]
    counterfactual: list[float]
    post_class: int
    cost_sq: float
    per_feature_changes: list[FeatureChange]


class WhatIfRequest(BaseModel):
    features: list[float]
    edits: dict[str, float] = Field(default_factory=dict)


class ConstraintViolation(BaseModel):
    feature: str
    violation: str


class WhatIfResponse(BaseModel):
    predicted_class: int = Field(serialization_alias="class")
    score: float
    median_lifetime_days: float
    violated_constraints: list[ConstraintViolation]


class ErrorBody(BaseModel):
    error: str
    detail: Optional[str] = None
