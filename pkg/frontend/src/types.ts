// Wire types for the four inference-service endpoints.

export interface FeatureMeta {
  name: string;
  actionable: boolean;
  direction: "free" | "increase_only" | "decrease_only";
  lower_bound: number;
  upper_bound: number;
  aggregation_window: string;
}

export interface SurvivalCurve {
  times: number[];
  probs: number[];
}

export interface PredictResponse {
  class: number;
  score: number;
  median_lifetime_days: number;
  survival_curve: SurvivalCurve;
}

export interface FeatureChange {
  name: string;
  original: number;
  required: number;
}

export interface RecourseResponse {
  delta: number[];
  counterfactual: number[];
  post_class: number;
  cost_sq: number;
  per_feature_changes: FeatureChange[];
}

export interface ConstraintViolation {
  feature: string;
  violation: string;
}

export interface WhatIfResponse {
  class: number;
  score: number;
  median_lifetime_days: number;
  violated_constraints: ConstraintViolation[];
}

export interface ErrorBody {
  error: string;
  detail?: string;
}

export class ApiError extends Error {
  status: number;
  body: ErrorBody;

  constructor(status: number, body: ErrorBody) {
    super(`${body.error}${body.detail ? `: ${body.detail}` : ""}`);
    this.status = status;
    this.body = body;
  }
}
