"""Read-only HTTP inference service backing the what-if explorer.

All artifacts are loaded once at startup and never mutated, so any request
order yields identical responses and handlers need no locking.  Errors use
a single {error, detail} JSON shape; constraint violations in /whatif are
reported, not rejected, so the explorer can show infeasible regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from ..countergan import CounterGanModel, load_bundle
from ..data import FeatureMeta, load_meta
from ..errors import RecourseNotApplicableError
from ..survival import ChurnClassifier
from .schemas import (
    ConstraintViolation,
    FeatureChange,
    FeatureMetaOut,
    PredictRequest,
    PredictResponse,
    RecourseRequest,
    RecourseResponse,
    SurvivalCurveOut,
    WhatIfRequest,
    WhatIfResponse,
)


@dataclass
class ServiceState:
    classifier: ChurnClassifier
    gan: CounterGanModel
    meta: list[FeatureMeta]


def load_state(forest_path: str, gan_dir: str, meta_path: str) -> ServiceState:
    classifier = ChurnClassifier.load(forest_path)
    return ServiceState(
        classifier=classifier,
        gan=load_bundle(gan_dir, classifier),
        meta=load_meta(meta_path),
    )


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="churn-recourse", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    meta = state.meta
    names = [m.name for m in meta]
    classifier = state.classifier

    @app.exception_handler(HTTPException)
    async def http_error(_: Request, exc: HTTPException):
        return JSONResponse(
            status_code=exc.status_code,
            content={"error": _reason(exc.status_code), "detail": str(exc.detail)},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_error(_: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"error": "invalid request", "detail": str(exc.errors()[:1])},
        )

    def check_vector(features: list[float], enforce_bounds: bool = True) -> np.ndarray:
        if len(features) != len(meta):
            raise HTTPException(400, f"expected {len(meta)} features, got {len(features)}")
        for j, v in enumerate(features):
            if not math.isfinite(v):
                raise HTTPException(400, f"feature {names[j]!r} (index {j}) is not finite")
            if enforce_bounds and not meta[j].lower_bound <= v <= meta[j].upper_bound:
                raise HTTPException(
                    400,
                    f"feature {names[j]!r} (index {j}) value {v} outside "
                    f"[{meta[j].lower_bound}, {meta[j].upper_bound}]",
                )
        return np.asarray(features, dtype=float)

    def predict_payload(x: np.ndarray) -> PredictResponse:
        curve = classifier.predict_curve(x)
        return PredictResponse(
            predicted_class=classifier.classify(x),
            score=classifier.class_score(x),
            median_lifetime_days=curve.median_time(),
            survival_curve=SurvivalCurveOut(
                times=curve.times.tolist(), probs=curve.probs.tolist()
            ),
        )

    @app.get("/features", response_model=list[FeatureMetaOut])
    def features() -> list[FeatureMetaOut]:
        return [FeatureMetaOut(**m.to_dict()) for m in meta]

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest):
        return predict_payload(check_vector(req.features))

    @app.post("/recourse", response_model=RecourseResponse)
    def recourse(req: RecourseRequest):
        x = check_vector(req.features)
        try:
            from ..countergan import generate_recourse

            action = generate_recourse(state.gan, x)
        except RecourseNotApplicableError as exc:
            raise HTTPException(409, str(exc)) from None
        changes = [
            FeatureChange(name=names[j], original=float(x[j]), required=float(action.counterfactual[j]))
            for j in np.argsort(-np.abs(action.delta))
            if action.delta[j] != 0.0
        ]
        return RecourseResponse(
            delta=action.delta.tolist(),
            counterfactual=action.counterfactual.tolist(),
            post_class=action.post_class,
            cost_sq=action.cost_sq,
            per_feature_changes=changes,
        )

    @app.post("/whatif", response_model=WhatIfResponse)
    def whatif(req: WhatIfRequest):
        x = check_vector(req.features)
        unknown = [k for k in req.edits if k not in names]
        if unknown:
            raise HTTPException(400, f"unknown feature {unknown[0]!r}")
        edited = x.copy()
        for name, value in req.edits.items():
            if not math.isfinite(value):
                raise HTTPException(400, f"edit for {name!r} is not finite")
            edited[names.index(name)] = value
        delta = edited - x
        violations = state.gan.constraints.violations(x, delta)
        base = predict_payload(edited)
        return WhatIfResponse(
            predicted_class=base.predicted_class,
            score=base.score,
            median_lifetime_days=base.median_lifetime_days,
            violated_constraints=[ConstraintViolation(**v) for v in violations],
        )

    return app


def _reason(status: int) -> str:
    return {
        400: "invalid request",
        404: "not found",
        409: "recourse not applicable",
        422: "invalid request",
    }.get(status, "error")
