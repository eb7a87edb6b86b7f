"""Stateless HTTP service for prediction, uncertainty, and live recalibration.

The model bundle is immutable shared state loaded once at startup; every
response is a pure function of (bundle, request body), so concurrent
handlers need no locks and identical requests produce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel

from . import conformal as cf
from .conformal import CalibrationTable, load_table, max_confidence
from .training import Checkpoint, load_checkpoint
from .wire import grid_payload, wire_dumps

__all__ = ["ModelBundle", "create_app", "run"]


@dataclass(frozen=True)
class ModelBundle:
    """Checkpoint plus optional calibration table and input metadata."""

    checkpoint: Checkpoint
    table: CalibrationTable | None
    param_names: tuple
    param_ranges: np.ndarray

    def __post_init__(self):
        d = self.checkpoint.net.config.input_dim
        if len(self.param_names) != d or self.param_ranges.shape != (d, 2):
            raise ValueError("parameter metadata does not match the model input")
        if self.table is not None and self.table.grid_shape != tuple(
            self.checkpoint.net.config.grid_shape
        ):
            raise ValueError("table grid shape does not match the checkpoint")

    @property
    def grid_shape(self):
        return tuple(self.checkpoint.net.config.grid_shape)

    @classmethod
    def load(cls, checkpoint_path, table_path=None, param_names=None, param_ranges=None):
        ckpt = load_checkpoint(checkpoint_path)
        table = None if table_path is None else load_table(table_path)
        d = ckpt.net.config.input_dim
        if param_ranges is None:
            param_ranges = np.array([[0.0, 1.0]] * d)
        param_ranges = np.asarray(param_ranges, dtype=np.float64)
        if param_names is None:
            param_names = tuple(f"p{k}" for k in range(d))
        return cls(
            checkpoint=ckpt,
            table=table,
            param_names=tuple(param_names),
            param_ranges=param_ranges,
        )


class PredictRequest(BaseModel):
    params: list[float]


class IntervalRequest(BaseModel):
    params: list[float]
    level: float
    calibrated: bool = False


def _wire(payload) -> Response:
    return Response(content=wire_dumps(payload), media_type="application/json")


def _get_bundle(request: Request) -> ModelBundle:
    bundle = getattr(request.app.state, "bundle", None)
    if bundle is None:
        raise HTTPException(status_code=503, detail="model bundle not loaded")
    return bundle


def _validate_params(bundle: ModelBundle, params):
    d = len(bundle.param_names)
    if len(params) != d:
        raise HTTPException(
            status_code=422,
            detail=[
                {
                    "loc": ["body", "params"],
                    "msg": f"expected {d} parameters, got {len(params)}",
                }
            ],
        )
    errors = []
    for k, (value, name) in enumerate(zip(params, bundle.param_names)):
        lo, hi = bundle.param_ranges[k]
        if not np.isfinite(value) or value < lo or value > hi:
            errors.append(
                {
                    "loc": ["body", "params", k],
                    "msg": f"{name}={value!r} outside inclusive range [{lo}, {hi}]",
                }
            )
    if errors:
        raise HTTPException(status_code=422, detail=errors)
    return np.asarray(params, dtype=np.float64)


def create_app(bundle: ModelBundle | None = None, cors_origin=None) -> FastAPI:
    app = FastAPI(title="evisurro", docs_url=None, redoc_url=None)
    app.state.bundle = bundle

    if cors_origin is not None:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=[cors_origin],
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.get("/meta")
    def meta(request: Request):
        bundle = _get_bundle(request)
        if bundle.table is None:
            calibration = None
        else:
            calibration = {
                "n": bundle.table.n,
                "delta": bundle.table.delta,
                "max_confidence": max_confidence(bundle.table.n),
            }
        return _wire(
            {
                "params": [
                    {
                        "name": name,
                        "min": float(bundle.param_ranges[k, 0]),
                        "max": float(bundle.param_ranges[k, 1]),
                    }
                    for k, name in enumerate(bundle.param_names)
                ],
                "grid_shape": list(bundle.grid_shape),
                "has_table": bundle.table is not None,
                "calibration": calibration,
            }
        )

    @app.post("/predict")
    def predict(body: PredictRequest, request: Request):
        bundle = _get_bundle(request)
        x = _validate_params(bundle, body.params)
        summary = bundle.checkpoint.predict(x)
        return _wire(
            grid_payload(
                mean=summary.prediction,
                aleatoric=summary.aleatoric,
                epistemic=summary.epistemic,
            )
        )

    @app.post("/interval")
    def interval(body: IntervalRequest, request: Request):
        bundle = _get_bundle(request)
        x = _validate_params(bundle, body.params)
        if not 0.0 < body.level < 1.0:
            raise HTTPException(
                status_code=422,
                detail=[{"loc": ["body", "level"], "msg": "level must lie in (0, 1)"}],
            )
        if body.calibrated:
            if bundle.table is None:
                raise HTTPException(
                    status_code=409, detail="calibrated intervals need a table"
                )
            bound = max_confidence(bundle.table.n)
            if body.level > bound:
                raise HTTPException(
                    status_code=422,
                    detail=[
                        {
                            "loc": ["body", "level"],
                            "msg": (
                                f"confidence {body.level} unattainable with "
                                f"n={bundle.table.n}; max attainable is {bound:.6f}"
                            ),
                        }
                    ],
                )
            alpha = 1.0 - body.level
            iv = cf.calibrated_intervals(
                bundle.checkpoint, bundle.table, x, cf.MiscoverageLevel(alpha)
            )
            lo, hi = np.asarray(iv.lo), np.asarray(iv.hi)
            guarantee = {
                "lower": 1.0 - alpha,
                "upper": min(1.0, 1.0 - alpha + 2.0 / (bundle.table.n + 1)),
            }
        else:
            raw = bundle.checkpoint.raw_intervals(x, 1.0 - body.level)
            lo, hi = np.asarray(raw.lo), np.asarray(raw.hi)
            guarantee = None
        payload = grid_payload(lo=lo, hi=hi, width=hi - lo)
        payload["calibrated"] = body.calibrated
        payload["level"] = body.level
        payload["achieved_level_bound"] = guarantee
        return _wire(payload)

    return app


def run(bundle: ModelBundle, host="127.0.0.1", port=8000, cors_origin=None):
    """Serve the bundle; blocks until interrupted."""
    import uvicorn

    app = create_app(bundle, cors_origin=cors_origin)
    uvicorn.run(app, host=host, port=port, log_level="warning")
