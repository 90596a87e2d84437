"""HTTP service: fit estimators, then query and sample their coefficients.

Coefficient indices are 1-based on the wire, as on the command line.
Run with ``uvicorn qipcr.service:app``.
"""

from __future__ import annotations

import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.concurrency import run_in_threadpool

from .cli import exit_code_for
from .errors import InvalidRange, QIPCRError
from .pipeline import FitConfig, PCREstimator, fit_arrays, x_access_count
from .runner import RunConfig, center, run
from .schemas import (
    Coefficient,
    CoefficientsResponse,
    EstimatorInfo,
    FitRequest,
    Health,
    RunRequest,
    SampleRequest,
    SampleResponse,
)
from .synthetic import SyntheticSpec, generate

app = FastAPI(title="qipcr", version="0.1.0")

_lock = threading.Lock()
_registry: dict[str, tuple[PCREstimator, EstimatorInfo]] = {}


def _http_error(exc: Exception) -> HTTPException:
    code = exit_code_for(exc)
    status = {2: 400, 4: 400}.get(code, 422)
    return HTTPException(status, detail={"type": type(exc).__name__, "message": str(exc), "exit_code": code})


def _lookup(est_id: str) -> tuple[PCREstimator, EstimatorInfo]:
    with _lock:
        item = _registry.get(est_id)
    if item is None:
        raise HTTPException(404, detail={"type": "NotFound", "message": f"no estimator {est_id}", "exit_code": 4})
    return item


def _fit(req: FitRequest) -> tuple[PCREstimator, EstimatorInfo]:
    if req.synthetic is not None:
        x, y, _ = generate(SyntheticSpec.parse(req.synthetic), req.seed)
    else:
        x, y = np.asarray(req.x, dtype=np.float64), np.asarray(req.y, dtype=np.float64)
        if x.ndim != 2:
            raise InvalidRange("x must be a rectangular list of rows")
    means = {}
    if req.center:
        x, y, xm, ym = center(x, y)
        means = {"x": xm.tolist(), "y": ym}
    fitted = fit_arrays(
        x, y, req.k, req.epsilon, np.random.default_rng(req.seed), oracle_assisted=req.oracle_assisted,
        theta=req.theta, sigma=req.sigma, eta=req.eta, config=FitConfig(repetitions=req.repetitions),
    )
    est = fitted.estimator
    info = EstimatorInfo(
        id=uuid.uuid4().hex, n=x.shape[0], d=x.shape[1], k=req.k, plan=est.plan.to_dict(),
        gamma=est.gamma.tolist(), x_accesses=x_access_count(est), times_ms=est.step_times, centering=means,
    )
    return est, info


@app.get("/health", response_model=Health)
def health() -> Health:
    with _lock:
        return Health(estimators=len(_registry))


@app.post("/estimators", response_model=EstimatorInfo, status_code=201)
async def create_estimator(req: FitRequest) -> EstimatorInfo:
    try:
        est, info = await run_in_threadpool(_fit, req)
    except (QIPCRError, ValueError) as exc:
        raise _http_error(exc) from None
    with _lock:
        _registry[info.id] = (est, info)
    return info


@app.get("/estimators/{est_id}", response_model=EstimatorInfo)
def get_estimator(est_id: str) -> EstimatorInfo:
    return _lookup(est_id)[1]


@app.get("/estimators/{est_id}/coefficients", response_model=CoefficientsResponse)
def coefficients(est_id: str, entries: str = Query(..., description="comma-separated 1-based indices")):
    est, _ = _lookup(est_id)
    try:
        idx = [int(t) for t in entries.split(",") if t.strip()]
    except ValueError:
        raise _http_error(InvalidRange(f"bad entries list {entries!r}")) from None
    bad = [i for i in idx if not 1 <= i <= est.d]
    if bad:
        raise _http_error(InvalidRange(f"entries must lie in 1..{est.d}; got {bad}"))
    vals = est.query_coefficient(np.asarray(idx, dtype=np.int64) - 1) if idx else []
    return CoefficientsResponse(id=est_id, entries=[Coefficient(index=i, value=float(v)) for i, v in zip(idx, vals)])


@app.post("/estimators/{est_id}/samples", response_model=SampleResponse)
def samples(est_id: str, req: SampleRequest) -> SampleResponse:
    est, _ = _lookup(est_id)
    try:
        idx = est.sample_coefficient(np.random.default_rng(req.seed), req.count) + 1
    except QIPCRError as exc:
        raise _http_error(exc) from None
    vals, cnt = np.unique(idx, return_counts=True)
    return SampleResponse(id=est_id, samples=idx.tolist(), histogram={str(v): int(c) for v, c in zip(vals, cnt)})


@app.delete("/estimators/{est_id}", status_code=204)
def delete_estimator(est_id: str) -> None:
    _lookup(est_id)
    with _lock:
        _registry.pop(est_id, None)


@app.post("/runs")
async def runs(req: RunRequest) -> dict:
    try:
        return await run_in_threadpool(run, RunConfig(**req.model_dump()))
    except Exception as exc:
        raise _http_error(exc) from None
