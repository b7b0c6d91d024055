# Threshold OU - FastAPI Application
# Thin HTTP wrappers over the estimation, testing and stationary-law services

import logging
import math
from datetime import datetime, timezone
from typing import Dict, List, Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from threshold_ou import __version__
from threshold_ou.core.exceptions import ThresholdOUError
from threshold_ou.core.logging_setup import configure_logging
from threshold_ou.models import FitResult, Method, ModelParams, Regime, TestResult, ThresholdGrid, Trajectory
from threshold_ou.services.estimator import fit_at_threshold, threshold_search
from threshold_ou.services.inference import test_threshold
from threshold_ou.services.stationary import classify_regime, gamma_matrix, qbar_constants, stationary_dist

configure_logging()
logger = logging.getLogger(__name__)

app = FastAPI(
    title="Threshold OU",
    description="Estimation and testing for threshold Ornstein-Uhlenbeck processes",
    version=__version__,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=False,
    allow_methods=["*"],
    allow_headers=["*"],
)


# Pydantic models for API
class EstimateRequest(BaseModel):
    values: List[float] = Field(..., min_length=2, description="Observations on a uniform grid")
    dt: float = Field(..., gt=0.0, description="Time step between observations")
    threshold: Optional[float] = Field(None, description="Fixed threshold; searched when absent")
    method: Method = Field(Method.MLE, description="MLE or QMLE")
    delta: float = Field(0.15, gt=0.0, lt=0.5, description="Percentile trim of the candidate grid")
    n_points: int = Field(200, ge=1, le=10_000, description="Number of candidate thresholds")


class TestRequest(EstimateRequest):
    __test__ = False

    p: float = Field(0.95, gt=0.0, lt=1.0, description="Confidence level")


class StationaryResponse(BaseModel):
    regime: str
    side_plus: str
    side_minus: str
    speed_mass_plus: Optional[float] = Field(None, description="Absent when it overflows; see log_speed_mass_plus")
    speed_mass_minus: Optional[float] = Field(None, description="Absent when it overflows; see log_speed_mass_minus")
    log_speed_mass_plus: Optional[float] = None
    log_speed_mass_minus: Optional[float] = None
    weight_plus: Optional[float] = None
    qbar: Optional[Dict[str, List[float]]] = None
    gamma_plus: Optional[List[List[float]]] = None
    gamma_minus: Optional[List[List[float]]] = None


@app.exception_handler(ThresholdOUError)
async def threshold_ou_error_handler(request: Request, exc: ThresholdOUError):
    logger.warning(f"{request.url.path}: {type(exc).__name__}: {exc.message}")
    return JSONResponse(status_code=422, content={"detail": exc.message, "error": type(exc).__name__})


def _fit(request: EstimateRequest) -> FitResult:
    traj = Trajectory(t0=0.0, dt=request.dt, values=request.values)
    if request.threshold is not None:
        return fit_at_threshold(traj, request.threshold, request.method)
    grid = ThresholdGrid(delta=request.delta, n_points=request.n_points)
    return threshold_search(traj, grid, request.method)


# Health check endpoint
@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {
        "status": "healthy",
        "timestamp": datetime.now(timezone.utc),
        "version": __version__,
    }


@app.post("/api/estimate", response_model=FitResult)
def estimate(request: EstimateRequest):
    """Threshold, drift and volatility estimates for one path"""
    logger.info(f"Estimate request: {len(request.values)} observations, method {request.method.value}")
    return _fit(request)


@app.post("/api/test", response_model=TestResult)
def threshold_test(request: TestRequest):
    """No-threshold test at level p"""
    return test_threshold(_fit(request), request.p)


@app.post("/api/stationary", response_model=StationaryResponse)
def stationary(params: ModelParams):
    """Regime label, plus the stationary weights and information matrices when ergodic"""
    regime = classify_regime(params)
    response = StationaryResponse(
        regime=regime.overall.value,
        side_plus=regime.side_plus.value,
        side_minus=regime.side_minus.value,
    )
    if regime.overall != Regime.ERGODIC:
        return response
    dist = stationary_dist(params)
    qbar = qbar_constants(params)
    return response.model_copy(update={
        "speed_mass_plus": dist.n_plus if math.isfinite(dist.n_plus) else None,
        "speed_mass_minus": dist.n_minus if math.isfinite(dist.n_minus) else None,
        "log_speed_mass_plus": dist.log_n_plus,
        "log_speed_mass_minus": dist.log_n_minus,
        "weight_plus": dist.weight_plus,
        "qbar": qbar,
        "gamma_plus": gamma_matrix(qbar["plus"]).tolist(),
        "gamma_minus": gamma_matrix(qbar["minus"]).tolist(),
    })
