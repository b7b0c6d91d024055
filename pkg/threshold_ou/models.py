"""
Domain models for the threshold OU toolkit
Pydantic models for parameters and results, dataclasses for sampled paths
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from threshold_ou.core.exceptions import InvalidInputError

Side = Literal["plus", "minus"]
SIDES: Tuple[str, str] = ("plus", "minus")
SCHEMA_VERSION = "1.0"


class ModelParams(BaseModel):
    """Coefficients of the threshold OU diffusion dX = (b(X) - a(X) X) dt + sigma(X) dW"""
    model_config = ConfigDict(frozen=True)

    r: float = Field(..., description="Threshold level (state units)")
    a_plus: float = Field(..., description="Mean-reversion rate on x >= r (1/time)")
    a_minus: float = Field(..., description="Mean-reversion rate on x < r (1/time)")
    b_plus: float = Field(..., description="Drift intercept on x >= r (state/time)")
    b_minus: float = Field(..., description="Drift intercept on x < r (state/time)")
    sigma_plus: float = Field(..., gt=0.0, description="Volatility on x >= r (state/sqrt(time))")
    sigma_minus: float = Field(..., gt=0.0, description="Volatility on x < r (state/sqrt(time))")

    @model_validator(mode="after")
    def _all_finite(self):
        for name, value in self.model_dump().items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        return self

    def coefficients(self, side: str) -> Tuple[float, float, float]:
        """(a, b, sigma) of one side"""
        if side == "plus":
            return self.a_plus, self.b_plus, self.sigma_plus
        if side == "minus":
            return self.a_minus, self.b_minus, self.sigma_minus
        raise InvalidInputError(f"side must be 'plus' or 'minus', got {side!r}")

    @property
    def theta(self) -> Tuple[float, float, float, float]:
        """Drift vector ordered (a+, b+, a-, b-)"""
        return self.a_plus, self.b_plus, self.a_minus, self.b_minus

    def shifted(self, c: float) -> "ModelParams":
        """Parameters of X + c: threshold moves by c, intercepts by a*c"""
        return self.model_copy(update={
            "r": self.r + c,
            "b_plus": self.b_plus + self.a_plus * c,
            "b_minus": self.b_minus + self.a_minus * c,
        })


class Regime(str, Enum):
    ERGODIC = "Ergodic"
    NULL_RECURRENT = "NullRecurrent"
    TRANSIENT = "Transient"


class SideBehaviour(str, Enum):
    CONFINING = "Confining"
    NEUTRAL = "Neutral"
    ESCAPING = "Escaping"


class RegimeClass(BaseModel):
    """Recurrence classification of a parameter set"""
    model_config = ConfigDict(frozen=True)

    overall: Regime
    side_plus: SideBehaviour
    side_minus: SideBehaviour


class AsymptoticConstants(BaseModel):
    """Long-run occupation averages and the information matrices built from them"""
    qbar: Dict[str, List[float]] = Field(..., description="Qbar^{side,i} for i = 0, 1, 2")
    gamma_plus: List[List[float]]
    gamma_minus: List[List[float]]
    fisher: List[List[float]] = Field(..., description="blockdiag(Gamma+/sigma+^2, Gamma-/sigma-^2)")
    clt_cov_plus: List[List[float]] = Field(..., description="sigma+^2 Gamma+^-1")
    clt_cov_minus: List[List[float]] = Field(..., description="sigma-^2 Gamma-^-1")

    def gamma(self, side: str) -> np.ndarray:
        return np.asarray(self.gamma_plus if side == "plus" else self.gamma_minus)

    def clt_cov(self, side: str) -> np.ndarray:
        return np.asarray(self.clt_cov_plus if side == "plus" else self.clt_cov_minus)

    def clt_cov4(self) -> np.ndarray:
        """4x4 asymptotic covariance of sqrt(T)(theta_hat - theta)"""
        cov = np.zeros((4, 4))
        cov[:2, :2] = self.clt_cov("plus")
        cov[2:, 2:] = self.clt_cov("minus")
        return cov


@dataclass
class Trajectory:
    """Path sampled on the uniform grid t0 + k*dt, k = 0..N"""
    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 2:
            raise InvalidInputError("A trajectory needs at least two observations")
        if not self.dt > 0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("Trajectory values must be finite")

    @property
    def N(self) -> int:
        return self.values.size - 1

    @property
    def T(self) -> float:
        return self.dt * self.N

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    def subsample(self, step: int) -> "Trajectory":
        """Every step-th observation; N must be a multiple of step"""
        if step < 1 or self.N % step:
            raise InvalidInputError(f"Cannot subsample N={self.N} by {step}")
        return Trajectory(t0=self.t0, dt=self.dt * step, values=self.values[::step])


class InitMode(str, Enum):
    DETERMINISTIC = "deterministic"
    STATIONARY = "stationary"


class SimSpec(BaseModel):
    """What to simulate and on which grid"""
    params: ModelParams
    T: float = Field(..., gt=0.0, description="Horizon")
    N: int = Field(..., ge=1, description="Number of recorded steps")
    init: InitMode = Field(InitMode.DETERMINISTIC, description="Initial condition")
    x0: Optional[float] = Field(None, description="Starting point (deterministic init or burn-in start)")
    substeps: int = Field(1, ge=1, description="Euler steps per recorded step")
    burn_in: float = Field(0.0, ge=0.0, description="Stationary init by running this long instead of exact sampling")

    @model_validator(mode="after")
    def _check_start(self):
        if self.init == InitMode.DETERMINISTIC and self.x0 is None:
            raise ValueError("Deterministic init needs x0")
        if self.x0 is not None and not math.isfinite(self.x0):
            raise ValueError("x0 must be finite")
        return self

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def h(self) -> float:
        """Internal Euler step"""
        return self.dt / self.substeps


class SufficientStats(BaseModel):
    """Discrete occupation and increment sums for one threshold"""
    threshold: float
    T: float
    N: int
    dt: float
    q: Dict[str, List[float]] = Field(..., description="Q^{side,m}, m = 0, 1, 2")
    mm: Dict[str, List[float]] = Field(..., description="M^{side,m}, m = 0, 1")
    local_time: float = Field(..., ge=0.0)
    crossings: int = Field(..., ge=0)
    sumsq: Dict[str, float]
    count: Dict[str, int]

    def det(self, side: str) -> float:
        q0, q1, q2 = self.q[side]
        return q0 * q2 - q1 * q1


class DriftEstimate(BaseModel):
    """Closed-form drift estimate at one threshold"""
    a_hat_plus: Optional[float] = None
    b_hat_plus: Optional[float] = None
    a_hat_minus: Optional[float] = None
    b_hat_minus: Optional[float] = None
    threshold_used: float
    det: Dict[str, float]
    valid: Dict[str, bool]

    @property
    def theta(self) -> Tuple[float, float, float, float]:
        return (self.a_hat_plus, self.b_hat_plus, self.a_hat_minus, self.b_hat_minus)

    def side(self, side: str) -> Tuple[Optional[float], Optional[float]]:
        if side == "plus":
            return self.a_hat_plus, self.b_hat_plus
        return self.a_hat_minus, self.b_hat_minus


class Method(str, Enum):
    MLE = "MLE"
    QMLE = "QMLE"


class ThresholdGrid(BaseModel):
    """Candidate thresholds between the delta and 1-delta percentiles"""
    delta: float = Field(0.15, gt=0.0, lt=0.5)
    n_points: int = Field(200, ge=1)
    candidates: Optional[List[float]] = Field(None, description="Explicit sorted candidates; built from data when absent")
    percentile_method: Literal["nearest_rank", "linear"] = "nearest_rank"

    @field_validator("candidates")
    @classmethod
    def _sorted(cls, value):
        if value is not None:
            if not value:
                raise ValueError("candidates must not be empty")
            if any(b < a for a, b in zip(value, value[1:])):
                raise ValueError("candidates must be sorted")
        return value


class FitResult(BaseModel):
    """Estimated threshold, drift and volatility with likelihood values"""
    schema_version: str = SCHEMA_VERSION
    kind: str = "fit_result"
    method: Method
    threshold: float
    estimate: DriftEstimate
    sigma_hat: Tuple[float, float] = Field(..., description="(sigma+, sigma-)")
    loglik: float = Field(..., description="log G at the estimate")
    quasi_lik: float = Field(..., description="Lambda at the estimate")
    stats: SufficientStats
    mean_reversion_levels: Tuple[Optional[float], Optional[float]] = (None, None)
    threshold_estimated: bool = False
    profile: List[Tuple[float, float]] = Field(default_factory=list, description="(r, score) per evaluated candidate")

    @field_validator("loglik", "quasi_lik")
    @classmethod
    def _finite(cls, value):
        if not math.isfinite(value):
            raise ValueError("likelihood values must be finite")
        return value


class CovModel(BaseModel):
    """Empirical information matrices and the drift covariance they imply"""
    gamma_hat_plus: List[List[float]]
    gamma_hat_minus: List[List[float]]
    sigma_hat: Tuple[float, float]
    T: float
    cov4: List[List[float]]


class ProjectionEllipse(BaseModel):
    """Marginal confidence ellipse of one coordinate pair"""
    plane: Literal["a", "b"]
    center: Tuple[float, float]
    covariance: List[List[float]]
    radius: float
    diagonal_distance: float = Field(..., description="2-d Mahalanobis distance from center to x1 = x2")
    crosses_diagonal: bool


class ConfidenceRegion(BaseModel):
    """Ellipsoid {theta_hat + shape u : |u| <= 1}"""
    center: List[float]
    shape: List[List[float]]
    q_p: float
    p: float


class TestResult(BaseModel):
    """Outcome of the no-threshold test"""
    __test__ = False

    schema_version: str = SCHEMA_VERSION
    kind: str = "test_report"
    p: float
    q_p: float
    min_mahalanobis: float = Field(..., ge=0.0)
    reject: bool
    nearest_null_point: List[float]
    projection_ellipses: List[ProjectionEllipse]
    threshold_estimated: bool = False
