"""
Threshold OU - Stationary Theory
Regime classification, scale and speed densities, the stationary law and the
asymptotic constants that drive the estimator's central limit theorem.

Sides follow one convention everywhere: "plus" is x >= r, "minus" is x < r.
Unnormalized quantities use the scale density normalized to 1 at r.
"""

import logging
import math
import sys
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy import special

from threshold_ou.core.exceptions import NotErgodicError, SingularCovarianceError
from threshold_ou.models import (
    SIDES,
    AsymptoticConstants,
    ModelParams,
    Regime,
    RegimeClass,
    SideBehaviour,
)
from threshold_ou.utils.numerics import NormalSource

logger = logging.getLogger(__name__)

SQRT_PI = math.sqrt(math.pi)
SQRT2 = math.sqrt(2.0)
LOG2 = math.log(2.0)
MAX_LOG = math.log(sys.float_info.max)
# Rejection sampling of a truncated Gaussian switches to inverse CDF below this acceptance rate
MIN_ACCEPTANCE = 0.05


def _side_of(p: ModelParams, x: float) -> str:
    return "plus" if x >= p.r else "minus"


def _side_behaviour(a: float, b: float, side: str) -> SideBehaviour:
    if a > 0:
        return SideBehaviour.CONFINING
    if a < 0:
        return SideBehaviour.ESCAPING
    # a == 0: drift must point back towards r
    inward = b < 0 if side == "plus" else b > 0
    if inward:
        return SideBehaviour.CONFINING
    if b == 0:
        return SideBehaviour.NEUTRAL
    return SideBehaviour.ESCAPING


def classify_regime(p: ModelParams) -> RegimeClass:
    """Ergodic, null recurrent or transient, with a per-side diagnostic label"""
    behaviours = {side: _side_behaviour(*p.coefficients(side)[:2], side) for side in SIDES}
    labels = set(behaviours.values())
    if SideBehaviour.ESCAPING in labels:
        overall = Regime.TRANSIENT
    elif SideBehaviour.NEUTRAL in labels:
        overall = Regime.NULL_RECURRENT
    else:
        overall = Regime.ERGODIC
    return RegimeClass(overall=overall, side_plus=behaviours["plus"], side_minus=behaviours["minus"])


def _require_ergodic(p: ModelParams) -> RegimeClass:
    regime = classify_regime(p)
    if regime.overall != Regime.ERGODIC:
        raise NotErgodicError(
            f"Parameters are {regime.overall.value} "
            f"(plus side {regime.side_plus.value}, minus side {regime.side_minus.value})",
            regime=regime,
        )
    return regime


def log_scale_density(p: ModelParams, x: float) -> float:
    """log s(x) = -(x - r)(2b - a(x + r)) / sigma^2 on the side of x"""
    a, b, sigma = p.coefficients(_side_of(p, x))
    return -(x - p.r) * (2.0 * b - a * (x + p.r)) / (sigma * sigma)


def _exp_or_inf(log_value: float) -> float:
    return math.exp(log_value) if log_value <= MAX_LOG else math.inf


def scale_density(p: ModelParams, x: float) -> float:
    """s(x), math.inf once it leaves the float range"""
    return _exp_or_inf(log_scale_density(p, x))


def log_speed_density(p: ModelParams, x: float) -> float:
    _, _, sigma = p.coefficients(_side_of(p, x))
    return math.log(2.0 / (sigma * sigma)) - log_scale_density(p, x)


def speed_density(p: ModelParams, x: float) -> float:
    """m(x) = 2 / (sigma(x)^2 s(x))"""
    return _exp_or_inf(log_speed_density(p, x))


def _log_erfcx(z: float) -> float:
    if z >= 0.0:
        return math.log(float(special.erfcx(z)))
    # exp(z^2) erfc(z) with erfc(z) = 2 Phi(-sqrt(2) z)
    return z * z + LOG2 + float(special.log_ndtr(-SQRT2 * z))


def log_speed_mass(p: ModelParams, side: str) -> float:
    """log of the speed-measure mass on one side; math.inf when it diverges"""
    a, b, sigma = p.coefficients(side)
    if a > 0:
        # sqrt(pi)/(sigma sqrt(a)) exp(z^2) erfc(z)
        sign = -1.0 if side == "plus" else 1.0
        z = sign * math.sqrt(a) / sigma * (b / a - p.r)
        return math.log(SQRT_PI / (sigma * math.sqrt(a))) + _log_erfcx(z)
    if a == 0 and _side_behaviour(a, b, side) == SideBehaviour.CONFINING:
        return -math.log(abs(b))
    return math.inf


def speed_mass(p: ModelParams, side: str) -> float:
    """Mass of the speed measure on one side; math.inf when it diverges or overflows"""
    return _exp_or_inf(log_speed_mass(p, side))


def _side_qbar(p: ModelParams, side: str, log_total: float) -> Tuple[float, float, float]:
    """Integrals of x^i against the speed measure of one side, divided by the total mass"""
    a, b, sigma = p.coefficients(side)
    r = p.r
    sgn = 1.0 if side == "plus" else -1.0
    weight = math.exp(log_speed_mass(p, side) - log_total)
    if a > 0:
        c = b / a
        # boundary terms of the Gaussian moments carry 1/total instead of n
        edge = sgn * math.exp(-log_total) / a
        q1 = c * weight + edge
        q2 = (c * c + sigma * sigma / (2.0 * a)) * weight + (c + r) * edge
        return weight, q1, q2
    n0 = speed_mass(p, side)
    s2 = sigma * sigma
    q1 = weight * (r + sgn * s2 * n0 / 2.0)
    q2 = weight * (r * r + sgn * r * s2 * n0 + s2 * s2 * n0 * n0 / 2.0)
    return weight, q1, q2


class SideLaw(BaseModel):
    """Conditional stationary law on one side of the threshold"""
    side: Literal["plus", "minus"]
    kind: Literal["gaussian", "exponential"]
    bound: float = Field(..., description="Threshold r")
    center: Optional[float] = Field(None, description="b/a for the truncated Gaussian")
    scale: Optional[float] = Field(None, description="sigma/sqrt(2a) for the truncated Gaussian")
    rate: Optional[float] = Field(None, description="2|b|/sigma^2 for the exponential")

    def _z(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    @property
    def _log_tail_mass(self) -> float:
        """log of the probability the untruncated Gaussian lands on this side"""
        z_r = (self.bound - self.center) / self.scale
        return float(special.log_ndtr(-z_r) if self.side == "plus" else special.log_ndtr(z_r))

    @property
    def _tail_mass(self) -> float:
        return math.exp(self._log_tail_mass)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = x >= self.bound if self.side == "plus" else x < self.bound
        if self.kind == "exponential":
            dist = np.abs(x - self.bound)
            values = self.rate * np.exp(-self.rate * dist)
        else:
            z = self._z(x)
            values = np.exp(-0.5 * z * z - self._log_tail_mass) / (self.scale * math.sqrt(2.0 * math.pi))
        return np.where(inside, values, 0.0)

    def cdf(self, x):
        """Conditional CDF, 0 below and 1 above the side's support"""
        x = np.asarray(x, dtype=float)
        if self.side == "plus":
            if self.kind == "exponential":
                values = -np.expm1(-self.rate * np.maximum(x - self.bound, 0.0))
            else:
                values = -np.expm1(special.log_ndtr(-self._z(np.maximum(x, self.bound))) - self._log_tail_mass)
            return np.where(x >= self.bound, values, 0.0)
        if self.kind == "exponential":
            values = np.exp(-self.rate * np.maximum(self.bound - x, 0.0))
        else:
            values = np.exp(special.log_ndtr(self._z(np.minimum(x, self.bound))) - self._log_tail_mass)
        return np.where(x < self.bound, np.minimum(values, 1.0), 1.0)

    def sample(self, rng: NormalSource) -> float:
        if self.kind == "exponential":
            u = float(rng.uniform(1)[0])
            step = -math.log1p(-u) / self.rate
            return self.bound + step if self.side == "plus" else self.bound - step
        acceptance = self._tail_mass
        if acceptance >= MIN_ACCEPTANCE:
            while True:
                x = self.center + self.scale * float(rng.standard_normal(1)[0])
                if (x >= self.bound) if self.side == "plus" else (x < self.bound):
                    return x
        u = float(rng.uniform(1)[0])
        if self.side == "plus":
            x = self.center - self.scale * float(special.ndtri(u * acceptance))
            return max(x, self.bound)
        x = self.center + self.scale * float(special.ndtri(u * acceptance))
        return min(x, math.nextafter(self.bound, -math.inf))


class StationaryDist(BaseModel):
    """Renormalized speed measure of an ergodic parameter set"""
    params: ModelParams
    log_n_plus: float = Field(..., description="log of the speed-measure mass on x >= r")
    log_n_minus: float = Field(..., description="log of the speed-measure mass on x < r")
    weight_plus: float = Field(..., ge=0.0, le=1.0)
    law_plus: SideLaw
    law_minus: SideLaw

    @property
    def n_plus(self) -> float:
        return _exp_or_inf(self.log_n_plus)

    @property
    def n_minus(self) -> float:
        return _exp_or_inf(self.log_n_minus)

    @property
    def log_total_mass(self) -> float:
        return float(np.logaddexp(self.log_n_plus, self.log_n_minus))

    @property
    def total_mass(self) -> float:
        return _exp_or_inf(self.log_total_mass)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        values = self.weight_plus * self.law_plus.pdf(x) + (1.0 - self.weight_plus) * self.law_minus.pdf(x)
        return values if values.ndim else float(values)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        values = (1.0 - self.weight_plus) * self.law_minus.cdf(x) + self.weight_plus * self.law_plus.cdf(x)
        return values if values.ndim else float(values)


def _side_law(p: ModelParams, side: str) -> SideLaw:
    a, b, sigma = p.coefficients(side)
    if a > 0:
        return SideLaw(side=side, kind="gaussian", bound=p.r, center=b / a, scale=sigma / math.sqrt(2.0 * a))
    return SideLaw(side=side, kind="exponential", bound=p.r, rate=2.0 * abs(b) / (sigma * sigma))


def stationary_dist(p: ModelParams) -> StationaryDist:
    """Stationary law: two truncated Gaussians (a > 0) or exponentials (a = 0) glued at r"""
    _require_ergodic(p)
    log_n = {side: log_speed_mass(p, side) for side in SIDES}
    log_total = float(np.logaddexp(log_n["plus"], log_n["minus"]))
    return StationaryDist(
        params=p,
        log_n_plus=log_n["plus"],
        log_n_minus=log_n["minus"],
        weight_plus=math.exp(log_n["plus"] - log_total),
        law_plus=_side_law(p, "plus"),
        law_minus=_side_law(p, "minus"),
    )


def sample_stationary(d: StationaryDist, rng: NormalSource, size: Optional[int] = None) -> Union[float, np.ndarray]:
    """Exact draw(s) from the stationary law: pick a side, then sample its conditional law"""
    if size is None:
        u = float(rng.uniform(1)[0])
        law = d.law_plus if u < d.weight_plus else d.law_minus
        return law.sample(rng)
    return np.array([sample_stationary(d, rng) for _ in range(size)])


def qbar_constants(p: ModelParams) -> Dict[str, List[float]]:
    """Qbar^{side,i}: long-run time averages of X^i 1{side}, i = 0, 1, 2"""
    _require_ergodic(p)
    log_total = float(np.logaddexp(log_speed_mass(p, "plus"), log_speed_mass(p, "minus")))
    return {side: list(_side_qbar(p, side, log_total)) for side in SIDES}


def gamma_matrix(q: List[float]) -> np.ndarray:
    """[[Q2, -Q1], [-Q1, Q0]] from the three occupation moments of one side"""
    q0, q1, q2 = q
    return np.array([[q2, -q1], [-q1, q0]])


def gamma_theoretical(p: ModelParams) -> AsymptoticConstants:
    """Gamma+-, the block Fisher matrix and the per-side CLT covariances"""
    qbar = qbar_constants(p)
    gammas = {side: gamma_matrix(qbar[side]) for side in SIDES}
    fisher = np.zeros((4, 4))
    clt = {}
    for k, side in enumerate(SIDES):
        _, _, sigma = p.coefficients(side)
        fisher[2 * k:2 * k + 2, 2 * k:2 * k + 2] = gammas[side] / sigma ** 2
        q0 = qbar[side][0]
        if q0 <= 0.0 or np.linalg.det(gammas[side]) <= 0.0:
            raise SingularCovarianceError(f"Gamma on the {side} side is singular (stationary weight {q0:.3g})")
        clt[side] = sigma ** 2 * np.linalg.inv(gammas[side])
    return AsymptoticConstants(
        qbar=qbar,
        gamma_plus=gammas["plus"].tolist(),
        gamma_minus=gammas["minus"].tolist(),
        fisher=fisher.tolist(),
        clt_cov_plus=clt["plus"].tolist(),
        clt_cov_minus=clt["minus"].tolist(),
    )


def local_maxima(d: StationaryDist, n_grid: int = 4001, span: float = 6.0) -> List[float]:
    """Strict local maxima of the stationary density on a grid covering both side laws"""
    lo, hi = _support_window(d, span)
    grid = np.linspace(lo, hi, n_grid)
    values = np.asarray(d.density(grid))
    interior = (values[1:-1] > values[:-2]) & (values[1:-1] > values[2:])
    return grid[1:-1][interior].tolist()


def _support_window(d: StationaryDist, span: float) -> Tuple[float, float]:
    ends = []
    for law in (d.law_plus, d.law_minus):
        if law.kind == "gaussian":
            ends += [law.center - span * law.scale, law.center + span * law.scale]
        else:
            ends += [law.bound - span / law.rate, law.bound + span / law.rate]
    ends.append(d.params.r)
    return min(ends), max(ends)
