"""
Threshold OU - Numerics
Special functions, half-line quadrature and the reproducible random streams
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np
from scipy import integrate, special

from threshold_ou.core.config import get_quadrature_config
from threshold_ou.core.exceptions import InvalidInputError, QuadratureError

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)


class NormalSource(Protocol):
    """Anything able to hand out standard normal and uniform variates"""

    def standard_normal(self, size: int) -> np.ndarray: ...

    def uniform(self, size: int) -> np.ndarray: ...


@dataclass
class RngStream:
    """
    One reproducible random stream per Monte Carlo trajectory.

    Streams come from numpy's PCG64 generator seeded with
    ``SeedSequence(seed, spawn_key=(stream_index,))``, which is exactly the
    ``stream_index``-th child of ``SeedSequence(seed).spawn``. Children of one
    seed are statistically independent; equal (seed, stream_index) pairs give
    bitwise-equal variates. Normals use numpy's ziggurat transform, so chunked
    draws concatenate to the same sequence as one large draw.
    """
    seed: int
    stream_index: int = 0
    _generator: Optional[np.random.Generator] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.stream_index < 0:
            raise InvalidInputError(f"stream_index must be non-negative, got {self.stream_index}")

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_index,))
            self._generator = np.random.Generator(np.random.PCG64(sequence))
        return self._generator

    def standard_normal(self, size: int) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, size: int) -> np.ndarray:
        return self.generator.random(size)


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances for adaptive half-line quadrature"""
    abs_tol: float = 1e-10
    max_subdivisions: int = 200
    rel_tol: float = 0.0

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise InvalidInputError(f"abs_tol must be positive, got {self.abs_tol}")
        if self.max_subdivisions < 1:
            raise InvalidInputError("max_subdivisions must be at least 1")
        if self.rel_tol < 0:
            raise InvalidInputError("rel_tol must be non-negative")

    @classmethod
    def from_settings(cls) -> "QuadratureSpec":
        """Tolerances from THRESHOLD_OU_QUAD_* settings"""
        return cls(**get_quadrature_config())


def erfc(x: float) -> float:
    """Complementary error function; saturates to 0 and 2 in the tails"""
    return float(special.erfc(x))


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF through erfc"""
    return 0.5 * erfc(-x / SQRT2)


def _chi2_cdf(q: float, dof: int) -> float:
    return float(special.gammainc(0.5 * dof, 0.5 * q))


def _chi2_pdf(q: float, dof: int) -> float:
    if q <= 0.0:
        return 0.0
    k = 0.5 * dof
    log_pdf = (k - 1.0) * math.log(q) - 0.5 * q - k * math.log(2.0) - special.gammaln(k)
    return math.exp(log_pdf)


def chi2_quantile(p: float, dof: int, tol: float = 1e-12, max_iter: int = 200) -> float:
    """
    Quantile of the chi-square law with ``dof`` degrees of freedom.

    Safeguarded Newton iteration on the regularized lower incomplete gamma
    function: Newton steps that leave the current bracket fall back to
    bisection, so the iteration always converges.
    """
    if not 0.0 < p < 1.0:
        raise InvalidInputError(f"p must lie in (0, 1), got {p}")
    if int(dof) != dof or dof < 1:
        raise InvalidInputError(f"dof must be a positive integer, got {dof}")
    dof = int(dof)

    lo, hi = 0.0, float(max(dof, 1))
    while _chi2_cdf(hi, dof) < p:
        lo, hi = hi, 2.0 * hi

    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        residual = _chi2_cdf(x, dof) - p
        if residual == 0.0:
            return x
        if residual < 0.0:
            lo = x
        else:
            hi = x
        density = _chi2_pdf(x, dof)
        candidate = x - residual / density if density > 0.0 else lo - 1.0
        if not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)
        if abs(candidate - x) <= tol * max(1.0, x):
            return candidate
        x = candidate
    logger.debug(f"chi2_quantile reached max_iter for p={p}, dof={dof}")
    return x


def integrate_halfline(
    f: Callable[[float], float],
    side: str,
    origin: float,
    spec: Optional[QuadratureSpec] = None,
) -> float:
    """
    Integrate ``f`` over [origin, +inf) (side "plus") or (-inf, origin) (side "minus").

    QUADPACK maps the half-line onto (0, 1] and applies adaptive Gauss-Kronrod
    rules; the call fails if the error estimate stays above the tolerance.
    """
    spec = spec or QuadratureSpec.from_settings()
    if side == "plus":
        bounds = (origin, np.inf)
    elif side == "minus":
        bounds = (-np.inf, origin)
    else:
        raise InvalidInputError(f"side must be 'plus' or 'minus', got {side!r}")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, abserr = integrate.quad(
            f, bounds[0], bounds[1],
            epsabs=spec.abs_tol, epsrel=spec.rel_tol, limit=spec.max_subdivisions,
        )

    allowed = max(spec.abs_tol, spec.rel_tol * abs(value))
    if not math.isfinite(value) or abserr > allowed:
        raise QuadratureError(
            f"Half-line quadrature on the {side} side missed tolerance {allowed:.2e} "
            f"(error estimate {abserr:.2e}, {spec.max_subdivisions} subdivisions)"
        )
    return float(value)
